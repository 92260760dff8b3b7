//! Labeled recordings, JSONL manifests, and speaker-disjoint splits.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{self, SAMPLE_RATE, SEGMENT_SAMPLES};
use crate::error::{Error, Result};
use crate::rng::{self, salt};

/// Screening task; fixes the ordinal label range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Depression,
    Anxiety,
}

impl Task {
    /// Maximum label value (and CORAL threshold count) for the task.
    pub fn max_label(self) -> usize {
        match self {
            Task::Depression => 27,
            Task::Anxiety => 21,
        }
    }

    pub const ALL: [Task; 2] = [Task::Depression, Task::Anxiety];

    pub fn name(self) -> &'static str {
        match self {
            Task::Depression => "depression",
            Task::Anxiety => "anxiety",
        }
    }
}

/// Dataset partition tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// One manifest row: a labeled utterance of a voice.
///
/// Unknown JSON fields (e.g. demographic metadata) are carried through
/// untouched but never interpreted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledRecording {
    pub voice_id: String,
    pub audio_path: String,
    pub phq9: u8,
    pub gad7: u8,
    pub split: Split,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl LabeledRecording {
    pub fn label(&self, task: Task) -> usize {
        match task {
            Task::Depression => self.phq9 as usize,
            Task::Anxiety => self.gad7 as usize,
        }
    }

    /// Identifier of the recording: audio file stem.
    pub fn recording_id(&self) -> String {
        Path::new(&self.audio_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.audio_path.clone())
    }
}

/// Dimension of the lexical sidecar vectors.
pub const LEX_DIM: usize = 16;

/// A validated manifest: recordings plus voice/split indexes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<LabeledRecording>,
    /// Directory that `audio_path` fields are relative to.
    pub root: PathBuf,
}

impl Dataset {
    /// Absolute path of a recording's audio file.
    pub fn audio_path(&self, rec: &LabeledRecording) -> PathBuf {
        self.root.join(&rec.audio_path)
    }

    /// Absolute path of a recording's lexical sidecar (`.lex` next to the wav).
    pub fn lex_path(&self, rec: &LabeledRecording) -> PathBuf {
        self.audio_path(rec).with_extension("lex")
    }

    /// Unique voice ids in first-appearance order.
    pub fn voices(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.voice_id.clone()) {
                out.push(r.voice_id.clone());
            }
        }
        out
    }

    /// Unique voice ids of one split, first-appearance order.
    pub fn voices_of_split(&self, split: Split) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if r.split == split && seen.insert(r.voice_id.clone()) {
                out.push(r.voice_id.clone());
            }
        }
        out
    }

    /// Records of one split, manifest order.
    pub fn split_records(&self, split: Split) -> Vec<&LabeledRecording> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Records of one voice, manifest order.
    pub fn recordings_of_voice(&self, voice_id: &str) -> Vec<&LabeledRecording> {
        self.records.iter().filter(|r| r.voice_id == voice_id).collect()
    }
}

/// Load and fully validate a JSONL manifest.
///
/// The whole file is rejected on the first violation: malformed line, label
/// out of range, split leakage or label inconsistency within a voice, missing
/// audio, or audio shorter than 30 s.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabeledRecording = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest { line: line_no, detail: e.to_string() })?;
        if rec.phq9 > 27 {
            return Err(Error::Manifest {
                line: line_no,
                detail: format!("label out of range: phq9 = {} exceeds 27", rec.phq9),
            });
        }
        if rec.gad7 > 21 {
            return Err(Error::Manifest {
                line: line_no,
                detail: format!("label out of range: gad7 = {} exceeds 21", rec.gad7),
            });
        }
        records.push(rec);
    }
    let ds = Dataset { records, root };

    // Per-voice consistency: identical labels and split for every recording
    // of a voice (split leakage is a special case of this check).
    let mut by_voice: BTreeMap<&str, (&LabeledRecording, usize)> = BTreeMap::new();
    for (i, r) in ds.records.iter().enumerate() {
        match by_voice.get(r.voice_id.as_str()) {
            None => {
                by_voice.insert(&r.voice_id, (r, i + 1));
            }
            Some((first, first_line)) => {
                if first.split != r.split {
                    return Err(Error::Manifest {
                        line: i + 1,
                        detail: format!(
                            "split leakage: voice {} is {} at line {} but {} here",
                            r.voice_id,
                            first.split.name(),
                            first_line,
                            r.split.name()
                        ),
                    });
                }
                if first.phq9 != r.phq9 || first.gad7 != r.gad7 {
                    return Err(Error::Manifest {
                        line: i + 1,
                        detail: format!("voice {} has inconsistent labels", r.voice_id),
                    });
                }
            }
        }
    }

    for (i, r) in ds.records.iter().enumerate() {
        let audio = ds.audio_path(r);
        let n = dsp::wav::wav_len(&audio).map_err(|_| Error::Manifest {
            line: i + 1,
            detail: format!("audio file missing or unreadable: {}", audio.display()),
        })?;
        if n < SEGMENT_SAMPLES {
            return Err(Error::Manifest {
                line: i + 1,
                detail: format!(
                    "audio shorter than 30 s: {} has {:.2} s",
                    audio.display(),
                    n as f64 / SAMPLE_RATE as f64
                ),
            });
        }
    }
    Ok(ds)
}

/// Write a manifest (one JSON object per line).
pub fn write_manifest(path: &Path, records: &[LabeledRecording]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Deterministically assign voices to splits with largest-remainder
/// apportionment; realized counts are within ±1 voice of `ratio × n`.
pub fn split_disjoint(voice_ids: &[String], ratios: [f64; 3], seed: u64) -> Result<Vec<(String, Split)>> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::invalid(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let mut voices: Vec<String> = voice_ids.to_vec();
    voices.sort();
    voices.dedup();
    let n = voices.len();
    let needed = ratios.iter().filter(|&&r| r > 0.0).count();
    if n < needed {
        return Err(Error::invalid(format!("{n} voices cannot fill {needed} splits")));
    }

    // Largest-remainder apportionment of n voices to the three splits.
    let ideal: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|&x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        counts[order[i % 3]] += 1;
    }

    use rand::seq::SliceRandom;
    let mut rng = rng::stream(seed, &[salt::SPLIT]);
    voices.shuffle(&mut rng);

    let mut out = Vec::with_capacity(n);
    let mut cursor = 0;
    for (split, &count) in Split::ALL.iter().zip(&counts) {
        for v in &voices[cursor..cursor + count] {
            out.push((v.clone(), *split));
        }
        cursor += count;
    }
    Ok(out)
}

/// Read a lexical sidecar: LEX_DIM little-endian f32 values, no header.
pub fn read_lex(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != LEX_DIM * 4 {
        return Err(Error::invalid(format!(
            "lexical sidecar {} has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            LEX_DIM * 4
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Write a lexical sidecar.
pub fn write_lex(path: &Path, values: &[f32]) -> Result<()> {
    if values.len() != LEX_DIM {
        return Err(Error::invalid(format!("lexical vector must have {LEX_DIM} dims")));
    }
    let mut bytes = Vec::with_capacity(LEX_DIM * 4);
    for &v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::write_wav;

    fn write_test_wav(dir: &Path, name: &str, secs: usize) -> String {
        let samples = vec![0.1f32; secs * SAMPLE_RATE as usize];
        write_wav(&dir.join(name), &samples).unwrap();
        name.to_string()
    }

    fn record(voice: &str, path: &str, phq9: u8, gad7: u8, split: Split) -> LabeledRecording {
        LabeledRecording {
            voice_id: voice.into(),
            audio_path: path.into(),
            phq9,
            gad7,
            split,
            extra: Default::default(),
        }
    }

    #[test]
    fn loads_a_valid_three_line_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let a1 = write_test_wav(dir.path(), "a1.wav", 30);
        let a2 = write_test_wav(dir.path(), "a2.wav", 31);
        let b1 = write_test_wav(dir.path(), "b1.wav", 35);
        let manifest = dir.path().join("manifest.jsonl");
        write_manifest(
            &manifest,
            &[
                record("A", &a1, 12, 8, Split::Train),
                record("A", &a2, 12, 8, Split::Train),
                record("B", &b1, 3, 2, Split::Test),
            ],
        )
        .unwrap();
        let ds = load_manifest(&manifest).unwrap();
        assert_eq!(ds.records.len(), 3);
        assert_eq!(ds.voices().len(), 2);
        assert_eq!(ds.recordings_of_voice("A").len(), 2);
    }

    #[test]
    fn rejects_label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_test_wav(dir.path(), "a.wav", 30);
        let manifest = dir.path().join("m.jsonl");
        write_manifest(&manifest, &[record("A", &a, 28, 0, Split::Train)]).unwrap();
        let err = load_manifest(&manifest).unwrap_err().to_string();
        assert!(err.contains("label out of range"), "{err}");
    }

    #[test]
    fn rejects_split_leakage() {
        let dir = tempfile::tempdir().unwrap();
        let a1 = write_test_wav(dir.path(), "a1.wav", 30);
        let a2 = write_test_wav(dir.path(), "a2.wav", 30);
        let manifest = dir.path().join("m.jsonl");
        write_manifest(
            &manifest,
            &[record("A", &a1, 5, 5, Split::Train), record("A", &a2, 5, 5, Split::Test)],
        )
        .unwrap();
        let err = load_manifest(&manifest).unwrap_err().to_string();
        assert!(err.contains("split leakage"), "{err}");
    }

    #[test]
    fn rejects_short_audio() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_test_wav(dir.path(), "a.wav", 29);
        let manifest = dir.path().join("m.jsonl");
        write_manifest(&manifest, &[record("A", &a, 5, 5, Split::Train)]).unwrap();
        let err = load_manifest(&manifest).unwrap_err().to_string();
        assert!(err.contains("shorter than 30 s"), "{err}");
    }

    #[test]
    fn rejects_malformed_line_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.jsonl");
        std::fs::write(&manifest, "{\"voice_id\": \"A\"\n").unwrap();
        let err = load_manifest(&manifest).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn split_apportionment_and_determinism() {
        let voices: Vec<String> = (0..10).map(|i| format!("v{i:02}")).collect();
        let a = split_disjoint(&voices, [0.8, 0.1, 0.1], 7).unwrap();
        let count = |s: Split| a.iter().filter(|(_, sp)| *sp == s).count();
        assert_eq!(count(Split::Train), 8);
        assert_eq!(count(Split::Validation), 1);
        assert_eq!(count(Split::Test), 1);
        let b = split_disjoint(&voices, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(a, b);
        let c = split_disjoint(&voices, [0.8, 0.1, 0.1], 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_too_few_voices() {
        let voices: Vec<String> = vec!["a".into(), "b".into()];
        assert!(split_disjoint(&voices, [0.4, 0.3, 0.3], 1).is_err());
    }

    #[test]
    fn lex_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.lex");
        let v: Vec<f32> = (0..LEX_DIM).map(|i| i as f32 * 0.5 - 3.0).collect();
        write_lex(&p, &v).unwrap();
        assert_eq!(read_lex(&p).unwrap(), v);
    }
}
