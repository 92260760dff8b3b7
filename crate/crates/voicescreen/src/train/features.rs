//! Cached log-mel features for voices and recordings.
//!
//! Two cache units exist because training and inference slice differently:
//!
//! * **Voice features**: log-mel of a voice's recordings concatenated in
//!   manifest order, unpadded. Training clips are row slices of this matrix;
//!   a clip starting at hop-aligned sample `S` occupies rows
//!   `[S/hop, S/hop + frames_per_segment)`, and the values are identical to
//!   extracting the clip's samples alone because every analysis window lies
//!   inside the concatenation.
//! * **Recording features**: log-mel of one recording zero-padded to a whole
//!   number of 30 s segments. Segment `i` is rows
//!   `[i·(frames_per_segment + 2), …)`, identical to featurizing the padded
//!   segment alone.
//!
//! Matrices are memoized in RAM and persisted under `<corpus>/cache/` so
//! repeated runs skip extraction. Files are written via a temp-file rename,
//! safe under concurrent runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::data::{Dataset, LabeledRecording};
use crate::dsp::{
    log_mel, read_fbank, read_wav, write_fbank, FeatureMatrix, MelParams, Waveform,
    FRAMES_PER_SEGMENT, HOP, SEGMENT_SAMPLES,
};
use crate::{par, Error, Result};

/// Rows from one segment boundary to the next in a padded recording matrix.
const ROWS_PER_SEGMENT: usize = FRAMES_PER_SEGMENT + 2;

/// Disk- and RAM-cached feature access for one corpus.
pub struct FeatureStore {
    cache_dir: PathBuf,
    voices: Mutex<BTreeMap<String, Arc<FeatureMatrix>>>,
    recordings: Mutex<BTreeMap<String, Arc<FeatureMatrix>>>,
}

impl FeatureStore {
    /// Create a store rooted at the dataset's `cache/` directory.
    pub fn new(ds: &Dataset) -> Result<Self> {
        let cache_dir = ds.root.join("cache");
        std::fs::create_dir_all(&cache_dir).map_err(|e| Error::io(&cache_dir, e))?;
        Ok(FeatureStore {
            cache_dir,
            voices: Mutex::new(BTreeMap::new()),
            recordings: Mutex::new(BTreeMap::new()),
        })
    }

    /// Features of a voice's concatenated audio (unpadded).
    pub fn voice_features(&self, ds: &Dataset, voice_id: &str) -> Result<Arc<FeatureMatrix>> {
        if let Some(hit) = self.voices.lock().unwrap().get(voice_id) {
            return Ok(hit.clone());
        }
        let file = self.cache_dir.join(format!("voice_{voice_id}.fbank"));
        let fm = match read_fbank(&file) {
            Ok(fm) => fm,
            Err(_) => {
                let recs = ds.recordings_of_voice(voice_id);
                if recs.is_empty() {
                    return Err(Error::invalid(format!("unknown voice {voice_id}")));
                }
                let mut samples = Vec::new();
                for rec in recs {
                    samples.extend(read_wav(&ds.audio_path(rec))?.samples);
                }
                let fm = log_mel(&Waveform::new(samples), &MelParams::default())?;
                write_atomic(&self.cache_dir, &file, &fm)?;
                fm
            }
        };
        let arc = Arc::new(fm);
        self.voices.lock().unwrap().insert(voice_id.to_string(), arc.clone());
        Ok(arc)
    }

    /// Features of one recording, zero-padded to whole 30 s segments.
    pub fn recording_features(
        &self,
        ds: &Dataset,
        rec: &LabeledRecording,
    ) -> Result<Arc<FeatureMatrix>> {
        let id = rec.recording_id();
        if let Some(hit) = self.recordings.lock().unwrap().get(&id) {
            return Ok(hit.clone());
        }
        let file = self.cache_dir.join(format!("rec_{id}.fbank"));
        let fm = match read_fbank(&file) {
            Ok(fm) => fm,
            Err(_) => {
                let mut samples = read_wav(&ds.audio_path(rec))?.samples;
                let padded = samples.len().div_ceil(SEGMENT_SAMPLES) * SEGMENT_SAMPLES;
                samples.resize(padded, 0.0);
                let fm = log_mel(&Waveform::new(samples), &MelParams::default())?;
                write_atomic(&self.cache_dir, &file, &fm)?;
                fm
            }
        };
        let arc = Arc::new(fm);
        self.recordings.lock().unwrap().insert(id, arc.clone());
        Ok(arc)
    }

    /// Extract every voice and recording matrix of the corpus in parallel,
    /// so later commands hit the disk cache. Returns the number of matrices.
    pub fn populate(&self, ds: &Dataset) -> Result<usize> {
        let voices = ds.voices();
        let voice_results = par::map_collect(&voices, |v| self.voice_features(ds, v).map(|_| ()));
        for r in voice_results {
            r?;
        }
        let rec_results =
            par::map_collect(&ds.records, |r| self.recording_features(ds, r).map(|_| ()));
        for r in rec_results {
            r?;
        }
        Ok(voices.len() + ds.records.len())
    }
}

fn write_atomic(dir: &Path, dest: &Path, fm: &FeatureMatrix) -> Result<()> {
    let tmp = dir.join(format!(
        ".tmp_{}_{}",
        std::process::id(),
        dest.file_name().unwrap_or_default().to_string_lossy()
    ));
    write_fbank(&tmp, fm)?;
    std::fs::rename(&tmp, dest).map_err(|e| Error::io(dest, e))
}

/// One training clip's rows out of a voice matrix. `start_sample` must be
/// hop-aligned and leave a full 30 s inside the concatenation.
pub fn clip_features(voice: &FeatureMatrix, start_sample: usize) -> FeatureMatrix {
    assert_eq!(start_sample % HOP, 0, "clip starts must be hop-aligned");
    voice.slice_rows(start_sample / HOP, FRAMES_PER_SEGMENT)
}

/// Number of 30 s segments in a padded recording matrix. A matrix of `k`
/// segments has `k·rows_per_segment − 2` frames: the final two hop positions
/// have no full analysis window.
pub fn segment_count(rec: &FeatureMatrix) -> usize {
    debug_assert_eq!((rec.frames + 2) % ROWS_PER_SEGMENT, 0);
    (rec.frames + 2) / ROWS_PER_SEGMENT
}

/// Segment `i`'s rows out of a padded recording matrix.
pub fn segment_features(rec: &FeatureMatrix, i: usize) -> FeatureMatrix {
    rec.slice_rows(i * ROWS_PER_SEGMENT, FRAMES_PER_SEGMENT)
}
