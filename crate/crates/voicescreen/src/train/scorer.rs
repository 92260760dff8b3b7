//! Eval-mode scoring: per-segment forwards pooled into recording scores,
//! split-level score sets, and the validation summary used for epoch
//! selection.

use std::path::Path;

use crate::data::{Dataset, LabeledRecording, Split, Task};
use crate::dsp::{log_mel, segment_30s, FeatureMatrix, MelParams, Waveform, SEGMENT_SAMPLES};
use crate::metrics::{task_aggregate, ScoreRow};
use crate::nn::{
    audio_forward, feature_leaf, fused_forward, lexical_forward, lexical_leaf, llma_forward,
    register_params, BoundParams, CheckpointData, Mode, ModelConfig, ModelKind, ParamSet, Tape,
};
use crate::{par, Error, Result};

use super::{segment_count, segment_features, FeatureStore};

/// A loaded model ready for deterministic eval-mode scoring.
pub struct Scorer {
    pub kind: ModelKind,
    pub cfg: ModelConfig,
    pub params: ParamSet<f32>,
}

impl Scorer {
    pub fn new(kind: ModelKind, cfg: ModelConfig, params: ParamSet<f32>) -> Self {
        Scorer { kind, cfg, params }
    }

    pub fn from_checkpoint(data: CheckpointData) -> Self {
        Scorer { kind: data.kind, cfg: data.config, params: data.params }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_checkpoint(crate::nn::load_checkpoint(path)?))
    }

    /// Scores of one already-extracted 30 s feature window.
    pub fn score_segment(&self, feats: &FeatureMatrix) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &self.params);
        let bound = BoundParams::new(&self.params, &ids);
        let leaf = feature_leaf(&mut tape, feats, &self.cfg);
        let out = match self.kind {
            ModelKind::Audio => audio_forward(&mut tape, &bound, &self.cfg, leaf, Mode::Eval),
            ModelKind::Fused => fused_forward(&mut tape, &bound, &self.cfg, leaf, Mode::Eval),
            ModelKind::Lexical | ModelKind::LlmaEncoder => {
                return Err(Error::invalid(format!(
                    "{} models do not score audio segments",
                    self.kind.name()
                )))
            }
        };
        Ok((
            tape.value(out.score_dep).item() as f64,
            tape.value(out.score_anx).item() as f64,
        ))
    }

    /// Scores of a lexical sidecar vector.
    pub fn score_lexical(&self, lex: &[f32]) -> Result<(f64, f64)> {
        if self.kind != ModelKind::Lexical {
            return Err(Error::invalid(format!(
                "{} models do not score lexical vectors",
                self.kind.name()
            )));
        }
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &self.params);
        let bound = BoundParams::new(&self.params, &ids);
        let leaf = lexical_leaf(&mut tape, lex);
        let out = lexical_forward(&mut tape, &bound, &self.cfg, leaf, Mode::Eval);
        Ok((
            tape.value(out.score_dep).item() as f64,
            tape.value(out.score_anx).item() as f64,
        ))
    }

    /// Trunk embedding of a lexical sidecar vector (the teacher side of
    /// embedding matching).
    pub fn lexical_embedding(&self, lex: &[f32]) -> Result<Vec<f32>> {
        if self.kind != ModelKind::Lexical {
            return Err(Error::invalid("embeddings come from the lexical model"));
        }
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &self.params);
        let bound = BoundParams::new(&self.params, &ids);
        let leaf = lexical_leaf(&mut tape, lex);
        let out = lexical_forward(&mut tape, &bound, &self.cfg, leaf, Mode::Eval);
        Ok(tape.value(out.embedding).data.iter().map(|&x| x as f32).collect())
    }

    /// Pooled embedding of one 30 s feature window from the dedicated
    /// embedding-matching encoder.
    pub fn llma_embedding(&self, feats: &FeatureMatrix) -> Result<Vec<f32>> {
        if self.kind != ModelKind::LlmaEncoder {
            return Err(Error::invalid("pooled embeddings come from the embedding encoder"));
        }
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &self.params);
        let bound = BoundParams::new(&self.params, &ids);
        let leaf = feature_leaf(&mut tape, feats, &self.cfg);
        let pooled = llma_forward(&mut tape, &bound, &self.cfg, leaf, Mode::Eval);
        Ok(tape.value(pooled).data.iter().map(|&x| x as f32).collect())
    }

    /// Score one recording through the feature cache: mean of per-segment
    /// scores for audio models, sidecar scores for the lexical model.
    pub fn score_recording(
        &self,
        ds: &Dataset,
        store: &FeatureStore,
        rec: &LabeledRecording,
    ) -> Result<(f64, f64)> {
        match self.kind {
            ModelKind::Lexical => {
                let lex = crate::data::read_lex(&ds.lex_path(rec))?;
                self.score_lexical(&lex)
            }
            ModelKind::Audio | ModelKind::Fused => {
                let fm = store.recording_features(ds, rec)?;
                let n = segment_count(&fm);
                let mut dep = 0.0;
                let mut anx = 0.0;
                for i in 0..n {
                    let (d, a) = self.score_segment(&segment_features(&fm, i))?;
                    dep += d;
                    anx += a;
                }
                Ok((dep / n as f64, anx / n as f64))
            }
            ModelKind::LlmaEncoder => {
                Err(Error::invalid("the embedding encoder produces no scores"))
            }
        }
    }
}

/// Score a raw waveform: segment into 30 s windows (final one zero-padded),
/// forward each in eval mode, return the arithmetic mean per task. Inputs
/// under 30 s are rejected.
pub fn infer_recording(scorer: &Scorer, samples: &[f32]) -> Result<(f64, f64)> {
    if samples.len() < SEGMENT_SAMPLES {
        return Err(Error::invalid(format!(
            "waveform shorter than 30 s ({} samples)",
            samples.len()
        )));
    }
    let set = segment_30s(&Waveform::new(samples.to_vec()))?;
    let mut dep = 0.0;
    let mut anx = 0.0;
    for seg in &set.segments {
        let fm = log_mel(&Waveform::new(seg.clone()), &MelParams::default())?;
        let (d, a) = scorer.score_segment(&fm)?;
        dep += d;
        anx += a;
    }
    let n = set.segments.len() as f64;
    Ok((dep / n, anx / n))
}

/// Score every recording of a split, in manifest order, in parallel.
pub fn score_split(
    scorer: &Scorer,
    ds: &Dataset,
    store: &FeatureStore,
    split: Split,
) -> Result<Vec<ScoreRow>> {
    let recs = ds.split_records(split);
    if recs.is_empty() {
        return Err(Error::invalid(format!("no recordings in the {} split", split.name())));
    }
    let rows = par::map_collect(&recs, |rec| -> Result<ScoreRow> {
        let (score_dep, score_anx) = scorer.score_recording(ds, store, rec)?;
        Ok(ScoreRow {
            recording_id: rec.recording_id(),
            voice_id: rec.voice_id.clone(),
            score_dep,
            score_anx,
            phq9: rec.phq9,
            gad7: rec.gad7,
        })
    });
    rows.into_iter().collect()
}

/// Aggregate Sn=Sp (percent) of a score set for one task; `None` when every
/// cutoff was single-class.
pub fn split_sn_sp(rows: &[ScoreRow], task: Task) -> Option<f64> {
    task_aggregate(rows, task).ok().and_then(|t| t.mean_sn_eq_sp)
}

/// Write a score set as JSONL, one row per recording in input order.
pub fn write_score_jsonl(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a score set written by [`write_score_jsonl`].
pub fn read_score_jsonl(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ScoreRow = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: i + 1,
            detail: format!("bad score row: {e}"),
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid("score file holds no rows"));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{read_wav, SAMPLE_RATE};
    use crate::nn::init_audio;
    use crate::synth::{generate_corpus, CorpusConfig};

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            enc_dims: vec![16],
            lora_rank: 4,
            lex_dims: vec![12, 8],
            trunk_hidden: 20,
            embed_dim: 10,
            head_hidden: 12,
            ..ModelConfig::default()
        }
    }

    fn tiny_corpus(dir: &Path) -> Dataset {
        let cfg = CorpusConfig {
            n_voices: 3,
            duration_range: [31.0, 45.0],
            master_seed: 21,
            split_ratios: [1.0, 0.0, 0.0],
            ..CorpusConfig::default()
        };
        let manifest = generate_corpus(&cfg, dir).unwrap();
        crate::data::load_manifest(&manifest).unwrap()
    }

    #[test]
    fn recording_scores_are_exact_segment_means() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_corpus(dir.path());
        let store = FeatureStore::new(&ds).unwrap();
        let cfg = small_cfg();
        let scorer = Scorer::new(ModelKind::Audio, cfg.clone(), init_audio(&cfg, 3));
        let rec = &ds.records[0];
        let fm = store.recording_features(&ds, rec).unwrap();
        let n = segment_count(&fm);
        let mut dep = Vec::new();
        for i in 0..n {
            dep.push(scorer.score_segment(&segment_features(&fm, i)).unwrap().0);
        }
        let (got_dep, _) = scorer.score_recording(&ds, &store, rec).unwrap();
        let want = dep.iter().sum::<f64>() / n as f64;
        assert!((got_dep - want).abs() < 1e-12);
    }

    #[test]
    fn waveform_inference_matches_cached_path_and_padding_is_equivalent() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_corpus(dir.path());
        let store = FeatureStore::new(&ds).unwrap();
        let cfg = small_cfg();
        let scorer = Scorer::new(ModelKind::Audio, cfg.clone(), init_audio(&cfg, 4));
        let rec = &ds.records[1];
        let samples = read_wav(&ds.audio_path(rec)).unwrap().samples;
        let direct = infer_recording(&scorer, &samples).unwrap();
        let cached = scorer.score_recording(&ds, &store, rec).unwrap();
        assert!((direct.0 - cached.0).abs() < 1e-9, "{direct:?} vs {cached:?}");
        assert!((direct.1 - cached.1).abs() < 1e-9);

        // Manual zero-padding to the next segment boundary changes nothing.
        let mut padded = samples.clone();
        padded.resize(padded.len().div_ceil(SEGMENT_SAMPLES) * SEGMENT_SAMPLES, 0.0);
        let via_pad = infer_recording(&scorer, &padded).unwrap();
        assert_eq!(direct, via_pad);

        // Too-short input is rejected.
        let short = vec![0.0f32; 29 * SAMPLE_RATE as usize];
        assert!(infer_recording(&scorer, &short).is_err());
    }

    #[test]
    fn score_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ScoreRow {
                recording_id: "a".into(),
                voice_id: "v1".into(),
                score_dep: 0.25,
                score_anx: -1.5,
                phq9: 11,
                gad7: 4,
            },
            ScoreRow {
                recording_id: "b".into(),
                voice_id: "v2".into(),
                score_dep: 2.0,
                score_anx: 0.125,
                phq9: 3,
                gad7: 15,
            },
        ];
        let path = dir.path().join("scores.jsonl");
        write_score_jsonl(&path, &rows).unwrap();
        assert_eq!(read_score_jsonl(&path).unwrap(), rows);
        // Writing twice is byte-identical.
        let bytes1 = std::fs::read(&path).unwrap();
        write_score_jsonl(&path, &rows).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }
}
