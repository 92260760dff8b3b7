//! Score distillation: a student initialized from the supervised audio
//! checkpoint matches fixed teacher scores on paired clips. Labels never
//! enter the objective — only evaluation reads them.

use std::collections::BTreeMap;

use crate::data::{Dataset, Split};
use crate::nn::{audio_forward, load_checkpoint, ModelKind};
use crate::{Error, Result};

use super::engine::run_pair_training;
use super::teacher::read_teacher_jsonl;
use super::{FeatureStore, TrainOutcome, TrainRunConfig, TrainStage};

/// Per-voice targets: the mean of a voice's per-recording teacher scores.
/// Errors if any training recording lacks teacher coverage.
pub fn voice_mean_targets(
    ds: &Dataset,
    teacher: &BTreeMap<String, (f64, f64)>,
) -> Result<BTreeMap<String, (f64, f64)>> {
    let mut targets = BTreeMap::new();
    for voice in ds.voices_of_split(Split::Train) {
        let recs = ds.recordings_of_voice(&voice);
        let mut dep = 0.0;
        let mut anx = 0.0;
        for rec in &recs {
            let id = rec.recording_id();
            let (d, a) = teacher.get(&id).ok_or_else(|| {
                Error::invalid(format!("teacher scores missing recording {id}"))
            })?;
            dep += d;
            anx += a;
        }
        targets.insert(voice, (dep / recs.len() as f64, anx / recs.len() as f64));
    }
    Ok(targets)
}

/// Train the student. Initialization comes from `init_checkpoint` (a trained
/// audio model); teacher scores come from `teacher_scores` (JSONL).
pub fn distill_student(
    cfg: &TrainRunConfig,
    ds: &Dataset,
    store: &FeatureStore,
) -> Result<TrainOutcome> {
    if cfg.stage != TrainStage::KdStudent {
        return Err(Error::invalid("distill_student expects the kd_student stage"));
    }
    cfg.validate()?;
    let init = load_checkpoint(cfg.init_checkpoint.as_ref().expect("validated"))?;
    if init.kind != ModelKind::Audio {
        return Err(Error::invalid(format!(
            "student initialization must be an audio checkpoint, got {}",
            init.kind.name()
        )));
    }
    let teacher = read_teacher_jsonl(cfg.teacher_scores.as_ref().expect("validated"))?;
    let targets = voice_mean_targets(ds, &teacher)?;
    run_pair_training(
        cfg,
        ds,
        store,
        init.params,
        ModelKind::Audio,
        init.config,
        cfg.effective_weights(),
        Some(&targets),
        audio_forward::<f32>,
    )
}
