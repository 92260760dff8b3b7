//! Teacher composition: audio score plus mean-centered lexical score per
//! task, a pure function of the two models and the dataset.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, Task};
use crate::{par, Error, Result};

use super::scorer::Scorer;
use super::FeatureStore;

/// Where a teacher file came from and the exact centering applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherProvenance {
    pub audio_model: String,
    pub lexical_model: String,
    pub train_mean_text_dep: f64,
    pub train_mean_text_anx: f64,
}

/// Per-recording teacher scores for both tasks, fixed for student training.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherScores {
    /// recording_id → (depression, anxiety).
    pub by_recording: BTreeMap<String, (f64, f64)>,
    pub provenance: TeacherProvenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TeacherRow {
    recording_id: String,
    task: Task,
    score: f64,
}

/// teacher(x) = s_audio(x) + s_text(x) − mean_train(s_text), per task.
///
/// Scores are produced for every split, but the centering mean is computed
/// over the training split only.
pub fn compose_teacher(
    audio: &Scorer,
    lexical: &Scorer,
    ds: &Dataset,
    store: &FeatureStore,
) -> Result<TeacherScores> {
    let audio_scores = collect_scores(audio, ds, store)?;
    let text_scores = collect_scores(lexical, ds, store)?;

    let train_ids: Vec<String> =
        ds.split_records(Split::Train).iter().map(|r| r.recording_id()).collect();
    if train_ids.is_empty() {
        return Err(Error::invalid("no training recordings to center the text scores on"));
    }
    let mut mean_dep = 0.0;
    let mut mean_anx = 0.0;
    for id in &train_ids {
        let (d, a) = text_scores[id];
        mean_dep += d;
        mean_anx += a;
    }
    mean_dep /= train_ids.len() as f64;
    mean_anx /= train_ids.len() as f64;

    let mut by_recording = BTreeMap::new();
    for rec in &ds.records {
        let id = rec.recording_id();
        let (ad, aa) = audio_scores[&id];
        let (td, ta) = text_scores[&id];
        by_recording.insert(id, (ad + td - mean_dep, aa + ta - mean_anx));
    }
    Ok(TeacherScores {
        by_recording,
        provenance: TeacherProvenance {
            audio_model: format!("{}:{}", audio.kind.name(), audio.cfg.hash_hex()),
            lexical_model: format!("{}:{}", lexical.kind.name(), lexical.cfg.hash_hex()),
            train_mean_text_dep: mean_dep,
            train_mean_text_anx: mean_anx,
        },
    })
}

fn collect_scores(
    scorer: &Scorer,
    ds: &Dataset,
    store: &FeatureStore,
) -> Result<BTreeMap<String, (f64, f64)>> {
    let results = par::map_collect(&ds.records, |rec| {
        scorer.score_recording(ds, store, rec).map(|s| (rec.recording_id(), s))
    });
    let mut map = BTreeMap::new();
    for r in results {
        let (id, s) = r?;
        map.insert(id, s);
    }
    Ok(map)
}

/// Write teacher scores as JSONL, one `{recording_id, task, score}` row per
/// (recording, task), in manifest × task order.
pub fn write_teacher_jsonl(path: &Path, scores: &TeacherScores, ds: &Dataset) -> Result<()> {
    let mut out = String::new();
    for rec in &ds.records {
        let id = rec.recording_id();
        let (d, a) = scores
            .by_recording
            .get(&id)
            .ok_or_else(|| Error::invalid(format!("no teacher score for {id}")))?;
        for (task, score) in [(Task::Depression, d), (Task::Anxiety, a)] {
            let row = TeacherRow { recording_id: id.clone(), task, score: *score };
            out.push_str(&serde_json::to_string(&row)?);
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a teacher JSONL back into a map; rows may cover either or both
/// tasks, and coverage is validated by the consumer.
pub fn read_teacher_jsonl(path: &Path) -> Result<BTreeMap<String, (f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut partial: BTreeMap<String, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: TeacherRow = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: i + 1,
            detail: format!("bad teacher row: {e}"),
        })?;
        if !row.score.is_finite() {
            return Err(Error::Manifest {
                line: i + 1,
                detail: "non-finite teacher score".to_string(),
            });
        }
        let slot = partial.entry(row.recording_id).or_default();
        match row.task {
            Task::Depression => slot.0 = Some(row.score),
            Task::Anxiety => slot.1 = Some(row.score),
        }
    }
    let mut map = BTreeMap::new();
    for (id, (d, a)) in partial {
        match (d, a) {
            (Some(d), Some(a)) => {
                map.insert(id, (d, a));
            }
            _ => {
                return Err(Error::invalid(format!(
                    "teacher file covers only one task for {id}"
                )))
            }
        }
    }
    if map.is_empty() {
        return Err(Error::invalid("teacher file holds no rows"));
    }
    Ok(map)
}
