//! The shared training loop: deterministic pair-batch epochs, voice-sharded
//! gradients with ordered accumulation, divergence handling, per-epoch
//! checkpoints, and best-epoch selection.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::losses::{distill_voice_loss, supervised_voice_loss, BatchDenominators, LossWeights};
use crate::nn::{
    feature_leaf, register_params, save_checkpoint, AdamW, BoundParams, CheckpointData,
    ForwardOut, Mat, Mode, ModelConfig, ModelKind, NodeId, ParamSet, Tape,
};
use crate::rng::{mix, salt};
use crate::{par, Error, Result};

use super::batch::{epoch_pair_batches, PairEntry};
use super::scorer::{score_split, split_sn_sp, Scorer};
use super::{clip_features, EpochRecord, FeatureStore, TrainRunConfig, TrainStage};

/// A full scoring forward pass, monomorphized to training precision.
pub(crate) type ForwardFn =
    fn(&mut Tape<f32>, &BoundParams<f32>, &ModelConfig, NodeId, Mode) -> ForwardOut;

/// Result of a completed (or divergence-aborted) training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
    pub diverged: bool,
    /// Embedding stage only: train-split distance before the first step.
    pub init_embed_dist: Option<f64>,
    /// Embedding stage only: train-split distance of the selected epoch.
    pub final_embed_dist: Option<f64>,
}

/// Run-level summary persisted as `summary.json` in the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub stage: TrainStage,
    pub best_epoch: usize,
    pub best_checkpoint: String,
    pub epochs_completed: usize,
    pub diverged: bool,
    pub init_embed_dist: Option<f64>,
    pub final_embed_dist: Option<f64>,
}

/// Epoch log created fresh for each run.
pub(crate) struct RunLog {
    out_dir: PathBuf,
    epochs: std::fs::File,
}

impl RunLog {
    pub(crate) fn new(out_dir: &std::path::Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join("epochs.jsonl");
        let epochs = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunLog { out_dir: out_dir.to_path_buf(), epochs })
    }

    pub(crate) fn append(&mut self, record: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.epochs, "{line}")
            .map_err(|e| Error::io(&self.out_dir.join("epochs.jsonl"), e))
    }

    pub(crate) fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.out_dir.join(format!("epoch_{epoch:03}.ckpt"))
    }
}

/// Merge one voice's gradients into the batch accumulator, in call order.
pub(crate) fn accumulate(acc: &mut [Option<Mat<f32>>], part: Vec<Option<Mat<f32>>>) {
    for (slot, g) in acc.iter_mut().zip(part) {
        if let Some(g) = g {
            match slot {
                Some(a) => a.add_assign(&g),
                None => *slot = Some(g),
            }
        }
    }
}

/// Highest validation depression Sn=Sp; ties go to the earliest epoch.
/// Records without the metric rank below every record that has it.
pub(crate) fn select_best_by_depression(records: &[EpochRecord]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, r) in records.iter().enumerate() {
        let v = r.val_dep_sn_sp.unwrap_or(f64::NEG_INFINITY);
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

/// Lowest validation embedding distance; ties go to the earliest epoch.
pub(crate) fn select_best_by_embed_dist(records: &[EpochRecord]) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, r) in records.iter().enumerate() {
        let v = r.val_embed_dist.unwrap_or(f64::INFINITY);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

/// Copy the winning checkpoint to `best.ckpt` and write `summary.json`.
pub(crate) fn finalize(
    cfg: &TrainRunConfig,
    log: &RunLog,
    records: Vec<EpochRecord>,
    best_epoch_index: usize,
    diverged: bool,
    init_embed_dist: Option<f64>,
    final_embed_dist: Option<f64>,
) -> Result<TrainOutcome> {
    let best_record = &records[best_epoch_index];
    let best_src = cfg.out_dir.join(&best_record.checkpoint);
    let best_dst = cfg.out_dir.join("best.ckpt");
    std::fs::copy(&best_src, &best_dst).map_err(|e| Error::io(&best_dst, e))?;
    let summary = TrainSummary {
        stage: cfg.stage,
        best_epoch: best_record.epoch,
        best_checkpoint: "best.ckpt".to_string(),
        epochs_completed: records.len(),
        diverged,
        init_embed_dist,
        final_embed_dist,
    };
    let path = log.out_dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(TrainOutcome {
        best_epoch: best_record.epoch,
        best_checkpoint: best_dst,
        records,
        diverged,
        init_embed_dist,
        final_embed_dist,
    })
}

/// One voice's loss value and parameter gradients for a paired-clip entry.
#[allow(clippy::too_many_arguments)]
fn voice_pair_grads(
    ds: &Dataset,
    store: &FeatureStore,
    model_cfg: &ModelConfig,
    params: &ParamSet<f32>,
    entry: &PairEntry,
    weights: LossWeights,
    target: Option<(f64, f64)>,
    denoms: BatchDenominators,
    forward: ForwardFn,
    run_seed: u64,
    epoch: usize,
) -> Result<(f64, Vec<Option<Mat<f32>>>)> {
    let feats = store.voice_features(ds, &entry.voice_id)?;
    let mut tape = Tape::new();
    let ids = register_params(&mut tape, params);
    let bound = BoundParams::new(params, &ids);
    let mut outs = Vec::with_capacity(2);
    for (clip, start) in [(0u64, entry.start_a), (1, entry.start_b)] {
        let cf = clip_features(&feats, start);
        let leaf = feature_leaf(&mut tape, &cf, model_cfg);
        let dropout_seed = mix(&[
            run_seed,
            salt::DROPOUT,
            epoch as u64,
            entry.voice_index as u64,
            clip,
        ]);
        outs.push(forward(&mut tape, &bound, model_cfg, leaf, Mode::Train { dropout_seed }));
    }
    let root = match target {
        None => supervised_voice_loss(
            &mut tape, &bound, &outs, entry.phq9, entry.gad7, weights, denoms,
        ),
        Some(t) => distill_voice_loss(&mut tape, &outs, &[t, t], weights, denoms),
    };
    let loss = tape.value(root).item() as f64;
    let mut grads = tape.backward(root);
    Ok((loss, ids.iter().map(|&id| grads.take(id)).collect()))
}

/// The paired-clip training loop shared by the supervised, distillation, and
/// head stages. `targets` switches the objective to score matching; labels
/// are then read only by evaluation.
pub(crate) fn run_pair_training(
    cfg: &TrainRunConfig,
    ds: &Dataset,
    store: &FeatureStore,
    mut params: ParamSet<f32>,
    kind: ModelKind,
    model_cfg: ModelConfig,
    weights: LossWeights,
    targets: Option<&BTreeMap<String, (f64, f64)>>,
    forward: ForwardFn,
) -> Result<TrainOutcome> {
    let mut log = RunLog::new(&cfg.out_dir)?;
    let mut opt = AdamW::new(cfg.optimizer, &params);
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut diverged = false;

    'epochs: for epoch in 0..cfg.epochs {
        let batches =
            epoch_pair_batches(ds, store, Split::Train, cfg.batch_voices, cfg.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for batch in &batches {
            let denoms = BatchDenominators::for_batch(batch.entries.len(), 2);
            let results = par::map_collect(&batch.entries, |entry| {
                let target = targets
                    .map(|t| *t.get(&entry.voice_id).expect("coverage checked upfront"));
                voice_pair_grads(
                    ds, store, &model_cfg, &params, entry, weights, target, denoms, forward,
                    cfg.seed, epoch,
                )
            });
            let mut batch_loss = 0.0;
            let mut acc: Vec<Option<Mat<f32>>> = vec![None; params.len()];
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                accumulate(&mut acc, grads);
            }
            if !batch_loss.is_finite() {
                diverged = true;
                break 'epochs;
            }
            opt.step(&mut params, &acc);
            loss_sum += batch_loss;
            n_batches += 1;
        }

        let ckpt_path = log.checkpoint_path(epoch);
        save_checkpoint(
            &ckpt_path,
            &CheckpointData { kind, config: model_cfg.clone(), params: params.clone() },
        )?;
        let scorer = Scorer::new(kind, model_cfg.clone(), params.clone());
        let val_rows = score_split(&scorer, ds, store, Split::Validation)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches.max(1) as f64,
            val_dep_sn_sp: split_sn_sp(&val_rows, crate::data::Task::Depression),
            val_anx_sn_sp: split_sn_sp(&val_rows, crate::data::Task::Anxiety),
            val_embed_dist: None,
            checkpoint: ckpt_path.file_name().unwrap().to_string_lossy().into_owned(),
        };
        log.append(&record)?;
        records.push(record);
    }

    if records.is_empty() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let best = select_best_by_depression(&records);
    finalize(cfg, &log, records, best, diverged, None, None)
}
