//! Embedding matching: a dedicated audio encoder learns to reproduce the
//! frozen lexical model's trunk embedding for each recording. When the
//! pooled width differs from the trunk width, targets pass through the
//! student's fixed random projection (stored frozen in its checkpoint, so
//! the artifact is self-contained).
//!
//! Labels play no role in this stage's objective. Epoch selection minimizes
//! the validation embedding distance (ties to the earliest epoch).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data::{Dataset, LabeledRecording, Split};
use crate::losses::LlmaMode;
use crate::nn::{
    feature_leaf, init_llma_encoder, llma_forward, load_checkpoint, register_params,
    save_checkpoint, AdamW, BoundParams, CheckpointData, Mat, Mode, ModelConfig, ModelKind,
    ParamSet, Tape,
};
use crate::rng::{mix, salt, stream};
use crate::{par, Error, Result};

use super::engine::{accumulate, finalize, select_best_by_embed_dist, RunLog};
use super::scorer::Scorer;
use super::{
    effective_batch_voices, segment_count, segment_features, EpochRecord, FeatureStore,
    TrainOutcome, TrainRunConfig, TrainStage,
};

/// Fixed per-recording targets: the lexical model's trunk embedding, passed
/// through the student's frozen projection when one is present.
pub fn teacher_embedding_targets(
    lexical: &Scorer,
    student: &ParamSet<f32>,
    ds: &Dataset,
    recs: &[&LabeledRecording],
) -> Result<BTreeMap<String, Vec<f32>>> {
    let proj = student.get("proj.w").ok();
    let results = par::map_collect(recs, |rec| -> Result<(String, Vec<f32>)> {
        let lex = crate::data::read_lex(&ds.lex_path(rec))?;
        let emb = lexical.lexical_embedding(&lex)?;
        let target = match proj {
            None => emb,
            Some(p) => {
                assert_eq!(p.value.rows, emb.len(), "projection input width");
                let mut out = vec![0.0f32; p.value.cols];
                for (i, &e) in emb.iter().enumerate() {
                    let row = &p.value.data[i * p.value.cols..(i + 1) * p.value.cols];
                    for (o, &w) in out.iter_mut().zip(row) {
                        *o += e * w;
                    }
                }
                out
            }
        };
        Ok((rec.recording_id(), target))
    });
    let mut map = BTreeMap::new();
    for r in results {
        let (id, t) = r?;
        map.insert(id, t);
    }
    Ok(map)
}

fn distance(mode: LlmaMode, a: &[f32], b: &[f32]) -> f64 {
    let af: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    let bf: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    match mode {
        LlmaMode::Mse => crate::losses::llma_mse_scalar(&af, &bf),
        LlmaMode::Cosine => crate::losses::llma_cosine_scalar(&af, &bf),
    }
}

/// Mean embedding distance over recordings (per recording: mean over its
/// segments), in eval mode.
fn mean_embed_distance(
    cfg_model: &ModelConfig,
    params: &ParamSet<f32>,
    ds: &Dataset,
    store: &FeatureStore,
    recs: &[&LabeledRecording],
    targets: &BTreeMap<String, Vec<f32>>,
    mode: LlmaMode,
) -> Result<f64> {
    let scorer = Scorer::new(ModelKind::LlmaEncoder, cfg_model.clone(), params.clone());
    let per_rec = par::map_collect(recs, |rec| -> Result<f64> {
        let fm = store.recording_features(ds, rec)?;
        let target = &targets[&rec.recording_id()];
        let n = segment_count(&fm);
        let mut sum = 0.0;
        for i in 0..n {
            let pooled = scorer.llma_embedding(&segment_features(&fm, i))?;
            sum += distance(mode, &pooled, target);
        }
        Ok(sum / n as f64)
    });
    let mut total = 0.0;
    for r in per_rec {
        total += r?;
    }
    Ok(total / recs.len() as f64)
}

/// Train the embedding-matching encoder against the lexical teacher.
pub fn train_llma(
    cfg: &TrainRunConfig,
    ds: &Dataset,
    store: &FeatureStore,
) -> Result<TrainOutcome> {
    if cfg.stage != TrainStage::LlmaEmbed {
        return Err(Error::invalid("train_llma expects the llma_embed stage"));
    }
    cfg.validate()?;
    let lex_ckpt = load_checkpoint(cfg.lexical_checkpoint.as_ref().expect("validated"))?;
    if lex_ckpt.kind != ModelKind::Lexical {
        return Err(Error::invalid("lexical_checkpoint must hold a lexical model"));
    }
    if lex_ckpt.config.embed_dim != cfg.model.embed_dim {
        return Err(Error::invalid(format!(
            "teacher embedding width {} does not match the configured width {}",
            lex_ckpt.config.embed_dim, cfg.model.embed_dim
        )));
    }
    let lexical = Scorer::from_checkpoint(lex_ckpt);
    let mut params = init_llma_encoder(&cfg.model, cfg.seed);
    let mode = cfg.llma_mode;

    let train_recs = ds.split_records(Split::Train);
    let val_recs = ds.split_records(Split::Validation);
    if train_recs.is_empty() || val_recs.is_empty() {
        return Err(Error::invalid("embedding matching needs train and validation recordings"));
    }
    let mut all_recs = train_recs.clone();
    all_recs.extend(val_recs.iter().copied());
    let targets = teacher_embedding_targets(&lexical, &params, ds, &all_recs)?;

    let init_dist =
        mean_embed_distance(&cfg.model, &params, ds, store, &train_recs, &targets, mode)?;

    let mut opt = AdamW::new(cfg.optimizer, &params);
    let mut log = RunLog::new(&cfg.out_dir)?;
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut diverged = false;

    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_recs.len()).collect();
        order.shuffle(&mut stream(cfg.seed, &[salt::SHUFFLE, epoch as u64]));
        let eff = effective_batch_voices(cfg.batch_voices, train_recs.len());
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(eff) {
            let results = par::map_collect(chunk, |&i| -> Result<(f64, Vec<Option<Mat<f32>>>)> {
                let rec = train_recs[i];
                let fm = store.recording_features(ds, rec)?;
                let target = &targets[&rec.recording_id()];
                let n_seg = segment_count(&fm);
                let mut tape = Tape::new();
                let ids = register_params(&mut tape, &params);
                let bound = BoundParams::new(&params, &ids);
                let mut terms = Vec::with_capacity(n_seg);
                let term_w = 1.0 / (chunk.len() * n_seg) as f64;
                for s in 0..n_seg {
                    let leaf =
                        feature_leaf(&mut tape, &segment_features(&fm, s), &cfg.model);
                    let dropout_seed =
                        mix(&[cfg.seed, salt::DROPOUT, epoch as u64, i as u64, s as u64]);
                    let pooled = llma_forward(
                        &mut tape,
                        &bound,
                        &cfg.model,
                        leaf,
                        Mode::Train { dropout_seed },
                    );
                    let t = Mat::from_vec(
                        1,
                        target.len(),
                        target.iter().map(|&x| x).collect(),
                    );
                    let d = match mode {
                        LlmaMode::Mse => tape.mse_const(pooled, t),
                        LlmaMode::Cosine => tape.cosine_const(pooled, t),
                    };
                    terms.push((d, term_w));
                }
                let root = tape.weighted_sum(&terms);
                let loss = tape.value(root).item() as f64;
                let mut grads = tape.backward(root);
                Ok((loss, ids.iter().map(|&id| grads.take(id)).collect()))
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
            &CheckpointData {
                kind: ModelKind::LlmaEncoder,
                config: cfg.model.clone(),
                params: params.clone(),
            },
        )?;
        let val_dist =
            mean_embed_distance(&cfg.model, &params, ds, store, &val_recs, &targets, mode)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches.max(1) as f64,
            val_dep_sn_sp: None,
            val_anx_sn_sp: None,
            val_embed_dist: Some(val_dist),
            checkpoint: ckpt_path.file_name().unwrap().to_string_lossy().into_owned(),
        };
        log.append(&record)?;
        records.push(record);
    }

    if records.is_empty() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let best = select_best_by_embed_dist(&records);
    let best_params =
        load_checkpoint(&cfg.out_dir.join(&records[best].checkpoint))?.params;
    let final_dist =
        mean_embed_distance(&cfg.model, &best_params, ds, store, &train_recs, &targets, mode)?;
    finalize(cfg, &log, records, best, diverged, Some(init_dist), Some(final_dist))
}
