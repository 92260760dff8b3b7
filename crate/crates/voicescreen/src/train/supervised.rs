//! Supervised stages: the audio model on paired clips (ordinal loss with or
//! without the variance penalty) and the lexical model on sidecar vectors.

use rand::seq::SliceRandom;

use crate::data::{Dataset, Split};
use crate::losses::{supervised_voice_loss, BatchDenominators};
use crate::nn::{
    audio_forward, init_audio, init_lexical, lexical_forward, lexical_leaf, register_params,
    save_checkpoint, AdamW, BoundParams, CheckpointData, Mat, Mode, ModelKind, Tape,
};
use crate::rng::{mix, salt, stream};
use crate::{par, Error, Result};

use super::engine::{
    accumulate, finalize, run_pair_training, select_best_by_depression, RunLog,
};
use super::scorer::{score_split, split_sn_sp, Scorer};
use super::{
    effective_batch_voices, EpochRecord, FeatureStore, TrainOutcome, TrainRunConfig, TrainStage,
};

/// Train the audio model from scratch on paired clips.
pub fn train_supervised(
    cfg: &TrainRunConfig,
    ds: &Dataset,
    store: &FeatureStore,
) -> Result<TrainOutcome> {
    if !matches!(cfg.stage, TrainStage::SupervisedCoral | TrainStage::SupervisedCoralSvl) {
        return Err(Error::invalid("train_supervised expects a supervised stage"));
    }
    cfg.validate()?;
    let params = init_audio(&cfg.model, cfg.seed);
    run_pair_training(
        cfg,
        ds,
        store,
        params,
        ModelKind::Audio,
        cfg.model.clone(),
        cfg.effective_weights(),
        None,
        audio_forward::<f32>,
    )
}

/// Train the lexical model: ordinal loss over per-recording sidecar vectors.
pub fn train_lexical(
    cfg: &TrainRunConfig,
    ds: &Dataset,
    store: &FeatureStore,
) -> Result<TrainOutcome> {
    if cfg.stage != TrainStage::Lexical {
        return Err(Error::invalid("train_lexical expects the lexical stage"));
    }
    cfg.validate()?;
    let mut params = init_lexical(&cfg.model, cfg.seed);
    let mut opt = AdamW::new(cfg.optimizer, &params);
    let mut log = RunLog::new(&cfg.out_dir)?;
    let weights = cfg.effective_weights();

    // Load every training sidecar once; recordings are the batch unit here.
    let recs = ds.split_records(Split::Train);
    if recs.is_empty() {
        return Err(Error::invalid("no recordings in the train split"));
    }
    let lex: Vec<Vec<f32>> = {
        let loaded = par::map_collect(&recs, |r| crate::data::read_lex(&ds.lex_path(r)));
        loaded.into_iter().collect::<Result<_>>()?
    };

    let mut records: Vec<EpochRecord> = Vec::new();
    let mut diverged = false;
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..recs.len()).collect();
        order.shuffle(&mut stream(cfg.seed, &[salt::SHUFFLE, epoch as u64]));
        let eff = effective_batch_voices(cfg.batch_voices, recs.len());
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(eff) {
            let denoms = BatchDenominators {
                clip_terms: chunk.len() * crate::data::Task::ALL.len(),
                group_terms: chunk.len() * crate::data::Task::ALL.len(),
            };
            let results = par::map_collect(chunk, |&i| {
                let rec = recs[i];
                let mut tape = Tape::new();
                let ids = register_params(&mut tape, &params);
                let bound = BoundParams::new(&params, &ids);
                let leaf = lexical_leaf(&mut tape, &lex[i]);
                let dropout_seed =
                    mix(&[cfg.seed, salt::DROPOUT, epoch as u64, i as u64]);
                let out = lexical_forward(
                    &mut tape,
                    &bound,
                    &cfg.model,
                    leaf,
                    Mode::Train { dropout_seed },
                );
                let root = supervised_voice_loss(
                    &mut tape,
                    &bound,
                    &[out],
                    rec.phq9,
                    rec.gad7,
                    weights,
                    denoms,
                );
                let loss = tape.value(root).item() as f64;
                let mut grads = tape.backward(root);
                let parts: Vec<Option<Mat<f32>>> =
                    ids.iter().map(|&id| grads.take(id)).collect();
                (loss, parts)
            });
            let mut batch_loss = 0.0;
            let mut acc: Vec<Option<Mat<f32>>> = vec![None; params.len()];
            for (loss, grads) in results {
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
                kind: ModelKind::Lexical,
                config: cfg.model.clone(),
                params: params.clone(),
            },
        )?;
        let scorer = Scorer::new(ModelKind::Lexical, cfg.model.clone(), params.clone());
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_corpus, CorpusConfig};
    use std::path::Path;

    fn tiny_train_cfg(stage: TrainStage, corpus: &Path, out: &Path) -> TrainRunConfig {
        let mut cfg = TrainRunConfig::new(stage, corpus, out);
        cfg.epochs = 2;
        cfg.batch_voices = 8;
        cfg.seed = 9;
        cfg.model.enc_dims = vec![12];
        cfg.model.lora_rank = 3;
        cfg.model.lex_dims = vec![10, 8];
        cfg.model.trunk_hidden = 12;
        cfg.model.embed_dim = 8;
        cfg.model.head_hidden = 8;
        cfg
    }

    fn tiny_corpus(dir: &Path) -> Dataset {
        let cc = CorpusConfig {
            n_voices: 10,
            duration_range: [31.0, 40.0],
            master_seed: 31,
            split_ratios: [0.6, 0.2, 0.2],
            ..CorpusConfig::default()
        };
        let manifest = generate_corpus(&cc, dir).unwrap();
        crate::data::load_manifest(&manifest).unwrap()
    }

    #[test]
    fn supervised_runs_are_deterministic_and_logged() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let ds = tiny_corpus(&corpus);
        let store = FeatureStore::new(&ds).unwrap();

        let cfg1 = tiny_train_cfg(
            TrainStage::SupervisedCoralSvl,
            &corpus,
            &dir.path().join("run1"),
        );
        let out1 = train_supervised(&cfg1, &ds, &store).unwrap();
        let mut cfg2 = cfg1.clone();
        cfg2.out_dir = dir.path().join("run2");
        let out2 = train_supervised(&cfg2, &ds, &store).unwrap();

        assert_eq!(out1.records, out2.records);
        assert_eq!(out1.best_epoch, out2.best_epoch);
        assert!(!out1.diverged);
        assert_eq!(out1.records.len(), 2);
        // Logs and artifacts exist.
        assert!(cfg1.out_dir.join("epochs.jsonl").exists());
        assert!(cfg1.out_dir.join("summary.json").exists());
        assert!(out1.best_checkpoint.exists());
        // The two epoch logs are byte-identical.
        let a = std::fs::read(cfg1.out_dir.join("epochs.jsonl")).unwrap();
        let b = std::fs::read(cfg2.out_dir.join("epochs.jsonl")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lexical_stage_trains_and_selects_an_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let ds = tiny_corpus(&corpus);
        let store = FeatureStore::new(&ds).unwrap();
        let cfg = tiny_train_cfg(TrainStage::Lexical, &corpus, &dir.path().join("lex"));
        let out = train_lexical(&cfg, &ds, &store).unwrap();
        assert_eq!(out.records.len(), 2);
        let best = crate::nn::load_checkpoint(&out.best_checkpoint).unwrap();
        assert_eq!(best.kind, ModelKind::Lexical);
        // Training moved the trainable parameters.
        let init = init_lexical(&cfg.model, cfg.seed);
        let moved = best
            .params
            .entries()
            .iter()
            .zip(init.entries())
            .any(|(a, b)| a.trainable && a.value.data != b.value.data);
        assert!(moved);
    }
}
