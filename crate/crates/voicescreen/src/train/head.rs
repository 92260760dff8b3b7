//! Final head stage: a fresh trunk and heads over both frozen encoders'
//! concatenated pooled outputs, trained with the ordinal loss on paired
//! clips.

use crate::data::Dataset;
use crate::nn::{fused_forward, init_fused, load_checkpoint, ModelKind};
use crate::{Error, Result};

use super::engine::run_pair_training;
use super::{FeatureStore, TrainOutcome, TrainRunConfig, TrainStage};

/// Train the fused model. Both encoder checkpoints must share the encoder
/// architecture; the audio checkpoint's model config governs the run.
pub fn finetune_head(
    cfg: &TrainRunConfig,
    ds: &Dataset,
    store: &FeatureStore,
) -> Result<TrainOutcome> {
    if cfg.stage != TrainStage::HeadFinetune {
        return Err(Error::invalid("finetune_head expects the head_finetune stage"));
    }
    cfg.validate()?;
    let audio = load_checkpoint(cfg.audio_checkpoint.as_ref().expect("validated"))?;
    if audio.kind != ModelKind::Audio {
        return Err(Error::invalid("audio_checkpoint must hold an audio model"));
    }
    let llma = load_checkpoint(cfg.llma_checkpoint.as_ref().expect("validated"))?;
    if llma.kind != ModelKind::LlmaEncoder {
        return Err(Error::invalid("llma_checkpoint must hold an embedding encoder"));
    }
    let (a, l) = (&audio.config, &llma.config);
    let encoders_match = a.mel_bins == l.mel_bins
        && a.enc_dims == l.enc_dims
        && a.lora_rank == l.lora_rank
        && a.lora_alpha == l.lora_alpha
        && a.feat_mean == l.feat_mean
        && a.feat_sd == l.feat_sd;
    if !encoders_match {
        return Err(Error::invalid(
            "encoder checkpoints disagree on the encoder architecture",
        ));
    }
    let model_cfg = audio.config.clone();
    let params = init_fused(&model_cfg, cfg.seed, &audio.params, &llma.params);
    run_pair_training(
        cfg,
        ds,
        store,
        params,
        ModelKind::Fused,
        model_cfg,
        cfg.effective_weights(),
        None,
        fused_forward::<f32>,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{
        init_audio, init_llma_encoder, save_checkpoint, CheckpointData, ModelConfig,
    };
    use crate::synth::{generate_corpus, CorpusConfig};

    #[test]
    fn encoders_stay_frozen_while_trunk_and_heads_move() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c");
        let cc = CorpusConfig {
            n_voices: 6,
            recordings_per_voice: 1,
            duration_range: [31.0, 34.0],
            master_seed: 17,
            split_ratios: [0.67, 0.33, 0.0],
            ..CorpusConfig::default()
        };
        let ds = crate::data::load_manifest(&generate_corpus(&cc, &corpus).unwrap()).unwrap();
        let store = FeatureStore::new(&ds).unwrap();

        let model = ModelConfig {
            enc_dims: vec![10],
            lora_rank: 3,
            lex_dims: vec![10, 8],
            trunk_hidden: 12,
            embed_dim: 8,
            head_hidden: 8,
            ..ModelConfig::default()
        };
        let audio = init_audio(&model, 1);
        let llma = init_llma_encoder(&model, 2);
        let audio_path = dir.path().join("audio.ckpt");
        let llma_path = dir.path().join("llma.ckpt");
        save_checkpoint(
            &audio_path,
            &CheckpointData { kind: ModelKind::Audio, config: model.clone(), params: audio.clone() },
        )
        .unwrap();
        save_checkpoint(
            &llma_path,
            &CheckpointData {
                kind: ModelKind::LlmaEncoder,
                config: model.clone(),
                params: llma.clone(),
            },
        )
        .unwrap();

        let mut cfg =
            TrainRunConfig::new(TrainStage::HeadFinetune, &corpus, &dir.path().join("o"));
        cfg.epochs = 2;
        cfg.batch_voices = 4;
        cfg.audio_checkpoint = Some(audio_path);
        cfg.llma_checkpoint = Some(llma_path);
        let out = finetune_head(&cfg, &ds, &store).unwrap();

        let best = load_checkpoint(&out.best_checkpoint).unwrap();
        assert_eq!(best.kind, ModelKind::Fused);
        // Every copied encoder entry must be frozen and bit-identical to its
        // source checkpoint; the fresh trunk/head entries must have moved.
        let mut moved = 0usize;
        for e in best.params.entries() {
            if let Some(rest) = e.name.strip_prefix("audio.") {
                assert!(!e.trainable, "{} should be frozen", e.name);
                assert_eq!(e.value.data, audio.get(rest).unwrap().value.data, "{}", e.name);
            } else if let Some(rest) = e.name.strip_prefix("llma.") {
                assert!(!e.trainable, "{} should be frozen", e.name);
                assert_eq!(e.value.data, llma.get(rest).unwrap().value.data, "{}", e.name);
            } else if e.trainable {
                let init = init_fused(&model, cfg.seed, &audio, &llma);
                if init.get(&e.name).unwrap().value.data != e.value.data {
                    moved += 1;
                }
            }
        }
        assert!(moved > 0, "trunk/head parameters should change during training");
        // The projection belongs to the embedding stage, not the fused model.
        assert!(best.params.get("llma.proj.w").is_err());
        assert!(best.params.get("proj.w").is_err());
    }
}
