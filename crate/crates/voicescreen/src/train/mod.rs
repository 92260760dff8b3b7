//! Training stages, pair batching, cached feature access, scoring, and run
//! logging.
//!
//! A run is described by a [`TrainRunConfig`] and produces, inside its
//! output directory, one checkpoint per epoch, an `epochs.jsonl` log, a
//! `summary.json`, and a `best.ckpt` copy of the selected epoch. Selection
//! maximizes validation depression Sn=Sp (ties go to the earliest epoch);
//! the embedding-matching stage instead minimizes validation embedding
//! distance.

mod batch;
mod distill;
mod engine;
mod features;
mod head;
mod llma;
mod scorer;
mod supervised;
mod teacher;

pub use batch::{build_pair_batch, effective_batch_voices, epoch_pair_batches, PairBatch, PairEntry};
pub use distill::{distill_student, voice_mean_targets};
pub use engine::{TrainOutcome, TrainSummary};
pub use features::{clip_features, segment_count, segment_features, FeatureStore};
pub use head::finetune_head;
pub use llma::{teacher_embedding_targets, train_llma};
pub use scorer::{infer_recording, read_score_jsonl, score_split, split_sn_sp, write_score_jsonl, Scorer};
pub use supervised::{train_lexical, train_supervised};
pub use teacher::{
    compose_teacher, read_teacher_jsonl, write_teacher_jsonl, TeacherProvenance, TeacherScores,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::losses::{LlmaMode, LossWeights};
use crate::nn::{AdamWConfig, ModelConfig};
use crate::{Error, Result};

/// Pipeline stage being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStage {
    /// Audio model, ordinal loss only.
    SupervisedCoral,
    /// Audio model, ordinal loss plus score-variance regularization.
    SupervisedCoralSvl,
    /// Dense model over the lexical sidecar vectors, ordinal loss.
    Lexical,
    /// Score distillation into a student initialized from a trained audio model.
    KdStudent,
    /// Embedding matching of a dedicated audio encoder to the lexical model.
    #[serde(alias = "llma")]
    LlmaEmbed,
    /// Fused trunk/heads over both frozen encoders, ordinal loss.
    #[serde(alias = "head")]
    HeadFinetune,
}

impl TrainStage {
    pub fn name(self) -> &'static str {
        match self {
            TrainStage::SupervisedCoral => "supervised_coral",
            TrainStage::SupervisedCoralSvl => "supervised_coral_svl",
            TrainStage::Lexical => "lexical",
            TrainStage::KdStudent => "kd_student",
            TrainStage::LlmaEmbed => "llma_embed",
            TrainStage::HeadFinetune => "head_finetune",
        }
    }

    /// Stage-appropriate loss weighting when the config does not override it.
    pub fn default_weights(self) -> LossWeights {
        match self {
            TrainStage::SupervisedCoral | TrainStage::Lexical | TrainStage::HeadFinetune => {
                LossWeights::coral_only()
            }
            TrainStage::SupervisedCoralSvl => LossWeights::supervised_default(),
            TrainStage::KdStudent => LossWeights::distill_default(),
            // Unused: the embedding stage has its own single-term objective.
            TrainStage::LlmaEmbed => LossWeights::coral_only(),
        }
    }
}

fn default_epochs() -> usize {
    20
}

fn default_batch_voices() -> usize {
    128
}

/// Full description of one training run; serializable as the config file
/// consumed by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub stage: TrainStage,
    /// Corpus root (the directory holding `manifest.jsonl`).
    pub corpus: PathBuf,
    /// Output directory for checkpoints and logs.
    pub out_dir: PathBuf,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_voices")]
    pub batch_voices: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    /// Overrides the stage default when present.
    #[serde(default)]
    pub loss_weights: Option<LossWeights>,
    #[serde(default)]
    pub llma_mode: LlmaMode,
    /// Student initialization (distillation stage).
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    /// Teacher score file (distillation stage).
    #[serde(default)]
    pub teacher_scores: Option<PathBuf>,
    /// Trained lexical model (embedding-matching stage).
    #[serde(default)]
    pub lexical_checkpoint: Option<PathBuf>,
    /// Trained audio model (head stage).
    #[serde(default)]
    pub audio_checkpoint: Option<PathBuf>,
    /// Trained embedding-matched encoder (head stage).
    #[serde(default)]
    pub llma_checkpoint: Option<PathBuf>,
}

impl TrainRunConfig {
    pub fn new(stage: TrainStage, corpus: &Path, out_dir: &Path) -> Self {
        TrainRunConfig {
            stage,
            corpus: corpus.to_path_buf(),
            out_dir: out_dir.to_path_buf(),
            epochs: default_epochs(),
            batch_voices: default_batch_voices(),
            seed: 0,
            model: ModelConfig::default(),
            optimizer: AdamWConfig::default(),
            loss_weights: None,
            llma_mode: LlmaMode::Mse,
            init_checkpoint: None,
            teacher_scores: None,
            lexical_checkpoint: None,
            audio_checkpoint: None,
            llma_checkpoint: None,
        }
    }

    /// Loss weighting in effect for this run.
    pub fn effective_weights(&self) -> LossWeights {
        self.loss_weights.unwrap_or_else(|| self.stage.default_weights())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_voices == 0 {
            return Err(Error::invalid("batch_voices must be at least 1"));
        }
        self.model.validate()?;
        self.optimizer.validate()?;
        self.effective_weights().validate()?;
        let require = |opt: &Option<PathBuf>, what: &str| -> Result<()> {
            if opt.is_none() {
                return Err(Error::invalid(format!(
                    "stage {} requires {what}",
                    self.stage.name()
                )));
            }
            Ok(())
        };
        match self.stage {
            TrainStage::SupervisedCoral => {
                if self.effective_weights().svl != 0.0 {
                    return Err(Error::invalid(
                        "supervised_coral must not carry a variance-loss weight",
                    ));
                }
            }
            TrainStage::SupervisedCoralSvl | TrainStage::Lexical => {}
            TrainStage::KdStudent => {
                require(&self.init_checkpoint, "init_checkpoint")?;
                require(&self.teacher_scores, "teacher_scores")?;
            }
            TrainStage::LlmaEmbed => require(&self.lexical_checkpoint, "lexical_checkpoint")?,
            TrainStage::HeadFinetune => {
                require(&self.audio_checkpoint, "audio_checkpoint")?;
                require(&self.llma_checkpoint, "llma_checkpoint")?;
            }
        }
        Ok(())
    }
}

/// Read and validate a run config from a JSON file.
pub fn read_train_config(path: &Path) -> Result<TrainRunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: TrainRunConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_train_config(path: &Path, cfg: &TrainRunConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// One completed epoch: loss, validation quality, and the saved checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation Sn=Sp aggregate (percent) per task; absent for the
    /// embedding stage or when every cutoff was single-class.
    pub val_dep_sn_sp: Option<f64>,
    pub val_anx_sn_sp: Option<f64>,
    /// Validation embedding distance (embedding stage only).
    pub val_embed_dist: Option<f64>,
    /// Checkpoint file name within the run's output directory.
    pub checkpoint: String,
}

/// Dispatch a validated config to its stage implementation.
pub fn run_training(cfg: &TrainRunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = crate::data::load_manifest(&cfg.corpus.join("manifest.jsonl"))?;
    let store = FeatureStore::new(&ds)?;
    match cfg.stage {
        TrainStage::SupervisedCoral | TrainStage::SupervisedCoralSvl => {
            train_supervised(cfg, &ds, &store)
        }
        TrainStage::Lexical => train_lexical(cfg, &ds, &store),
        TrainStage::KdStudent => distill_student(cfg, &ds, &store),
        TrainStage::LlmaEmbed => train_llma(cfg, &ds, &store),
        TrainStage::HeadFinetune => finetune_head(cfg, &ds, &store),
    }
}
