//! Training objectives: ordinal cross-entropy over cutoff thresholds
//! (CORAL), within-voice score-variance regularization (SVL), score
//! distillation, and embedding-matching losses — as plain-number helpers and
//! as tape-graph builders that shard cleanly across voices.
//!
//! Batch reductions are means, never sums, so weight ratios keep their
//! meaning across batch sizes. Each per-voice builder divides by the full
//! batch's term counts; summing the per-voice roots therefore reproduces the
//! whole-batch loss exactly, which lets gradient computation shard by voice
//! with a deterministic ordered reduction.

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::nn::model::{BoundParams, ForwardOut};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Mat;
use crate::nn::Real;
use crate::{Error, Result};

/// Relative weights for a training stage's objective.
///
/// `primary` scales the stage's main term (ordinal loss in supervised
/// stages, score distillation in the student stage); `svl` scales the
/// within-voice variance term. Defaults: 1:40 supervised, 1:1 distillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub primary: f64,
    pub svl: f64,
}

impl LossWeights {
    pub fn supervised_default() -> Self {
        LossWeights { primary: 1.0, svl: 40.0 }
    }

    pub fn coral_only() -> Self {
        LossWeights { primary: 1.0, svl: 0.0 }
    }

    pub fn distill_default() -> Self {
        LossWeights { primary: 1.0, svl: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primary < 0.0 || self.svl < 0.0 || !self.primary.is_finite() || !self.svl.is_finite()
        {
            return Err(Error::invalid("loss weights must be non-negative and finite"));
        }
        Ok(())
    }
}

/// Which distance the embedding-matching stage minimizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmaMode {
    #[default]
    Mse,
    Cosine,
}

/// Ordinal loss on plain numbers: −Σ_{k≤y} ln σ(s+bₖ) − Σ_{k>y} ln(1−σ(s+bₖ)).
pub fn coral_scalar(s: f64, biases: &[f64], label: usize) -> f64 {
    assert!(label <= biases.len(), "label out of range");
    let softplus = |z: f64| {
        if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        }
    };
    biases
        .iter()
        .enumerate()
        .map(|(k, &bk)| {
            let z = s + bk;
            if k < label {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum()
}

/// Population variance (÷ count) of one voice's scores.
pub fn svl_scalar(scores: &[f64]) -> f64 {
    assert!(scores.len() >= 2, "variance needs at least two scores");
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    scores.iter().map(|&s| (s - mean) * (s - mean)).sum::<f64>() / n
}

/// Mean squared error between matched score lists.
pub fn kd_scalar(student: &[f64], teacher: &[f64]) -> f64 {
    assert_eq!(student.len(), teacher.len(), "score lists must match");
    assert!(!student.is_empty());
    student
        .iter()
        .zip(teacher)
        .map(|(&s, &t)| (s - t) * (s - t))
        .sum::<f64>()
        / student.len() as f64
}

/// Mean squared componentwise error between embeddings.
pub fn llma_mse_scalar(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding widths must match");
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// 1 − cosine similarity between embeddings.
pub fn llma_cosine_scalar(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding widths must match");
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    assert!(na > 0.0 && nb > 0.0, "cosine undefined for zero vectors");
    1.0 - dot / (na * nb)
}

/// Term counts a per-voice builder divides by so that per-voice roots sum to
/// the batch mean-reduced loss.
#[derive(Debug, Clone, Copy)]
pub struct BatchDenominators {
    /// Total (clip, task) terms in the batch.
    pub clip_terms: usize,
    /// Total (voice, task) variance groups in the batch.
    pub group_terms: usize,
}

impl BatchDenominators {
    /// For a batch of `n_voices` voices with `clips_per_voice` clips each and
    /// both task heads in play.
    pub fn for_batch(n_voices: usize, clips_per_voice: usize) -> Self {
        BatchDenominators {
            clip_terms: n_voices * clips_per_voice * Task::ALL.len(),
            group_terms: n_voices * Task::ALL.len(),
        }
    }
}

/// One voice's share of the supervised objective
/// (primary·mean-CORAL + svl·mean-variance), as a single scalar node.
pub fn supervised_voice_loss<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundParams<F>,
    outs: &[ForwardOut],
    phq9: u8,
    gad7: u8,
    weights: LossWeights,
    denoms: BatchDenominators,
) -> NodeId {
    assert!(!outs.is_empty(), "voice contributed no clips");
    let mut terms: Vec<(NodeId, f64)> = Vec::new();
    for task in Task::ALL {
        let label = match task {
            Task::Depression => phq9 as usize,
            Task::Anxiety => gad7 as usize,
        };
        let biases = bound.node(&format!("coral.{}", task.name()));
        let scores: Vec<NodeId> = outs.iter().map(|o| o.score(task)).collect();
        if weights.primary > 0.0 {
            for &s in &scores {
                let c = tape.coral(s, biases, label);
                terms.push((c, weights.primary / denoms.clip_terms as f64));
            }
        }
        if weights.svl > 0.0 {
            let v = tape.variance(&scores);
            terms.push((v, weights.svl / denoms.group_terms as f64));
        }
    }
    tape.weighted_sum(&terms)
}

/// One voice's share of the distillation objective
/// (primary·mean squared score error + svl·mean-variance). `targets[i]`
/// holds the teacher's (depression, anxiety) scores for `outs[i]`'s clip.
pub fn distill_voice_loss<F: Real>(
    tape: &mut Tape<F>,
    outs: &[ForwardOut],
    targets: &[(f64, f64)],
    weights: LossWeights,
    denoms: BatchDenominators,
) -> NodeId {
    assert_eq!(outs.len(), targets.len(), "teacher targets must match clips");
    assert!(!outs.is_empty());
    let mut terms: Vec<(NodeId, f64)> = Vec::new();
    for task in Task::ALL {
        let scores: Vec<NodeId> = outs.iter().map(|o| o.score(task)).collect();
        if weights.primary > 0.0 {
            for (&s, t) in scores.iter().zip(targets) {
                let target = match task {
                    Task::Depression => t.0,
                    Task::Anxiety => t.1,
                };
                let e = tape.mse_const(s, Mat::scalar(F::from_f64v(target)));
                terms.push((e, weights.primary / denoms.clip_terms as f64));
            }
        }
        if weights.svl > 0.0 {
            let v = tape.variance(&scores);
            terms.push((v, weights.svl / denoms.group_terms as f64));
        }
    }
    tape.weighted_sum(&terms)
}

/// One recording's share of the embedding-matching objective: distance from
/// the pooled student embedding to a fixed target, divided by batch size.
pub fn llma_recording_loss<F: Real>(
    tape: &mut Tape<F>,
    pooled: NodeId,
    target: &[f32],
    mode: LlmaMode,
    batch_recordings: usize,
) -> NodeId {
    let t = Mat::from_vec(1, target.len(), target.iter().map(|&x| F::from_f32v(x)).collect());
    let d = match mode {
        LlmaMode::Mse => tape.mse_const(pooled, t),
        LlmaMode::Cosine => tape.cosine_const(pooled, t),
    };
    tape.weighted_sum(&[(d, 1.0 / batch_recordings as f64)])
}
