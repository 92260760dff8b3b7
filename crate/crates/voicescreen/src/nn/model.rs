//! Model assembly: frame encoders with low-rank adapters, mean pooling,
//! trunk-plus-heads scoring, and ordinal thresholds.
//!
//! Four model kinds share the same building blocks:
//! - `audio`: frozen random per-frame dense stack with trainable low-rank
//!   adapters, mean-pooled, then trunk → per-task scalar heads.
//! - `lexical`: small trainable dense stack over sidecar vectors, same
//!   trunk/head scheme.
//! - `llma_encoder`: an independent adapter-tuned audio encoder whose pooled
//!   output is matched to another model's embedding (with an optional fixed
//!   random projection on the target side).
//! - `fused`: both audio encoders frozen, their pooled outputs concatenated
//!   into a fresh trunk/head stack.
//!
//! Parameter names are hierarchical (`enc.l0.w`, `trunk.l1.b`,
//! `head.depression.l0.w`, `coral.anxiety`); the fused model embeds its
//! encoders under `audio.` / `llma.` prefixes so checkpoints stay
//! self-contained.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::real::{rl, Real};
use super::tape::{NodeId, Tape};
use super::tensor::Mat;
use crate::data::Task;
use crate::dsp::FeatureMatrix;
use crate::rng::{self, salt};
use crate::{Error, Result};

/// Architecture hyperparameters shared by every model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature bins per frame consumed by the audio encoders.
    pub mel_bins: usize,
    /// Output widths of the per-frame dense stack.
    pub enc_dims: Vec<usize>,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    /// Dropout probability on each adapter's input.
    pub lora_dropout: f64,
    /// Output widths of the lexical dense stack.
    pub lex_dims: Vec<usize>,
    pub trunk_hidden: usize,
    /// Shared embedding width (trunk output).
    pub embed_dim: usize,
    pub head_hidden: usize,
    /// Dropout probability after each head's hidden layer.
    pub head_dropout: f64,
    /// Fixed input normalization: frames are mapped to (x − mean) / sd.
    pub feat_mean: f64,
    pub feat_sd: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mel_bins: crate::dsp::N_MELS,
            enc_dims: vec![96, 96],
            lora_rank: 32,
            lora_alpha: 64.0,
            lora_dropout: 0.40,
            lex_dims: vec![64, 32],
            trunk_hidden: 256,
            embed_dim: 64,
            head_hidden: 128,
            head_dropout: 0.40,
            feat_mean: -12.0,
            feat_sd: 8.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mel_bins == 0 {
            return Err(Error::invalid("mel_bins must be positive"));
        }
        if self.enc_dims.is_empty() || self.enc_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("enc_dims must be non-empty positive widths"));
        }
        if self.lex_dims.is_empty() || self.lex_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("lex_dims must be non-empty positive widths"));
        }
        if self.lora_rank == 0 {
            return Err(Error::invalid("lora_rank must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.lora_dropout) || !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::invalid("dropout probabilities must lie in [0, 1)"));
        }
        if self.trunk_hidden == 0 || self.embed_dim == 0 || self.head_hidden == 0 {
            return Err(Error::invalid("trunk/head widths must be positive"));
        }
        if !(self.feat_sd > 0.0) || !self.feat_sd.is_finite() || !self.feat_mean.is_finite() {
            return Err(Error::invalid("feature normalization constants must be finite, sd > 0"));
        }
        if !(self.lora_alpha > 0.0) || !self.lora_alpha.is_finite() {
            return Err(Error::invalid("lora_alpha must be positive and finite"));
        }
        Ok(())
    }

    /// Adapter output scale alpha / rank.
    pub fn lora_scale(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    /// Stable hash of the serialized config, hex-encoded.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", rng::fnv1a(json.as_bytes()))
    }
}

/// Which forward pass a checkpoint drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Audio,
    Lexical,
    LlmaEncoder,
    Fused,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Audio => "audio",
            ModelKind::Lexical => "lexical",
            ModelKind::LlmaEncoder => "llma_encoder",
            ModelKind::Fused => "fused",
        }
    }
}

/// Forward execution mode. Dropout draws only in `Train`, keyed entirely by
/// the caller-supplied seed so a fixed seed reproduces the exact masks.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

/// Nodes of interest produced by a full scoring forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOut {
    /// Encoder output after mean pooling (pre-trunk).
    pub pooled: NodeId,
    /// Shared embedding (trunk output).
    pub embedding: NodeId,
    pub score_dep: NodeId,
    pub score_anx: NodeId,
}

impl ForwardOut {
    pub fn score(&self, task: Task) -> NodeId {
        match task {
            Task::Depression => self.score_dep,
            Task::Anxiety => self.score_anx,
        }
    }
}

/// Insert every parameter as a tape leaf; returns node ids aligned with
/// `set.entries()`. Non-trainable entries become gradient-free leaves.
pub fn register_params<F: Real>(tape: &mut Tape<F>, set: &ParamSet<F>) -> Vec<NodeId> {
    set.entries()
        .iter()
        .map(|e| tape.leaf(e.value.clone(), e.trainable))
        .collect()
}

/// A parameter set bound to tape leaves, addressed by name.
pub struct BoundParams<'a, F> {
    set: &'a ParamSet<F>,
    ids: &'a [NodeId],
}

impl<'a, F: Real> BoundParams<'a, F> {
    pub fn new(set: &'a ParamSet<F>, ids: &'a [NodeId]) -> Self {
        assert_eq!(set.len(), ids.len(), "ids must align with parameter entries");
        BoundParams { set, ids }
    }

    pub fn node(&self, name: &str) -> NodeId {
        let idx = self
            .set
            .index_of(name)
            .unwrap_or_else(|| panic!("parameter {name} not found"));
        self.ids[idx]
    }

    pub fn has(&self, name: &str) -> bool {
        self.set.index_of(name).is_some()
    }

    pub fn config_of(&self) -> &ParamSet<F> {
        self.set
    }
}

/// Normalize raw features and add them to the tape as a constant leaf.
pub fn feature_leaf<F: Real>(
    tape: &mut Tape<F>,
    features: &FeatureMatrix,
    cfg: &ModelConfig,
) -> NodeId {
    assert_eq!(features.bins, cfg.mel_bins, "feature width mismatch");
    let mean = rl::<F>(cfg.feat_mean);
    let inv_sd = rl::<F>(1.0 / cfg.feat_sd);
    let data = features
        .data
        .iter()
        .map(|&x| (F::from_f32v(x) - mean) * inv_sd)
        .collect();
    tape.leaf(Mat::from_vec(features.frames, features.bins, data), false)
}

/// Add a lexical sidecar vector to the tape as a constant row leaf.
pub fn lexical_leaf<F: Real>(tape: &mut Tape<F>, lex: &[f32]) -> NodeId {
    let data = lex.iter().map(|&x| F::from_f32v(x)).collect();
    tape.leaf(Mat::from_vec(1, lex.len(), data), false)
}

const HEAD_DROP_TAG: u64 = 1000;

fn dropout_mask<F: Real>(rows: usize, cols: usize, p: f64, seed: u64, tag: u64) -> Mat<F> {
    let mut r = rng::stream(seed, &[salt::DROPOUT, tag]);
    let keep = rl::<F>(1.0 / (1.0 - p));
    let data = (0..rows * cols)
        .map(|_| if r.random::<f64>() < p { F::zero() } else { keep })
        .collect();
    Mat::from_vec(rows, cols, data)
}

/// Per-frame dense stack with optional low-rank adapters, then mean pooling.
///
/// Each layer computes `mish(x·W + b + scale·(drop(x)·A)·B)`; the adapter
/// branch is present only when `adapters` is set. Returns the pooled row.
fn dense_stack_pooled<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundParams<F>,
    prefix: &str,
    n_layers: usize,
    adapters: bool,
    cfg: &ModelConfig,
    input: NodeId,
    mode: Mode,
) -> NodeId {
    let mut x = input;
    for i in 0..n_layers {
        let w = bound.node(&format!("{prefix}enc.l{i}.w"));
        let b = bound.node(&format!("{prefix}enc.l{i}.b"));
        let base = tape.matmul(x, w);
        let mut z = tape.add_row(base, b);
        if adapters {
            let a = bound.node(&format!("{prefix}enc.l{i}.lora_a"));
            let bb = bound.node(&format!("{prefix}enc.l{i}.lora_b"));
            let xin = match mode {
                Mode::Eval => x,
                Mode::Train { dropout_seed } => {
                    let v = tape.value(x);
                    let mask = dropout_mask(
                        v.rows,
                        v.cols,
                        cfg.lora_dropout,
                        dropout_seed,
                        i as u64,
                    );
                    tape.mul_const(x, mask)
                }
            };
            let low = tape.matmul(xin, a);
            let up = tape.matmul(low, bb);
            let scaled = tape.scale(up, cfg.lora_scale());
            z = tape.add(z, scaled);
        }
        x = tape.mish(z);
    }
    tape.mean_rows(x)
}

/// Trunk and per-task heads over a pooled row; dropout after each head's
/// hidden layer in train mode. Head output layers have no bias: the ordinal
/// thresholds carry every intercept.
fn trunk_and_heads<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundParams<F>,
    cfg: &ModelConfig,
    pooled: NodeId,
    mode: Mode,
) -> ForwardOut {
    let w0 = bound.node("trunk.l0.w");
    let b0 = bound.node("trunk.l0.b");
    let h = tape.matmul(pooled, w0);
    let h = tape.add_row(h, b0);
    let h = tape.mish(h);
    let w1 = bound.node("trunk.l1.w");
    let b1 = bound.node("trunk.l1.b");
    let e = tape.matmul(h, w1);
    let embedding = tape.add_row(e, b1);

    let mut scores = [NodeId(0); 2];
    for (t, task) in Task::ALL.iter().enumerate() {
        let name = task.name();
        let hw = bound.node(&format!("head.{name}.l0.w"));
        let hb = bound.node(&format!("head.{name}.l0.b"));
        let hh = tape.matmul(embedding, hw);
        let hh = tape.add_row(hh, hb);
        let mut hh = tape.mish(hh);
        if let Mode::Train { dropout_seed } = mode {
            let v = tape.value(hh);
            let mask = dropout_mask(
                v.rows,
                v.cols,
                cfg.head_dropout,
                dropout_seed,
                HEAD_DROP_TAG + t as u64,
            );
            hh = tape.mul_const(hh, mask);
        }
        let out_w = bound.node(&format!("head.{name}.l1.w"));
        scores[t] = tape.matmul(hh, out_w);
    }
    ForwardOut {
        pooled,
        embedding,
        score_dep: scores[0],
        score_anx: scores[1],
    }
}

/// Full audio model: adapter-tuned encoder → pooling → trunk → heads.
pub fn audio_forward<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundParams<F>,
    cfg: &ModelConfig,
    features: NodeId,
    mode: Mode,
) -> ForwardOut {
    let pooled =
        dense_stack_pooled(tape, bound, "", cfg.enc_dims.len(), true, cfg, features, mode);
    trunk_and_heads(tape, bound, cfg, pooled, mode)
}

/// Lexical model: trainable dense stack over a sidecar row → trunk → heads.
pub fn lexical_forward<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundParams<F>,
    cfg: &ModelConfig,
    lex: NodeId,
    mode: Mode,
) -> ForwardOut {
    let pooled = dense_stack_pooled(tape, bound, "", cfg.lex_dims.len(), false, cfg, lex, mode);
    trunk_and_heads(tape, bound, cfg, pooled, mode)
}

/// Embedding-matching encoder: adapter-tuned stack → pooled row only.
pub fn llma_forward<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundParams<F>,
    cfg: &ModelConfig,
    features: NodeId,
    mode: Mode,
) -> NodeId {
    dense_stack_pooled(tape, bound, "", cfg.enc_dims.len(), true, cfg, features, mode)
}

/// Fused model: both frozen encoders run in eval mode, their pooled outputs
/// concatenated into the trainable trunk/head stack.
pub fn fused_forward<F: Real>(
    tape: &mut Tape<F>,
    bound: &BoundParams<F>,
    cfg: &ModelConfig,
    features: NodeId,
    mode: Mode,
) -> ForwardOut {
    let n = cfg.enc_dims.len();
    let pa = dense_stack_pooled(tape, bound, "audio.", n, true, cfg, features, Mode::Eval);
    let pl = dense_stack_pooled(tape, bound, "llma.", n, true, cfg, features, Mode::Eval);
    let pooled = tape.concat(pa, pl);
    trunk_and_heads(tape, bound, cfg, pooled, mode)
}

fn gauss_mat(rows: usize, cols: usize, sd: f64, seed: u64, name: &str) -> Mat<f32> {
    let mut r = rng::stream(seed, &[salt::PARAM_INIT, rng::fnv1a(name.as_bytes())]);
    let dist = Normal::new(0.0f64, sd).expect("valid normal");
    let data = (0..rows * cols).map(|_| dist.sample(&mut r) as f32).collect();
    Mat::from_vec(rows, cols, data)
}

fn fan_in_sd(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Dense layer pair `w`, `b` (bias zero-initialized, excluded from decay).
fn push_dense(
    set: &mut ParamSet<f32>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    trainable: bool,
    seed: u64,
) {
    let wname = format!("{prefix}.w");
    set.push(&wname, gauss_mat(fan_in, fan_out, fan_in_sd(fan_in), seed, &wname), trainable, true);
    set.push(&format!("{prefix}.b"), Mat::zeros(1, fan_out), trainable, false);
}

const ADAPTER_IN_SD: f64 = 0.01;

fn push_encoder(
    set: &mut ParamSet<f32>,
    input_dim: usize,
    dims: &[usize],
    adapters: bool,
    frozen_base: bool,
    cfg: &ModelConfig,
    seed: u64,
) {
    let mut fan_in = input_dim;
    for (i, &out) in dims.iter().enumerate() {
        push_dense(set, &format!("enc.l{i}"), fan_in, out, !frozen_base, seed);
        if adapters {
            let aname = format!("enc.l{i}.lora_a");
            set.push(
                &aname,
                gauss_mat(fan_in, cfg.lora_rank, ADAPTER_IN_SD, seed, &aname),
                true,
                true,
            );
            set.push(
                &format!("enc.l{i}.lora_b"),
                Mat::zeros(cfg.lora_rank, out),
                true,
                true,
            );
        }
        fan_in = out;
    }
}

fn push_trunk_heads(set: &mut ParamSet<f32>, pooled_dim: usize, cfg: &ModelConfig, seed: u64) {
    push_dense(set, "trunk.l0", pooled_dim, cfg.trunk_hidden, true, seed);
    push_dense(set, "trunk.l1", cfg.trunk_hidden, cfg.embed_dim, true, seed);
    for task in Task::ALL {
        let name = task.name();
        push_dense(
            set,
            &format!("head.{name}.l0"),
            cfg.embed_dim,
            cfg.head_hidden,
            true,
            seed,
        );
        let out_name = format!("head.{name}.l1.w");
        set.push(
            &out_name,
            gauss_mat(cfg.head_hidden, 1, fan_in_sd(cfg.head_hidden), seed, &out_name),
            true,
            true,
        );
        // Ordinal thresholds: trainable intercepts, never decayed.
        set.push(&format!("coral.{name}"), Mat::zeros(1, task.max_label() as usize), true, false);
    }
}

/// Audio scoring model parameters.
pub fn init_audio(cfg: &ModelConfig, seed: u64) -> ParamSet<f32> {
    let mut set = ParamSet::new();
    push_encoder(&mut set, cfg.mel_bins, &cfg.enc_dims, true, true, cfg, seed);
    push_trunk_heads(&mut set, *cfg.enc_dims.last().unwrap(), cfg, seed);
    set
}

/// Lexical scoring model parameters (fully trainable stack).
pub fn init_lexical(cfg: &ModelConfig, seed: u64) -> ParamSet<f32> {
    let mut set = ParamSet::new();
    push_encoder(&mut set, crate::data::LEX_DIM, &cfg.lex_dims, false, false, cfg, seed);
    push_trunk_heads(&mut set, *cfg.lex_dims.last().unwrap(), cfg, seed);
    set
}

/// Embedding-matching encoder parameters. When the target embedding width
/// differs from the pooled width, a fixed random projection `proj.w`
/// (target → pooled, frozen) is included for the target side.
pub fn init_llma_encoder(cfg: &ModelConfig, seed: u64) -> ParamSet<f32> {
    let mut set = ParamSet::new();
    push_encoder(&mut set, cfg.mel_bins, &cfg.enc_dims, true, true, cfg, seed);
    let pooled = *cfg.enc_dims.last().unwrap();
    if cfg.embed_dim != pooled {
        let mut r = rng::stream(seed, &[salt::PROJECTION]);
        let dist = Normal::new(0.0f64, fan_in_sd(cfg.embed_dim)).expect("valid normal");
        let data = (0..cfg.embed_dim * pooled).map(|_| dist.sample(&mut r) as f32).collect();
        set.push("proj.w", Mat::from_vec(cfg.embed_dim, pooled, data), false, false);
    }
    set
}

/// Fused model parameters: frozen copies of both encoders plus a fresh
/// trainable trunk/head stack over the concatenated pooled width.
pub fn init_fused(
    cfg: &ModelConfig,
    seed: u64,
    audio: &ParamSet<f32>,
    llma: &ParamSet<f32>,
) -> ParamSet<f32> {
    let mut set = ParamSet::new();
    let mut audio_enc = audio.strip_prefix("enc");
    audio_enc.freeze();
    let mut wrapped = ParamSet::new();
    wrapped.absorb("enc", audio_enc);
    set.absorb("audio", wrapped);

    let mut llma_enc = llma.strip_prefix("enc");
    llma_enc.freeze();
    let mut wrapped = ParamSet::new();
    wrapped.absorb("enc", llma_enc);
    set.absorb("llma", wrapped);

    push_trunk_heads(&mut set, 2 * cfg.enc_dims.last().unwrap(), cfg, seed);
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::N_MELS;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            enc_dims: vec![12, 10],
            lora_rank: 3,
            lex_dims: vec![8, 6],
            trunk_hidden: 14,
            embed_dim: 7,
            head_hidden: 9,
            ..ModelConfig::default()
        }
    }

    fn const_features(frames: usize, value: f32) -> FeatureMatrix {
        FeatureMatrix::new(frames, N_MELS, vec![value; frames * N_MELS])
    }

    fn run_audio(params: &ParamSet<f32>, cfg: &ModelConfig, fm: &FeatureMatrix, mode: Mode) -> (f32, f32) {
        let mut tape = Tape::<f32>::new();
        let ids = register_params(&mut tape, params);
        let bound = BoundParams::new(params, &ids);
        let x = feature_leaf(&mut tape, fm, cfg);
        let out = audio_forward(&mut tape, &bound, cfg, x, mode);
        (tape.value(out.score_dep).item(), tape.value(out.score_anx).item())
    }

    #[test]
    fn centered_input_scores_zero() {
        // Frames equal to the normalization mean become exactly zero after
        // normalization; zeros propagate through every linear + Mish layer.
        let cfg = tiny_cfg();
        let params = init_audio(&cfg, 7);
        let fm = const_features(5, cfg.feat_mean as f32);
        let (d, a) = run_audio(&params, &cfg, &fm, Mode::Eval);
        assert_eq!(d, 0.0);
        assert_eq!(a, 0.0);
    }

    #[test]
    fn zero_out_adapter_matches_frozen_path() {
        let cfg = tiny_cfg();
        let params = init_audio(&cfg, 11);
        let fm = const_features(6, -8.0);
        let base = run_audio(&params, &cfg, &fm, Mode::Eval);

        // Perturbing the input-side adapter changes nothing while the
        // output-side adapter is still zero...
        let mut p2 = params.clone();
        for e in p2.entries_mut() {
            if e.name.ends_with("lora_a") {
                for v in &mut e.value.data {
                    *v += 0.5;
                }
            }
        }
        assert_eq!(run_audio(&p2, &cfg, &fm, Mode::Eval), base);

        // ...and activating the output side moves the scores.
        let mut p3 = params.clone();
        for e in p3.entries_mut() {
            if e.name.ends_with("lora_b") {
                for v in &mut e.value.data {
                    *v = 0.05;
                }
            }
        }
        assert_ne!(run_audio(&p3, &cfg, &fm, Mode::Eval), base);
    }

    #[test]
    fn eval_is_repeatable_and_train_masks_are_seeded() {
        let cfg = tiny_cfg();
        let params = init_audio(&cfg, 3);
        let fm = const_features(8, -10.0);
        let e1 = run_audio(&params, &cfg, &fm, Mode::Eval);
        let e2 = run_audio(&params, &cfg, &fm, Mode::Eval);
        assert_eq!(e1, e2);
        let t1 = run_audio(&params, &cfg, &fm, Mode::Train { dropout_seed: 42 });
        let t2 = run_audio(&params, &cfg, &fm, Mode::Train { dropout_seed: 42 });
        assert_eq!(t1, t2);
        let t3 = run_audio(&params, &cfg, &fm, Mode::Train { dropout_seed: 43 });
        assert_ne!(t1, t3);
    }

    #[test]
    fn pooling_is_frame_order_invariant() {
        let cfg = tiny_cfg();
        let params = init_audio(&cfg, 5);
        let mut data = Vec::new();
        for f in 0..7usize {
            for b in 0..N_MELS {
                data.push(-12.0 + ((f * 31 + b * 7) % 13) as f32 * 0.3);
            }
        }
        let fm = FeatureMatrix::new(7, N_MELS, data.clone());
        let mut rev = Vec::new();
        for f in (0..7usize).rev() {
            rev.extend_from_slice(&data[f * N_MELS..(f + 1) * N_MELS]);
        }
        let fm_rev = FeatureMatrix::new(7, N_MELS, rev);
        let (d1, a1) = run_audio(&params, &cfg, &fm, Mode::Eval);
        let (d2, a2) = run_audio(&params, &cfg, &fm_rev, Mode::Eval);
        assert!((d1 - d2).abs() <= 1e-5 * d1.abs().max(1.0));
        assert!((a1 - a2).abs() <= 1e-5 * a1.abs().max(1.0));
    }

    #[test]
    fn gradients_reach_adapters_but_never_frozen_base() {
        let cfg = tiny_cfg();
        let params = init_audio(&cfg, 9);
        let mut tape = Tape::<f32>::new();
        let ids = register_params(&mut tape, &params);
        let bound = BoundParams::new(&params, &ids);
        let fm = const_features(4, -9.0);
        let x = feature_leaf(&mut tape, &fm, &cfg);
        let out = audio_forward(&mut tape, &bound, &cfg, x, Mode::Eval);
        let coral = bound.node("coral.depression");
        let loss = tape.coral(out.score_dep, coral, 13);
        let grads = tape.backward(loss);
        for (e, &id) in params.entries().iter().zip(&ids) {
            if e.trainable {
                // Anxiety-head parameters are off this loss's path.
                if e.name.contains("anxiety") {
                    assert!(grads.get(id).is_none(), "{} got a gradient", e.name);
                } else {
                    assert!(grads.get(id).is_some(), "{} missing gradient", e.name);
                }
            } else {
                assert!(grads.get(id).is_none(), "frozen {} got a gradient", e.name);
            }
        }
    }

    #[test]
    fn lexical_and_fused_forwards_run() {
        let cfg = tiny_cfg();
        let lexp = init_lexical(&cfg, 21);
        let mut tape = Tape::<f32>::new();
        let ids = register_params(&mut tape, &lexp);
        let bound = BoundParams::new(&lexp, &ids);
        let lex: Vec<f32> = (0..crate::data::LEX_DIM).map(|i| i as f32 * 0.1 - 0.8).collect();
        let xl = lexical_leaf(&mut tape, &lex);
        let out = lexical_forward(&mut tape, &bound, &cfg, xl, Mode::Eval);
        assert_eq!(tape.value(out.embedding).cols, cfg.embed_dim);
        assert!(tape.value(out.score_dep).item().is_finite());

        let audio = init_audio(&cfg, 1);
        let llma = init_llma_encoder(&cfg, 2);
        let fused = init_fused(&cfg, 3, &audio, &llma);
        let mut tape = Tape::<f32>::new();
        let ids = register_params(&mut tape, &fused);
        let bound = BoundParams::new(&fused, &ids);
        let fm = const_features(5, -11.0);
        let x = feature_leaf(&mut tape, &fm, &cfg);
        let out = fused_forward(&mut tape, &bound, &cfg, x, Mode::Eval);
        assert_eq!(tape.value(out.pooled).cols, 2 * cfg.enc_dims.last().unwrap());
        assert!(tape.value(out.score_anx).item().is_finite());
    }

    #[test]
    fn projection_present_only_on_width_mismatch() {
        let mut cfg = tiny_cfg();
        let p = init_llma_encoder(&cfg, 4);
        assert!(p.get("proj.w").is_ok());
        let e = p.get("proj.w").unwrap();
        assert_eq!((e.value.rows, e.value.cols), (cfg.embed_dim, 10));
        assert!(!e.trainable);

        cfg.embed_dim = *cfg.enc_dims.last().unwrap();
        let p = init_llma_encoder(&cfg, 4);
        assert!(p.get("proj.w").is_err());
    }

    #[test]
    fn fused_trainable_set_is_exactly_trunk_heads_thresholds() {
        let cfg = tiny_cfg();
        let audio = init_audio(&cfg, 1);
        let llma = init_llma_encoder(&cfg, 2);
        let fused = init_fused(&cfg, 3, &audio, &llma);
        for e in fused.entries() {
            let expect = e.name.starts_with("trunk.")
                || e.name.starts_with("head.")
                || e.name.starts_with("coral.");
            assert_eq!(e.trainable, expect, "{}", e.name);
        }
    }

    #[test]
    fn head_share_shrinks_when_encoders_dominate() {
        // With wide encoders the per-task heads plus thresholds stay under
        // a tenth of the fused model's scalars; at the compact default dims
        // they sit near 13%.
        let head_fraction = |cfg: &ModelConfig| {
            let audio = init_audio(cfg, 1);
            let llma = init_llma_encoder(cfg, 2);
            let fused = init_fused(cfg, 3, &audio, &llma);
            let heads: usize = fused
                .entries()
                .iter()
                .filter(|e| e.name.starts_with("head.") || e.name.starts_with("coral."))
                .map(|e| e.value.len())
                .sum();
            heads as f64 / fused.total_scalar_count() as f64
        };
        let default_frac = head_fraction(&ModelConfig::default());
        assert!((default_frac - 0.13).abs() < 0.02, "default head share {default_frac}");
        let wide = ModelConfig {
            enc_dims: vec![256, 256],
            ..ModelConfig::default()
        };
        let wide_frac = head_fraction(&wide);
        assert!(wide_frac < 0.10, "wide head share {wide_frac}");
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ModelConfig::default();
        let b = ModelConfig::default();
        assert_eq!(a.hash_hex(), b.hash_hex());
        let c = ModelConfig { lora_rank: 16, ..ModelConfig::default() };
        assert_ne!(a.hash_hex(), c.hash_hex());
    }

    #[test]
    fn init_is_seed_deterministic_and_name_keyed() {
        let cfg = tiny_cfg();
        let a = init_audio(&cfg, 5);
        let b = init_audio(&cfg, 5);
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert_eq!(x.value.data, y.value.data, "{}", x.name);
        }
        let c = init_audio(&cfg, 6);
        let wa = &a.get("enc.l0.w").unwrap().value;
        let wc = &c.get("enc.l0.w").unwrap().value;
        assert_ne!(wa.data, wc.data);
        // Distinct tensors draw from distinct streams even with equal shapes.
        let w1 = &a.get("enc.l1.w").unwrap().value;
        let a1 = &a.get("enc.l1.lora_a").unwrap().value;
        assert_ne!(w1.data[..4], a1.value_head());
    }

    trait Head {
        fn value_head(&self) -> [f32; 4];
    }
    impl Head for Mat<f32> {
        fn value_head(&self) -> [f32; 4] {
            [self.data[0], self.data[1], self.data[2], self.data[3]]
        }
    }
}
