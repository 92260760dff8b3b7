//! Speech-based severity screening toolkit.
//!
//! End-to-end pipeline: a synthetic prosody corpus with ordinal labels
//! ([`synth`]), log-mel DSP front end ([`dsp`]), a small autodiff engine with
//! LoRA-adapted encoders ([`nn`]), ordinal and consistency losses
//! ([`losses`]), voice-paired training stages with teacher distillation and
//! embedding matching ([`train`]), and screening metrics built on ROC sweeps
//! and threshold dynamic programming ([`metrics`]).
//!
//! Everything is deterministic given explicit seeds: parallel and serial
//! execution produce bit-identical artifacts.

pub mod data;
pub mod dsp;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
