//! Minimal reverse-mode autodiff, the screening model family, and AdamW.
//!
//! Everything is generic over the working precision [`Real`]: training runs
//! in f32; gradient checks rebuild the same graphs in f64, where the 1e-4
//! finite-difference tolerance is actually meaningful.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use checkpoint::{
    load_checkpoint, load_optimizer, save_checkpoint, save_optimizer, CheckpointData,
};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{
    audio_forward, feature_leaf, fused_forward, init_audio, init_fused, init_lexical,
    init_llma_encoder, lexical_forward, lexical_leaf, llma_forward, register_params, BoundParams,
    ForwardOut, Mode, ModelConfig, ModelKind,
};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamEntry, ParamSet};
pub use real::Real;
pub use tape::{Grads, NodeId, Tape};
pub use tensor::Mat;
