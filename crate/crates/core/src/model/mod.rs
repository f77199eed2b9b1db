//! The ALWNN network: a depthwise-separable stem, learnable lifting levels
//! and a GAP-fused classifier head.

mod checkpoint;
mod config;
mod net;
mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, CHECKPOINT_EXT, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, RegForm};
pub use net::{
    add_regularizers, argmax_rows, composite_loss, forward, haar_lifting, interleave, lifting_level,
    regularizer_terms, BoundParams, ForwardTrace, LearnedOperator, LiftingOperator, Model, Scaled,
};
pub use params::ModelParams;
