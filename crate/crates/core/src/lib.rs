//! Adaptive lifting-wavelet neural network (ALWNN) for automatic modulation
//! classification, and its prototypical few-shot extension (MALWNN).
//!
//! The crate is self-contained: IQ frames are synthesized natively
//! ([`signal`]), the network ([`model`]) is differentiated by a small
//! tape-based engine ([`autodiff`]), and training, evaluation and complexity
//! accounting live in [`train`], [`fewshot`] and [`metrics`].

pub mod autodiff;
pub mod error;
pub mod fewshot;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod signal;
pub mod tensor;
pub mod train;

#[cfg(test)]
#[path = "../tests/support/reference.rs"]
mod reference;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use tensor::{Element, Tensor};
