//! Autoregressive raw-audio model built from dilated causal convolutions.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`codec`]: mu-law companding and 256-level quantization.
//! - [`tensor_ops`]: the numerical kernels (causal/dilated convolution,
//!   gated activation, upsampling, softmax cross-entropy) with analytic
//!   backward passes.
//! - [`model`]: the residual/skip network with global, local and context
//!   conditioning, an optional frame classifier, and checkpoints.
//! - [`training`]: teacher-forced maximum likelihood with Adam and a
//!   finite-difference gradient checker.
//! - [`sampler`]: ring-buffer cached sequential generation.
//! - [`audio_io`]: PCM16 WAV files and synthetic signals.

pub mod audio_io;
pub mod codec;
mod error;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod tensor_ops;
pub mod training;

pub use error::{Error, Result};
