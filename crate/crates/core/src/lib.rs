//! Desk-scale engine for prompt-controlled co-speech motion synthesis.
//!
//! The crate is organized bottom-up:
//!
//! * [`math`]: tensors, layers with analytic backward passes, Adam.
//! * [`data`]: procedural speech-to-motion and text-to-motion corpora.
//! * [`rvq`]: per-body-part residual VQ-VAE motion codecs.
//! * [`align`]: probabilistic text/motion alignment space and implicit labels.
//! * [`diffusion`]: latent DDPM with dual classifier-free condition dropout.
//! * [`compose`]: condition blending, body-part fusion and windowed generation.
//! * [`eval`]: FGD, beat consistency, diversity, R-precision, MM-Dist.
//! * [`persist`]: checkpoints, run configuration and seed streams.

pub mod error;
pub mod math;

pub use error::{Error, Result};
pub mod data;
pub mod persist;
pub mod rvq;
pub mod align;
pub mod eval;
pub mod diffusion;
pub mod compose;
