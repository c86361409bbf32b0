//! Probabilistic text/motion alignment space: two Gaussian-headed encoders
//! into a shared space, an auxiliary frame decoder, the four-term training
//! loss, and implicit labels for clips without prompts.

mod loss;
mod space;
mod train;

pub use loss::{align_losses, info_nce, kl_diag, losses_and_grads, negative_mask, AlignGrads, AlignLosses, PairNoise};
pub use space::{cosine, motion_features, text_features, AlignConfig, AlignSpace, ProbEmbedding, MOTION_FEATURES};
pub use train::{align_step, train_align, AlignTrainReport};
