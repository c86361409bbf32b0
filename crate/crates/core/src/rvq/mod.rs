//! Per-body-part residual VQ-VAE: convolutional encoder (x4 temporal
//! reduction), a stack of residual codebooks with EMA updates and dead-code
//! reset, and a convolutional decoder.

mod codebook;
mod quantize;
mod stack;
mod train;

pub use codebook::Codebook;
pub use quantize::{latent_grad, quantize_residual, rvq_loss, LatentSeq, QuantizeResult};
pub use stack::{decoder_network, encoder_network, RvqConfig, RvqStack, DOWNSAMPLE};
pub use train::{clip_step, relative_mse, cosine_lr, train_part, train_rvq, usage_counts, ClipStep, RvqTrainConfig, RvqTrainReport};
