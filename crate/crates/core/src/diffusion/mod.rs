//! Latent DDPM over stacked body-part codes with clean-sample prediction.

pub mod latent;
pub mod model;
pub mod schedule;
pub mod train;

pub use latent::{decode_latent, fit_latent_norm, part_columns, stack_codes};
pub use model::{audio_network, encode_audio, step_table, trunk_network, Denoiser, DenoiserModel, DiffusionConfig};
pub use schedule::{
    ddpm_step, make_schedule, posterior_mean, q_sample, q_sample_with_noise, standard_normal, NoiseSchedule, ScheduleKind,
};
pub use train::{
    held_out_loss, prepare_samples, train_diffusion, train_on_samples, uses_text_feature, ConditionObserver, ConditionRecord,
    DiffusionSample, DiffusionTrainConfig, DiffusionTrainReport,
};
