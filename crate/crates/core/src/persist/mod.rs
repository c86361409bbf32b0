//! Checkpoints, run configuration, seed streams and atomic file output.

pub mod checkpoint;
pub mod config;
pub mod io;
pub mod seed;
pub mod state;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, TensorEntry, FORMAT_VERSION, MAGIC};
pub use config::{Preset, RunConfig};
pub use state::{
    align_checkpoint, align_from_checkpoint, diffusion_checkpoint, diffusion_from_checkpoint, rvq_checkpoint, rvq_from_checkpoint,
};
