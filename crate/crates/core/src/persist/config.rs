use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::align::AlignConfig;
use crate::data::CorpusConfig;
use crate::diffusion::{DiffusionConfig, DiffusionTrainConfig};
use crate::error::{Error, Result};
use crate::rvq::{RvqConfig, RvqTrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::Config(format!("unknown preset {other:?}; use desk or paper"))),
        }
    }
}

/// Everything a scripted run needs besides its input files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusConfig,
    pub rvq: RvqConfig,
    pub rvq_train: RvqTrainConfig,
    pub align: AlignConfig,
    pub diffusion: DiffusionConfig,
    pub diffusion_train: DiffusionTrainConfig,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            seed: 1,
            out_dir: PathBuf::from("run"),
            corpus: CorpusConfig::default(),
            rvq: RvqConfig::desk(),
            rvq_train: RvqTrainConfig::default(),
            align: AlignConfig::desk(),
            diffusion: DiffusionConfig::desk(),
            diffusion_train: DiffusionTrainConfig::desk(),
        }
    }

    /// Full-scale constants; far too large to train on a workstation.
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            rvq: RvqConfig::paper(),
            align: AlignConfig::paper(),
            diffusion: DiffusionConfig::paper(),
            ..Self::desk()
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rvq.validate()?;
        self.align.validate()?;
        self.diffusion.validate()?;
        self.diffusion_train.validate()?;
        if self.diffusion.code_dim != self.rvq.code_dim {
            return Err(Error::Config("diffusion code width must match the codec code width".into()));
        }
        if self.diffusion.prompt_dim != self.align.dim {
            return Err(Error::Config("diffusion prompt width must match the alignment dim".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_constants() {
        let p = RunConfig::paper();
        assert_eq!((p.rvq.layers, p.rvq.codebook_size, p.rvq.code_dim), (6, 512, 512));
        assert_eq!(p.rvq.dropout, 0.2);
        assert_eq!(p.align.dim, 256);
        assert_eq!((p.align.temperature, p.align.filter_threshold), (0.1, 0.8));
        assert_eq!(p.diffusion.steps, 1000);
        assert_eq!((p.diffusion.depth, p.diffusion.width), (8, 512));
        p.validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn mismatched_widths_rejected() {
        let mut c = RunConfig::desk();
        c.align.dim = 16;
        assert!(c.validate().is_err());
    }
}
