use std::path::{Path, PathBuf};

use cospeech_core::persist::io::write_json_atomic;
use cospeech_core::Result;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const BUILD_ID: &str = env!("COSPEECH_BUILD_ID");

/// Record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub build_id: String,
    pub wall_seconds: f64,
    pub config: Value,
    pub outputs: Vec<PathBuf>,
    /// Command-specific extras (routing decisions, loss summaries, ...).
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }
}

/// `out.json` becomes `out.run.json`; directories get `run.json` inside.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    if output.extension().is_some() {
        output.with_extension("run.json")
    } else {
        output.join("run.json")
    }
}
