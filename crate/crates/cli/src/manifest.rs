//! Per-command run manifests.

use std::path::Path;

use lakeice::Result;
use serde::Serialize;

/// Package version plus `git describe` output when built from a checkout.
pub const VERSION: &str = env!("LAKEICE_VERSION");

/// Written as `run-<command>.json` next to a command's outputs. Holds no
/// timestamps so unchanged inputs reproduce it byte for byte.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub dataset_fingerprint: Option<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        RunManifest {
            command: command.into(),
            version: VERSION.into(),
            args: args.to_vec(),
            config_hash: None,
            seed: None,
            dataset_fingerprint: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(format!("run-{}.json", self.command)), text + "\n")?;
        Ok(())
    }
}
