use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::Cli;

pub const MANIFEST_FILE: &str = "manifest.json";

/// What a run did: the full parsed invocation (enough to repeat it), the
/// resolved library configuration and a few result summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub cli_version: String,
    pub core_version: String,
    pub invocation: Cli,
    pub resolved: Value,
    #[serde(default)]
    pub outputs: Value,
}

impl Manifest {
    pub fn new(cli: &Cli, resolved: Value) -> Self {
        Self {
            tool: "clickseg".into(),
            cli_version: env!("CARGO_PKG_VERSION").into(),
            core_version: clickseg_core::VERSION.into(),
            invocation: cli.clone(),
            resolved,
            outputs: Value::Null,
        }
    }

    pub fn with_outputs(mut self, outputs: Value) -> Self {
        self.outputs = outputs;
        self
    }

    pub fn write_in(&self, dir: &Path) -> Result<()> {
        self.write_to(&dir.join(MANIFEST_FILE))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}
