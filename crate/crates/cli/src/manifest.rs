use std::path::Path;

use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Simulate,
    Analyze,
    Sweep,
    Calibrate,
    Moments,
}

/// How the contents of an output directory were produced. One per directory;
/// a rerun replaces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: CommandKind,
    pub config_path: String,
    pub base_seed: u64,
    pub output_dir: String,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: CommandKind, config_path: Option<&Path>, base_seed: u64, output_dir: &Path) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA,
            command,
            config_path: config_path.map(|p| p.display().to_string()).unwrap_or_default(),
            base_seed,
            output_dir: output_dir.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}
