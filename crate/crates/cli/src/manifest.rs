//! `manifest.json`: the resolved config plus one record per command run
//! in the directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dsc_core::{Error, Result};

use crate::config::RunConfig;
use crate::metrics::write_atomic;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceCount {
    pub phase: String,
    pub space: String,
    /// Members in the space.
    pub size: usize,
    pub start: usize,
    pub end: usize,
    /// `round(size·(1 − p))`.
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_checkpoint: Option<PathBuf>,
    pub output_checkpoint: Option<PathBuf>,
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub params: usize,
    pub nonzero_start: usize,
    pub nonzero_end: usize,
    #[serde(default)]
    pub spaces: Vec<SpaceCount>,
    pub val_error: Option<f64>,
    pub test_error: Option<f64>,
    /// Command-specific payload, e.g. the compaction report.
    #[serde(default)]
    pub details: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config: RunConfig,
    /// Keyed by command name.
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }

    /// Records `stage` under `command`, keeping earlier commands' records.
    pub fn update(dir: &Path, config: &RunConfig, command: &str, stage: StageRecord) -> Result<()> {
        let path = dir.join("manifest.json");
        let mut stages = match Manifest::read(&path) {
            Ok(m) => m.stages,
            Err(_) => BTreeMap::new(),
        };
        stages.insert(command.into(), stage);
        let m = Manifest {
            tool_version: TOOL_VERSION.into(),
            config: config.clone(),
            stages,
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(|e| Error::State(e.to_string()))?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())
    }
}
