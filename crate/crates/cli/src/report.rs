use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use facade_core::pipeline::PipelineConfig;
use serde::Serialize;
use serde_json::Value;

/// Run summary written to `--report` (and `report.json` by `reconstruct`).
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub config_echo: PipelineConfig,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub metrics: Value,
    pub warnings: Vec<Value>,
    pub duration_ms: u64,
}

/// What a command hands back for the report.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub metrics: Value,
    pub warnings: Vec<Value>,
    /// Set by checks that ran but did not pass.
    pub failed: Option<String>,
}

impl Outcome {
    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs.insert(key.into(), path.to_path_buf());
    }

    pub fn output(&mut self, key: &str, path: &Path) {
        self.outputs.insert(key.into(), path.to_path_buf());
    }

    /// Records a warning and echoes it to stderr as one JSON line.
    pub fn warn(&mut self, warning: Value) {
        eprintln!("{}", serde_json::to_string(&warning).expect("json value"));
        self.warnings.push(warning);
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
