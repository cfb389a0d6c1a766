//! Run records: a config snapshot, its hash, input and output fingerprints
//! and timestamps, written next to every stage's outputs.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hdrvqa_core::{file_sha256, sha256_hex};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub tool_version: String,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    /// Path to `sha256:<hex>`, or `bytes:<len>` for bulk media.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    if e.kind() == ErrorKind::NotFound {
        CliError::new("INPUT_NOT_FOUND", format!("file not found: {}", path.display()))
    } else {
        CliError::new("IO_ERROR", format!("{}: {e}", path.display()))
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

/// Parses a TOML file with the target type's schema.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    toml::from_str(&read_text(path)?).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::new("IO_ERROR", format!("{}: {e}", path.display())))
}

/// Resolves `p` against the directory of the file that named it.
pub fn relative_to(file: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        file.parent().unwrap_or(Path::new("")).join(p)
    }
}

/// `<file>.run.json` for single-file outputs.
pub fn record_beside(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".run.json");
    name.into()
}

#[derive(Debug, Default)]
pub struct Inputs(BTreeMap<String, String>);

impl Inputs {
    pub fn file(&mut self, path: &Path) -> CliResult<()> {
        let h = file_sha256(path)?;
        self.0.insert(path.display().to_string(), format!("sha256:{h}"));
        Ok(())
    }

    /// Size only; media files are too large to hash on every run.
    pub fn media(&mut self, path: &Path) -> CliResult<()> {
        let len = std::fs::metadata(path).map_err(|e| io_error(path, e))?.len();
        self.0.insert(path.display().to_string(), format!("bytes:{len}"));
        Ok(())
    }
}

/// One invocation of a stage, from config snapshot to finished record.
pub struct Stage {
    record_path: PathBuf,
    record: RunRecord,
}

impl Stage {
    pub fn begin(record_path: PathBuf, subcommand: &str, config: &impl Serialize, inputs: Inputs) -> CliResult<Self> {
        let config = serde_json::to_value(config)?;
        let config_hash = sha256_hex(serde_json::to_string(&(subcommand, &config))?.as_bytes());
        Ok(Stage {
            record_path,
            record: RunRecord {
                schema_version: RUN_SCHEMA_VERSION,
                tool_version: env!("CARGO_PKG_VERSION").into(),
                subcommand: subcommand.into(),
                config,
                config_hash,
                inputs: inputs.0,
                outputs: BTreeMap::new(),
                started_unix: now(),
                finished_unix: 0.0,
            },
        })
    }

    /// True when a previous record matches this config and these inputs and
    /// every output it lists is still present and unchanged.
    pub fn up_to_date(&self) -> bool {
        let Ok(text) = std::fs::read_to_string(&self.record_path) else {
            return false;
        };
        let Ok(prev) = serde_json::from_str::<RunRecord>(&text) else {
            return false;
        };
        prev.schema_version == RUN_SCHEMA_VERSION
            && prev.config_hash == self.record.config_hash
            && prev.inputs == self.record.inputs
            && !prev.outputs.is_empty()
            && prev
                .outputs
                .iter()
                .all(|(p, h)| file_sha256(Path::new(p)).is_ok_and(|x| format!("sha256:{x}") == *h))
    }

    /// Skips the stage when `resume` is set and nothing changed.
    pub fn skip(&self, resume: bool) -> bool {
        if resume && self.up_to_date() {
            log::info!("{} is up to date, nothing to do", self.record_path.display());
            true
        } else {
            false
        }
    }

    pub fn finish(mut self, outputs: &[PathBuf]) -> CliResult<RunRecord> {
        for p in outputs {
            let h = file_sha256(p)?;
            self.record.outputs.insert(p.display().to_string(), format!("sha256:{h}"));
        }
        self.record.finished_unix = now();
        let text = serde_json::to_string_pretty(&self.record)? + "\n";
        std::fs::write(&self.record_path, text).map_err(|e| io_error(&self.record_path, e))?;
        Ok(self.record)
    }
}
