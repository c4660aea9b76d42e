//! Per-command run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifacts::{file_digest, write_json};
use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(FileDigest {
            path: path.to_owned(),
            sha256: file_digest(path)?,
        })
    }
}

/// Everything needed to rerun a command: the resolved config, the exact
/// inputs by digest, and what was produced. No timestamps, so reruns on the
/// same inputs write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Command-specific record: split ids, chosen hyperparameters, metrics.
    pub details: Value,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: &RunConfig) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.into(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            details: Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn input_opt(&mut self, path: Option<&Path>) -> CliResult<()> {
        match path {
            Some(p) => self.input(p),
            None => Ok(()),
        }
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }
}
