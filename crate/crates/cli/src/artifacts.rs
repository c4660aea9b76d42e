//! Stage artifact layout and file helpers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bugloc_core::models::ModelKind;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Where every stage reads and writes under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.root.join("ingest_report.json")
    }
    pub fn stats_dir(&self) -> PathBuf {
        self.root.join("stats")
    }
    pub fn processed(&self) -> PathBuf {
        self.root.join("processed.jsonl")
    }
    pub fn cleaning(&self) -> PathBuf {
        self.root.join("cleaning.jsonl")
    }
    pub fn preprocess_config(&self) -> PathBuf {
        self.root.join("preprocess.json")
    }
    pub fn split_manifest(&self) -> PathBuf {
        self.root.join("split.json")
    }
    pub fn partition(&self, name: &str) -> PathBuf {
        self.root.join("splits").join(format!("{name}.jsonl"))
    }
    pub fn variant(&self, name: &str) -> PathBuf {
        self.root.join("variants").join(format!("{name}.jsonl"))
    }
    pub fn model(&self, kind: ModelKind, variant: &str) -> PathBuf {
        self.root.join("models").join(format!("{kind}_{variant}.json"))
    }
    pub fn tuning(&self, kind: ModelKind, variant: &str) -> PathBuf {
        self.root.join("models").join(format!("{kind}_{variant}.tuning.json"))
    }
    pub fn metrics(&self, kind: ModelKind, variant: &str, split: &str, ext: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{kind}_{variant}_{split}.{ext}"))
    }
    pub fn benchmark_dir(&self) -> PathBuf {
        self.root.join("benchmark")
    }
    pub fn manifest(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{name}.json"))
    }
}

/// Fails with a stage-mismatch error when `path` does not exist yet.
pub fn require(path: &Path, producer: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing_artifact(path, producer))
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("json", e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        let err = bugloc_core::Error::json(e, &text);
        CliError::new(err.kind(), format!("{}: {err}", path.display()))
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).map_err(|e| CliError::new("json", e.to_string()))?;
        buf.write_all(b"\n").expect("write to vec");
    }
    write_bytes(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                CliError::new("parse", format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
