//! Append-only JSON Lines result store.
//!
//! One record per line, tagged by `kind` ("transcript" or "oneshot"), each
//! carrying `schema: 1`. Serialized lines are checked against registered
//! secrets before they touch disk.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chatroom::{Transcript, TRANSCRIPT_SCHEMA_VERSION};
use crate::oneshot::OneShotResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoreRecord {
    Transcript(Transcript),
    Oneshot(OneShotResult),
}

impl StoreRecord {
    pub fn schema(&self) -> u32 {
        match self {
            StoreRecord::Transcript(t) => t.schema,
            StoreRecord::Oneshot(o) => o.schema,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store i/o error on `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("store line {line} is not a valid record: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
    #[error("store line {line} has unsupported schema version {found} (supported: {supported})")]
    UnsupportedSchema {
        line: usize,
        found: u32,
        supported: u32,
    },
    #[error("refusing to write a record containing a registered secret")]
    SecretLeak,
}

/// Writer half of the store. Lines are flushed per append so concurrent
/// readers see complete records.
pub struct StoreWriter {
    path: PathBuf,
    file: File,
    secrets: Vec<String>,
}

impl StoreWriter {
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::with_secrets(path, Vec::new())
    }

    /// Opens the store for appending; `secrets` are strings that must
    /// never appear in serialized output (API keys).
    pub fn with_secrets(path: impl AsRef<Path>, secrets: Vec<String>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| StoreError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| StoreError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(StoreWriter {
            path,
            file,
            secrets: secrets.into_iter().filter(|s| !s.is_empty()).collect(),
        })
    }

    pub fn append(&mut self, record: &StoreRecord) -> Result<(), StoreError> {
        let line = serde_json::to_string(record).expect("records serialize");
        if self.secrets.iter().any(|secret| line.contains(secret)) {
            return Err(StoreError::SecretLeak);
        }
        writeln!(self.file, "{line}").map_err(|source| StoreError::Io {
            path: self.path.display().to_string(),
            source,
        })?;
        self.file.flush().map_err(|source| StoreError::Io {
            path: self.path.display().to_string(),
            source,
        })
    }
}

/// Reads every record in the store, rejecting unknown schema versions.
pub fn read_store(path: impl AsRef<Path>) -> Result<Vec<StoreRecord>, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StoreRecord =
            serde_json::from_str(&line).map_err(|source| StoreError::Malformed {
                line: index + 1,
                source,
            })?;
        if record.schema() != TRANSCRIPT_SCHEMA_VERSION {
            return Err(StoreError::UnsupportedSchema {
                line: index + 1,
                found: record.schema(),
                supported: TRANSCRIPT_SCHEMA_VERSION,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// The (cell, replicate) pairs already present in a store file, used to
/// resume campaigns. A missing file is an empty set.
pub fn completed_simulations(path: impl AsRef<Path>) -> Result<HashSet<(String, u32)>, StoreError> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let mut done = HashSet::new();
    for record in read_store(path)? {
        if let StoreRecord::Transcript(t) = record {
            done.insert((t.config.cell.clone(), t.config.replicate));
        }
    }
    Ok(done)
}

/// The (model, topic, pole) one-shot cells already present in a store.
pub fn completed_probes(
    path: impl AsRef<Path>,
) -> Result<HashSet<(String, String, String)>, StoreError> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let mut done = HashSet::new();
    for record in read_store(path)? {
        if let StoreRecord::Oneshot(o) = record {
            done.insert((
                o.model_id.clone(),
                o.topic_id.clone(),
                o.pole.slug().to_string(),
            ));
        }
    }
    Ok(done)
}
