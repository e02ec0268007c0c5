//! Append-only JSON-lines checkpoints, one file per pipeline stage.
//!
//! Each stage file sits next to a small `<stage>.meta.json` holding the stage
//! key (a digest of everything the stage depends on) and a completion flag.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Groups,
    Generations,
    Scores,
    Curated,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Groups, Stage::Generations, Stage::Scores, Stage::Curated];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Groups => "groups",
            Stage::Generations => "generations",
            Stage::Scores => "scores",
            Stage::Curated => "curated",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CheckpointError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| CheckpointError::UnknownStage(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unknown checkpoint stage {0:?}")]
    UnknownStage(String),
    #[error("{path}:{line}: corrupt checkpoint record: {message}")]
    CorruptCheckpoint { path: PathBuf, line: usize, message: String },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMeta {
    pub key: String,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoints {
    dir: PathBuf,
}

impl Checkpoints {
    pub fn open(dir: &Path) -> Result<Self, CheckpointError> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn records_path(&self, stage: Stage) -> PathBuf {
        self.dir.join(format!("{stage}.jsonl"))
    }

    fn meta_path(&self, stage: Stage) -> PathBuf {
        self.dir.join(format!("{stage}.meta.json"))
    }

    pub fn meta(&self, stage: Stage) -> Option<StageMeta> {
        let text = fs::read_to_string(self.meta_path(stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn set_meta(&self, stage: Stage, meta: &StageMeta) -> Result<(), CheckpointError> {
        let path = self.meta_path(stage);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(meta).expect("meta serializes"))?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Discards any records and marks the stage as started under `key`.
    pub fn reset(&self, stage: Stage, key: &str) -> Result<(), CheckpointError> {
        fs::write(self.records_path(stage), b"")?;
        self.set_meta(stage, &StageMeta { key: key.to_string(), complete: false })
    }

    pub fn mark_complete(&self, stage: Stage, key: &str) -> Result<(), CheckpointError> {
        self.set_meta(stage, &StageMeta { key: key.to_string(), complete: true })
    }

    pub fn write_checkpoint<T: Serialize>(&self, stage: Stage, records: &[T]) -> Result<(), CheckpointError> {
        let mut w = self.writer(stage)?;
        for r in records {
            w.append(r)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<T: DeserializeOwned>(&self, stage: Stage) -> Result<Vec<T>, CheckpointError> {
        read_jsonl(&self.records_path(stage))
    }

    /// Appender for `stage`. A torn trailing line left by an interrupted run is cut off first.
    pub fn writer(&self, stage: Stage) -> Result<CheckpointWriter, CheckpointError> {
        let path = self.records_path(stage);
        if let Ok(bytes) = fs::read(&path) {
            if !bytes.is_empty() && !bytes.ends_with(b"\n") {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                warn!(path = %path.display(), "truncating torn checkpoint line");
                fs::write(&path, &bytes[..keep])?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(CheckpointWriter { file })
    }
}

pub struct CheckpointWriter {
    file: fs::File,
}

impl CheckpointWriter {
    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), CheckpointError> {
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}

/// Reads complete records. An unterminated final line is treated as torn and
/// skipped; a malformed terminated line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CheckpointError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    let mut segments = text.split_inclusive('\n').enumerate().peekable();
    while let Some((i, seg)) = segments.next() {
        let terminated = seg.ends_with('\n');
        let line = seg.trim_end_matches(['\n', '\r']);
        if !terminated && segments.peek().is_none() {
            if !line.trim().is_empty() {
                warn!(path = %path.display(), line = i + 1, "ignoring torn checkpoint line");
            }
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| CheckpointError::CorruptCheckpoint {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
