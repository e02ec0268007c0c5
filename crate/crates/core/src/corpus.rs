//! Line-oriented sentence ingestion and exact-match deduplication.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid UTF-8")]
    EncodingError { path: PathBuf, line: usize },
    #[error("cannot write sentence store: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed sentence store record at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: usize,
    pub text: String,
    pub source: String,
}

/// Per-file ingest accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub source: String,
    pub ingested: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentenceStore {
    sentences: Vec<Sentence>,
    manifest: Vec<SourceEntry>,
}

/// Trims and collapses internal whitespace runs to a single ASCII space.
pub fn normalize_line(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn source_tag(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl SentenceStore {
    pub fn from_texts<I, S>(texts: I, source: &str) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut store = SentenceStore::default();
        let mut ingested = 0;
        let mut dropped = 0;
        for text in texts {
            let text = normalize_line(text.as_ref());
            if text.is_empty() {
                dropped += 1;
                continue;
            }
            store.push(text, source);
            ingested += 1;
        }
        store.manifest.push(SourceEntry { source: source.to_string(), ingested, dropped });
        store
    }

    fn push(&mut self, text: String, source: &str) {
        let id = self.sentences.len();
        self.sentences.push(Sentence { id, text, source: source.to_string() });
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn source_manifest(&self) -> &[SourceEntry] {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Sentence> {
        self.sentences.get(id)
    }

    /// JSON-lines serialization, one `{id, text, source}` record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&serde_json::to_string(s).expect("sentence serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        let mut store = SentenceStore::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: Sentence = serde_json::from_str(line)
                .map_err(|e| CorpusError::Malformed { line: i + 1, message: e.to_string() })?;
            if s.id != store.sentences.len() {
                return Err(CorpusError::Malformed {
                    line: i + 1,
                    message: format!("expected id {}, found {}", store.sentences.len(), s.id),
                });
            }
            store.sentences.push(s);
        }
        Ok(store)
    }
}

/// Reads every path in order, one sentence per non-blank line. Duplicates are kept.
pub fn ingest<P: AsRef<Path>>(paths: &[P]) -> Result<SentenceStore, CorpusError> {
    let mut store = SentenceStore::default();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path)
            .map_err(|source| CorpusError::FileUnreadable { path: path.to_path_buf(), source })?;
        let tag = source_tag(path);
        let mut ingested = 0;
        let mut dropped = 0;
        let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
        for (n, raw) in body.split(|&b| b == b'\n').enumerate() {
            if body.is_empty() {
                break;
            }
            let line = std::str::from_utf8(raw)
                .map_err(|_| CorpusError::EncodingError { path: path.to_path_buf(), line: n + 1 })?;
            let text = normalize_line(line.strip_suffix('\r').unwrap_or(line));
            if text.is_empty() {
                dropped += 1;
                continue;
            }
            store.push(text, &tag);
            ingested += 1;
        }
        store.manifest.push(SourceEntry { source: tag, ingested, dropped });
    }
    Ok(store)
}

/// Keeps the first occurrence of each exact text and renumbers ids densely.
pub fn deduplicate(store: &SentenceStore) -> SentenceStore {
    let mut seen: HashSet<&str> = HashSet::with_capacity(store.len());
    let mut out = SentenceStore { sentences: Vec::new(), manifest: store.manifest.clone() };
    for s in &store.sentences {
        if seen.insert(s.text.as_str()) {
            out.push(s.text.clone(), &s.source);
        }
    }
    out
}
