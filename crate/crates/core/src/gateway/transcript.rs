use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ChatExchange;

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("unknown transcript id `{0}`")]
    UnknownId(String),
    #[error("transcript I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed transcript entry: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub id: String,
    pub scope: String,
    pub seq: usize,
    pub stage: String,
    pub exchange: ChatExchange,
}

struct Inner {
    writer: Option<BufWriter<File>>,
    entries: HashMap<String, TranscriptEntry>,
}

/// Append-only log of every LLM exchange.
///
/// Ids are `<scope>#<seq>` where `seq` counts puts within one
/// [`TranscriptScope`]. A scope replayed after a resume reuses the same ids;
/// the newest line for an id wins on read.
pub struct TranscriptStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl TranscriptStore {
    pub fn in_memory() -> Self {
        TranscriptStore {
            path: None,
            inner: Mutex::new(Inner { writer: None, entries: HashMap::new() }),
        }
    }

    /// Opens (creating if needed) a JSONL transcript file for appending.
    pub fn open(path: &Path) -> Result<Self, TranscriptError> {
        let entries = if path.exists() { Self::read_entries(path)? } else { HashMap::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| TranscriptError::Io { path: path.to_path_buf(), source })?;
        Ok(TranscriptStore {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner { writer: Some(BufWriter::new(file)), entries }),
        })
    }

    /// Read-only load of an existing transcript file.
    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        Ok(TranscriptStore {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner { writer: None, entries: Self::read_entries(path)? }),
        })
    }

    fn read_entries(path: &Path) -> Result<HashMap<String, TranscriptEntry>, TranscriptError> {
        let io = |source| TranscriptError::Io { path: path.to_path_buf(), source };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut entries = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(line).map_err(|e| {
                TranscriptError::Malformed { path: path.to_path_buf(), line: n + 1, message: e.to_string() }
            })?;
            entries.insert(entry.id.clone(), entry);
        }
        Ok(entries)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn scope(&self, scope: impl Into<String>) -> TranscriptScope<'_> {
        TranscriptScope { store: self, scope: scope.into(), next: 0 }
    }

    fn append(&self, entry: TranscriptEntry) -> Result<(), TranscriptError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(writer) = inner.writer.as_mut() {
            let path = self.path.clone().unwrap_or_default();
            let line = serde_json::to_string(&entry).expect("transcript entries serialize");
            writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .and_then(|_| writer.flush())
                .map_err(|source| TranscriptError::Io { path, source })?;
        }
        inner.entries.insert(entry.id.clone(), entry);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<ChatExchange, TranscriptError> {
        self.entry(id).map(|e| e.exchange)
    }

    pub fn entry(&self, id: &str) -> Result<TranscriptEntry, TranscriptError> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        inner
            .entries
            .get(id)
            .cloned()
            .ok_or_else(|| TranscriptError::UnknownId(id.to_string()))
    }

    /// Entries of one scope in the order they were issued.
    pub fn scope_entries(&self, scope: &str) -> Vec<TranscriptEntry> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let mut out: Vec<_> = inner.entries.values().filter(|e| e.scope == scope).cloned().collect();
        out.sort_by_key(|e| e.seq);
        out
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle that numbers the exchanges of one (report, organ) cell.
pub struct TranscriptScope<'a> {
    store: &'a TranscriptStore,
    scope: String,
    next: usize,
}

impl TranscriptScope<'_> {
    pub fn put(&mut self, stage: &str, exchange: ChatExchange) -> Result<String, TranscriptError> {
        let seq = self.next;
        self.next += 1;
        let id = format!("{}#{seq}", self.scope);
        self.store.append(TranscriptEntry {
            id: id.clone(),
            scope: self.scope.clone(),
            seq,
            stage: stage.to_string(),
            exchange,
        })?;
        Ok(id)
    }

    pub fn issued(&self) -> usize {
        self.next
    }
}
