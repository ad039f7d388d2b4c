//! Resumable run state, one record per completed (report, organ) cell.
//!
//! On-disk shape (JSON, `format_version` 1):
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "corpus_id": "3f2a...",
//!   "config_hash": "9b1c...",
//!   "cells": {
//!     "<report_id>": {
//!       "liver": { "state": "completed", "exchanges": 7, "labels": [...], "failures": [] }
//!     }
//!   }
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::schema::{Organ, OrganFindingLabel};

use super::CellFailure;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Completed,
    CompletedWithFailures,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub state: CellState,
    pub exchanges: usize,
    pub labels: Vec<OrganFindingLabel>,
    #[serde(default)]
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub corpus_id: String,
    pub config_hash: String,
    pub cells: BTreeMap<String, BTreeMap<Organ, CellRecord>>,
}

impl Checkpoint {
    pub fn new(corpus_id: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            corpus_id: corpus_id.into(),
            config_hash: config_hash.into(),
            cells: BTreeMap::new(),
        }
    }

    pub fn is_completed(&self, report_id: &str, organ: Organ) -> bool {
        self.cells.get(report_id).is_some_and(|m| m.contains_key(&organ))
    }

    pub fn get(&self, report_id: &str, organ: Organ) -> Option<&CellRecord> {
        self.cells.get(report_id).and_then(|m| m.get(&organ))
    }

    /// Records a finished cell. Returns false, leaving the stored record
    /// untouched, if the cell was already completed.
    pub fn record(&mut self, report_id: &str, organ: Organ, record: CellRecord) -> bool {
        let organs = self.cells.entry(report_id.to_string()).or_default();
        if organs.contains_key(&organ) {
            return false;
        }
        organs.insert(organ, record);
        true
    }

    pub fn completed_cells(&self) -> usize {
        self.cells.values().map(BTreeMap::len).sum()
    }

    pub fn load(path: &Path) -> io::Result<Checkpoint> {
        let text = fs::read_to_string(path)?;
        let cp: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        if cp.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported checkpoint format_version {}", cp.format_version),
            ));
        }
        Ok(cp)
    }

    /// Writes via a temporary file and rename so a crash never leaves a
    /// truncated checkpoint.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> CellRecord {
        CellRecord { state: CellState::Completed, exchanges: 2, labels: vec![], failures: vec![] }
    }

    #[test]
    fn completed_cells_never_revert() {
        let mut cp = Checkpoint::new("c", "h");
        assert!(cp.record("r1", Organ::Liver, record()));
        let mut other = record();
        other.exchanges = 99;
        assert!(!cp.record("r1", Organ::Liver, other));
        assert_eq!(cp.get("r1", Organ::Liver).unwrap().exchanges, 2);
        assert!(cp.is_completed("r1", Organ::Liver));
        assert!(!cp.is_completed("r1", Organ::Spleen));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.json");
        let mut cp = Checkpoint::new("c", "h");
        cp.record("r1", Organ::LeftKidney, record());
        cp.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), cp);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"left_kidney\""));
        assert!(text.contains("\"format_version\":1"));
    }
}
