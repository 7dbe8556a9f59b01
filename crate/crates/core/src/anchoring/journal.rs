//! Append-only record of completed anchors, one canonical line each.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{check_contiguous, AnchorError, AnchorRecord};
use crate::canonical;

#[derive(Debug, Default)]
pub struct AnchorJournal {
    records: Vec<AnchorRecord>,
    file: Option<(PathBuf, File)>,
}

fn journal_err(e: impl std::fmt::Display) -> AnchorError {
    AnchorError::Journal(e.to_string())
}

impl AnchorJournal {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, AnchorError> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path).map_err(journal_err)?).lines() {
                let line = line.map_err(journal_err)?;
                if line.is_empty() {
                    continue;
                }
                records.push(canonical::from_canonical(&line).map_err(journal_err)?);
            }
        }
        if !check_contiguous(&records) {
            return Err(AnchorError::Journal("records are not contiguous".into()));
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(journal_err)?;
        Ok(AnchorJournal {
            records,
            file: Some((path, file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn records(&self) -> &[AnchorRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&AnchorRecord> {
        self.records.last()
    }

    pub fn last_anchored(&self) -> u64 {
        self.last().map_or(0, |r| r.last_block)
    }

    pub fn next_seq(&self) -> u64 {
        self.records.len() as u64 + 1
    }

    /// Appends a submitted record that extends the journal contiguously.
    pub fn append(&mut self, record: AnchorRecord) -> Result<(), AnchorError> {
        if record.txid.is_none()
            || record.anchor_seq != self.next_seq()
            || record.first_block != self.last_anchored() + 1
            || record.last_block < record.first_block
        {
            return Err(AnchorError::Journal(format!(
                "record {} does not extend the journal",
                record.anchor_seq
            )));
        }
        if let Some((_, file)) = self.file.as_mut() {
            let mut line = record.to_canonical();
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(journal_err)?;
        }
        self.records.push(record);
        Ok(())
    }

    /// The anchor whose range contains `block_index`.
    pub fn covering(&self, block_index: u64) -> Option<&AnchorRecord> {
        let i = self.records.partition_point(|r| r.last_block < block_index);
        self.records.get(i).filter(|r| r.covers(block_index))
    }
}
