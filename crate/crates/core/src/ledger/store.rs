//! Append-only ledger file: one canonical block per line.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::audit::{verify_chain, AuditReport, FindingKind};
use super::block::Block;
use crate::canonical;
use crate::config::ElectionConfig;

#[derive(Debug)]
pub struct LedgerStore {
    path: PathBuf,
    file: File,
}

impl LedgerStore {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(LedgerStore { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one block and syncs before returning.
    pub fn append(&mut self, block: &Block) -> io::Result<()> {
        let mut line = block.to_canonical();
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()
    }
}

/// One decoded line of a ledger file.
pub type LedgerLine = Result<Block, String>;

pub fn read_ledger_lines(path: impl AsRef<Path>) -> io::Result<Vec<LedgerLine>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.split(b'\n') {
        let line = line?;
        out.push(parse_block_line(&line));
    }
    Ok(out)
}

pub fn parse_block_line(line: &[u8]) -> LedgerLine {
    canonical::from_canonical_bytes::<Block>(line).map_err(|e| e.to_string())
}

pub fn serialize_ledger<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> String {
    blocks
        .into_iter()
        .map(|b| {
            let mut line = b.to_canonical();
            line.push('\n');
            line
        })
        .collect()
}

/// Audits decoded ledger lines. Undecodable lines are findings too, and the
/// remaining blocks are still checked in order.
pub fn audit_lines(lines: &[LedgerLine], config: &ElectionConfig) -> AuditReport {
    let unparseable: Vec<(u64, String)> = lines
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.as_ref().err().map(|e| (i as u64, e.clone())))
        .collect();
    if unparseable.is_empty() {
        let blocks: Vec<Block> = lines
            .iter()
            .filter_map(|l| l.as_ref().ok().cloned())
            .collect();
        return verify_chain(&blocks, config);
    }
    let mut report = AuditReport::default();
    for (index, error) in unparseable {
        report.push(index, FindingKind::Unparseable(error));
    }
    // Audit the decodable prefix so later findings are still reported.
    let prefix: Vec<Block> = lines
        .iter()
        .map_while(|l| l.as_ref().ok().cloned())
        .collect();
    if !prefix.is_empty() {
        report
            .findings
            .extend(verify_chain(&prefix, config).findings);
    }
    report.findings.sort_by_key(|f| f.block_index);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn append_read_and_audit() {
        let setup = testkit::toy_election(4);
        let blocks = testkit::build_chain(&setup, 3, 1, &mut ChaCha20Rng::seed_from_u64(8));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let mut store = LedgerStore::open(&path).unwrap();
        for b in &blocks {
            store.append(b).unwrap();
        }
        drop(store);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, serialize_ledger(&blocks));
        let lines = read_ledger_lines(&path).unwrap();
        assert_eq!(lines.len(), 4);
        assert!(audit_lines(&lines, &setup.config).is_clean());

        // A single flipped byte in the middle of the file is reported.
        let mut bytes = text.into_bytes();
        let at = bytes.len() / 2;
        bytes[at] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        let lines = read_ledger_lines(&path).unwrap();
        assert!(!audit_lines(&lines, &setup.config).is_clean());
    }

    #[test]
    fn unparseable_line_is_a_finding() {
        let setup = testkit::toy_election(4);
        let blocks = testkit::build_chain(&setup, 2, 1, &mut ChaCha20Rng::seed_from_u64(8));
        let mut lines: Vec<LedgerLine> = blocks.into_iter().map(Ok).collect();
        lines.push(parse_block_line(b"{\"index\":3}"));
        let report = audit_lines(&lines, &setup.config);
        assert_eq!(report.flagged_blocks(), [3]);
        assert!(matches!(
            report.findings[0].kind,
            FindingKind::Unparseable(_)
        ));
    }
}
