//! A stand-in public chain: an append-only list of payloads, optionally
//! persisted one canonical line per transaction.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{AdapterError, PublicChainAdapter};
use crate::canonical;
use crate::crypto::{sha256_concat, Digest};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockChainEntry {
    pub height: u64,
    pub txid: Digest,
    /// Hex of the payload bytes.
    pub payload: String,
}

pub fn mock_txid(payload: &[u8], height: u64) -> Digest {
    sha256_concat(&[payload, height.to_string().as_bytes()])
}

#[derive(Default)]
struct Inner {
    entries: Vec<MockChainEntry>,
    index: HashMap<Digest, usize>,
    file: Option<File>,
    /// Calls left to fail, for fault injection.
    failures: u32,
}

#[derive(Default)]
pub struct MockChain {
    inner: Mutex<Inner>,
}

impl MockChain {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens or creates a persisted chain, replaying existing lines.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref();
        let mut inner = Inner::default();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                let entry: MockChainEntry = canonical::from_canonical(&line)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                if entry.height != inner.entries.len() as u64 {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        "mockchain heights out of order",
                    ));
                }
                let at = inner.entries.len();
                inner.index.insert(entry.txid, at);
                inner.entries.push(entry);
            }
        }
        inner.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(MockChain {
            inner: Mutex::new(inner),
        })
    }

    /// Makes the next `calls` submit or fetch calls fail.
    pub fn fail_next(&self, calls: u32) {
        self.inner.lock().failures = calls;
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<MockChainEntry> {
        self.inner.lock().entries.clone()
    }

    /// Replaces a stored payload in memory. Only for tamper tests: a real
    /// public chain cannot be edited.
    #[doc(hidden)]
    pub fn overwrite_payload(&self, txid: &Digest, payload: &[u8]) -> bool {
        let mut inner = self.inner.lock();
        match inner.index.get(txid).copied() {
            Some(i) => {
                inner.entries[i].payload = hex::encode(payload);
                true
            }
            None => false,
        }
    }

    fn take_failure(inner: &mut Inner) -> Result<(), AdapterError> {
        if inner.failures > 0 {
            inner.failures -= 1;
            return Err(AdapterError("injected failure".into()));
        }
        Ok(())
    }
}

impl PublicChainAdapter for MockChain {
    fn submit(&self, payload: &[u8]) -> Result<(Digest, u64), AdapterError> {
        let mut inner = self.inner.lock();
        Self::take_failure(&mut inner)?;
        let height = inner.entries.len() as u64;
        let txid = mock_txid(payload, height);
        let entry = MockChainEntry {
            height,
            txid,
            payload: hex::encode(payload),
        };
        if let Some(file) = inner.file.as_mut() {
            let mut line = canonical::to_canonical(&entry);
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| AdapterError(e.to_string()))?;
        }
        let at = inner.entries.len();
        inner.index.insert(txid, at);
        inner.entries.push(entry);
        Ok((txid, height))
    }

    fn fetch(&self, txid: &Digest) -> Result<Option<(Vec<u8>, u64)>, AdapterError> {
        let mut inner = self.inner.lock();
        Self::take_failure(&mut inner)?;
        Ok(inner.index.get(txid).map(|&i| {
            let e = &inner.entries[i];
            (hex::decode(&e.payload).expect("stored as hex"), e.height)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn txid_and_roundtrip() {
        let chain = MockChain::in_memory();
        let (txid, height) = chain.submit(b"abc").unwrap();
        assert_eq!(height, 0);
        assert_eq!(txid, crate::crypto::sha256(b"abc0"));
        assert_eq!(chain.fetch(&txid).unwrap(), Some((b"abc".to_vec(), 0)));
        let (second, h2) = chain.submit(b"abc").unwrap();
        assert_eq!(h2, 1);
        assert_ne!(second, txid);
        assert_eq!(chain.fetch(&crate::crypto::sha256(b"x")).unwrap(), None);
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.jsonl");
        let chain = MockChain::open(&path).unwrap();
        let (a, _) = chain.submit(b"one").unwrap();
        chain.submit(b"two").unwrap();
        drop(chain);
        let chain = MockChain::open(&path).unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!(chain.fetch(&a).unwrap(), Some((b"one".to_vec(), 0)));
        let (_, h) = chain.submit(b"three").unwrap();
        assert_eq!(h, 2);
    }

    #[test]
    fn injected_failures() {
        let chain = MockChain::in_memory();
        chain.fail_next(2);
        assert!(chain.submit(b"p").is_err());
        assert!(chain.submit(b"p").is_err());
        assert!(chain.submit(b"p").is_ok());
        assert_eq!(chain.len(), 1);
    }
}
