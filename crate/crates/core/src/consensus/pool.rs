use std::collections::{BTreeMap, HashMap};

use crate::crypto::Digest;
use crate::ledger::BallotTx;

/// Pending transactions in arrival order, deduplicated by ballot hash.
#[derive(Clone, Debug, Default)]
pub struct TxPool {
    next: u64,
    order: BTreeMap<u64, BallotTx>,
    index: HashMap<Digest, u64>,
}

impl TxPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if the ballot is already pending.
    pub fn insert(&mut self, tx: BallotTx) -> bool {
        if self.index.contains_key(&tx.ballot_hash) {
            return false;
        }
        self.index.insert(tx.ballot_hash, self.next);
        self.order.insert(self.next, tx);
        self.next += 1;
        true
    }

    pub fn contains(&self, ballot_hash: &Digest) -> bool {
        self.index.contains_key(ballot_hash)
    }

    pub fn remove(&mut self, ballot_hash: &Digest) -> Option<BallotTx> {
        let seq = self.index.remove(ballot_hash)?;
        self.order.remove(&seq)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&BallotTx) -> bool) {
        let index = &mut self.index;
        self.order.retain(|_, tx| {
            let kept = keep(tx);
            if !kept {
                index.remove(&tx.ballot_hash);
            }
            kept
        });
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &BallotTx> {
        self.order.values()
    }
}
