//! Sealing batches of committed ballots onto a public chain.
//!
//! An anchor covers a contiguous block range starting after the previous
//! anchor (the first starts at block 1; genesis holds no ballots). Its root
//! is the Merkle root over the ballot hashes in that range in commit order,
//! or over the single all-zero digest when the range holds only heartbeat
//! blocks.

pub mod agent;
pub mod journal;
pub mod mockchain;

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::config::AnchorPolicy;
use crate::crypto::{merkle_root, Digest, MerkleProof, MerkleTree};
use crate::ledger::Block;

pub use agent::{Anchorer, Backoff};
pub use journal::AnchorJournal;
pub use mockchain::{MockChain, MockChainEntry};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorRecord {
    pub anchor_seq: u64,
    pub first_block: u64,
    pub last_block: u64,
    pub batch_root: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txid: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_height: Option<u64>,
    pub created_at: u64,
}

/// What goes on the public chain: metadata and the root, nothing else.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorPayload {
    pub election_id: String,
    pub anchor_seq: u64,
    pub first_block: u64,
    pub last_block: u64,
    pub batch_root: Digest,
}

impl AnchorPayload {
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, canonical::CanonicalError> {
        canonical::from_canonical_bytes(bytes)
    }
}

impl AnchorRecord {
    pub fn payload(&self, election_id: &str) -> AnchorPayload {
        AnchorPayload {
            election_id: election_id.to_owned(),
            anchor_seq: self.anchor_seq,
            first_block: self.first_block,
            last_block: self.last_block,
            batch_root: self.batch_root,
        }
    }

    pub fn covers(&self, block_index: u64) -> bool {
        (self.first_block..=self.last_block).contains(&block_index)
    }

    pub fn to_canonical(&self) -> String {
        canonical::to_canonical(self)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("public chain unavailable: {0}")]
pub struct AdapterError(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnchorError {
    #[error("no blocks above the last anchored height")]
    NothingToAnchor,
    #[error(transparent)]
    AdapterUnavailable(#[from] AdapterError),
    #[error("unknown public-chain transaction {0}")]
    UnknownTxid(Digest),
    #[error("anchor journal: {0}")]
    Journal(String),
}

/// A public chain that stores opaque payloads.
pub trait PublicChainAdapter: Send + Sync {
    /// Publishes `payload`, returning its transaction id and height.
    fn submit(&self, payload: &[u8]) -> Result<(Digest, u64), AdapterError>;
    /// The payload and height of `txid`, or `None` if no such transaction.
    fn fetch(&self, txid: &Digest) -> Result<Option<(Vec<u8>, u64)>, AdapterError>;
}

impl<T: PublicChainAdapter + ?Sized> PublicChainAdapter for std::sync::Arc<T> {
    fn submit(&self, payload: &[u8]) -> Result<(Digest, u64), AdapterError> {
        (**self).submit(payload)
    }

    fn fetch(&self, txid: &Digest) -> Result<Option<(Vec<u8>, u64)>, AdapterError> {
        (**self).fetch(txid)
    }
}

/// True when blocks above the last anchor exist and either enough of them
/// have accumulated or enough time has passed.
pub fn anchor_due(
    policy: &AnchorPolicy,
    last_anchored: u64,
    head: u64,
    last_anchor_time: u64,
    now: u64,
) -> bool {
    let pending = head.saturating_sub(last_anchored);
    pending >= 1
        && (pending >= policy.blocks || now.saturating_sub(last_anchor_time) >= policy.seconds)
}

/// Ballot hashes of `blocks` in commit order, recomputed from the stored
/// transactions, or the zero digest alone for a ballot-free range.
pub fn batch_leaves<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> Vec<Digest> {
    let mut leaves: Vec<Digest> = blocks
        .into_iter()
        .flat_map(|b| b.txs.iter().map(|tx| tx.compute_hash()))
        .collect();
    if leaves.is_empty() {
        leaves.push(Digest::ZERO);
    }
    leaves
}

pub fn batch_root(leaves: &[Digest]) -> Digest {
    merkle_root(leaves).expect("batch leaves are never empty")
}

/// Builds the next (unsubmitted) record over `blocks[last_anchored+1..]`.
/// `blocks` is the whole chain, genesis first.
pub fn build_anchor(
    blocks: &[impl Borrow<Block>],
    last_anchored: u64,
    anchor_seq: u64,
    now: u64,
) -> Result<AnchorRecord, AnchorError> {
    build_anchor_capped(blocks, last_anchored, u64::MAX, anchor_seq, now)
}

/// Like [`build_anchor`] but covering at most `max_blocks` blocks, so a
/// backlog is anchored in policy-sized batches.
pub fn build_anchor_capped(
    blocks: &[impl Borrow<Block>],
    last_anchored: u64,
    max_blocks: u64,
    anchor_seq: u64,
    now: u64,
) -> Result<AnchorRecord, AnchorError> {
    let head = blocks
        .len()
        .checked_sub(1)
        .ok_or(AnchorError::NothingToAnchor)? as u64;
    if head <= last_anchored {
        return Err(AnchorError::NothingToAnchor);
    }
    let first_block = last_anchored + 1;
    let last_block = head.min(last_anchored.saturating_add(max_blocks.max(1)));
    let range = &blocks[first_block as usize..=last_block as usize];
    let leaves = batch_leaves(range.iter().map(Borrow::borrow));
    Ok(AnchorRecord {
        anchor_seq,
        first_block,
        last_block,
        batch_root: batch_root(&leaves),
        txid: None,
        public_height: None,
        created_at: now,
    })
}

/// Publishes `record`, filling in its txid and public height.
pub fn submit_anchor(
    adapter: &dyn PublicChainAdapter,
    election_id: &str,
    mut record: AnchorRecord,
) -> Result<AnchorRecord, AnchorError> {
    let payload = record.payload(election_id).to_bytes();
    let (txid, height) = adapter.submit(&payload)?;
    record.txid = Some(txid);
    record.public_height = Some(height);
    Ok(record)
}

/// Recomputes the record's root from the local chain and compares it and
/// the metadata with the payload published under its txid.
pub fn verify_anchor(
    blocks: &[impl Borrow<Block>],
    record: &AnchorRecord,
    election_id: &str,
    adapter: &dyn PublicChainAdapter,
) -> Result<bool, AnchorError> {
    let txid = record.txid.ok_or(AnchorError::UnknownTxid(Digest::ZERO))?;
    let (payload, height) = adapter
        .fetch(&txid)?
        .ok_or(AnchorError::UnknownTxid(txid))?;
    let Ok(published) = AnchorPayload::from_bytes(&payload) else {
        return Ok(false);
    };
    if published != record.payload(election_id) || Some(height) != record.public_height {
        return Ok(false);
    }
    let (first, last) = (record.first_block as usize, record.last_block as usize);
    if first == 0 || first > last || last >= blocks.len() {
        return Ok(false);
    }
    let local: Vec<&Block> = blocks[first..=last].iter().map(Borrow::borrow).collect();
    if local.iter().zip(first as u64..).any(|(b, i)| b.index != i) {
        return Ok(false);
    }
    let leaves = batch_leaves(local);
    Ok(batch_root(&leaves) == published.batch_root)
}

/// Checks a sequence of records is numbered 1.. and covers contiguous,
/// non-overlapping ranges starting at block 1.
pub fn check_contiguous(records: &[AnchorRecord]) -> bool {
    let mut next = 1;
    for (i, r) in records.iter().enumerate() {
        if r.anchor_seq != i as u64 + 1 || r.first_block != next || r.last_block < r.first_block {
            return false;
        }
        next = r.last_block + 1;
    }
    true
}

/// The inclusion proof of `ballot_hash` under `record`'s batch root.
pub fn prove_inclusion(
    blocks: &[impl Borrow<Block>],
    record: &AnchorRecord,
    ballot_hash: &Digest,
) -> Option<MerkleProof> {
    let range = blocks.get(record.first_block as usize..=record.last_block as usize)?;
    let leaves = batch_leaves(range.iter().map(Borrow::borrow));
    let index = leaves.iter().position(|l| l == ballot_hash)?;
    MerkleTree::build(&leaves).ok()?.prove(index).ok()
}
