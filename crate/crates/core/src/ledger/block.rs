use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use super::tx::BallotTx;
use crate::canonical::{self, decimal};
use crate::config::{ElectionConfig, Mode, ValidatorId};
use crate::crypto::{self, merkle_root, rsa, sha256, sha256_concat, Digest, RsaKey, RsaPublicKey};

const BLOCK_SIG_DOMAIN: &[u8] = b"BLOCK-SIG";
const GENESIS_DOMAIN: &[u8] = b"GENESIS";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSignature {
    pub validator_id: ValidatorId,
    #[serde(with = "decimal")]
    pub signature: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub index: u64,
    pub timestamp: u64,
    pub prev_hash: Digest,
    pub election_id: String,
    /// Recorded on the genesis block only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub txs: Vec<BallotTx>,
    pub ballot_root: Digest,
    pub hash: Digest,
    pub signatures: Vec<BlockSignature>,
}

/// The hashed part of a block.
#[derive(Serialize)]
struct Header<'a> {
    index: u64,
    timestamp: u64,
    prev_hash: &'a Digest,
    ballot_root: &'a Digest,
    election_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<Mode>,
}

/// Merkle root over the transactions' ballot hashes, or all zeros when empty.
pub fn ballot_root(txs: &[BallotTx]) -> Digest {
    let leaves: Vec<Digest> = txs.iter().map(|tx| tx.ballot_hash).collect();
    merkle_root(&leaves).unwrap_or(Digest::ZERO)
}

pub fn config_digest(config: &ElectionConfig) -> Digest {
    sha256_concat(&[GENESIS_DOMAIN, config.to_canonical().as_bytes()])
}

pub fn block_signature_message(hash: &Digest) -> Digest {
    sha256_concat(&[BLOCK_SIG_DOMAIN, hash.as_bytes()])
}

impl Block {
    /// Assembles an unsigned block; `ballot_root` and `hash` are derived.
    pub fn new(
        index: u64,
        timestamp: u64,
        prev_hash: Digest,
        election_id: impl Into<String>,
        txs: Vec<BallotTx>,
    ) -> Self {
        let mut block = Block {
            index,
            timestamp,
            prev_hash,
            election_id: election_id.into(),
            mode: None,
            ballot_root: ballot_root(&txs),
            txs,
            hash: Digest::ZERO,
            signatures: Vec::new(),
        };
        block.hash = block.compute_hash();
        block
    }

    /// Canonical header bytes: index, timestamp, prev_hash, ballot_root,
    /// election_id (and mode on genesis).
    pub fn header_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(&Header {
            index: self.index,
            timestamp: self.timestamp,
            prev_hash: &self.prev_hash,
            ballot_root: &self.ballot_root,
            election_id: &self.election_id,
            mode: self.mode,
        })
    }

    pub fn compute_hash(&self) -> Digest {
        sha256(&self.header_bytes())
    }

    pub fn sign_with(&self, validator_id: ValidatorId, key: &RsaKey) -> BlockSignature {
        BlockSignature {
            validator_id,
            signature: rsa::sign(&block_signature_message(&self.hash), key),
        }
    }

    pub fn to_canonical(&self) -> String {
        canonical::to_canonical(self)
    }

    pub fn ballot_hashes(&self) -> impl Iterator<Item = &Digest> {
        self.txs.iter().map(|tx| &tx.ballot_hash)
    }
}

pub fn block_hash(block: &Block) -> Digest {
    block.compute_hash()
}

pub fn verify_block_signature(hash: &Digest, sig: &BlockSignature, key: &RsaPublicKey) -> bool {
    crypto::rsa::verify(&block_signature_message(hash), &sig.signature, key)
}

/// The unsigned genesis block for `config`. Its `prev_hash` is the digest
/// of the canonical config, so identical configs give identical genesis
/// hashes and any config change gives a different one.
pub fn genesis_unsigned(config: &ElectionConfig) -> Block {
    let mut block = Block {
        index: 0,
        timestamp: config.open_time,
        prev_hash: config_digest(config),
        election_id: config.election_id.clone(),
        mode: Some(config.mode),
        txs: Vec::new(),
        ballot_root: Digest::ZERO,
        hash: Digest::ZERO,
        signatures: Vec::new(),
    };
    block.hash = block.compute_hash();
    block
}

/// Genesis signed by every supplied validator key.
pub fn genesis(config: &ElectionConfig, keys: &[(ValidatorId, &RsaKey)]) -> Block {
    let mut block = genesis_unsigned(config);
    block.signatures = keys
        .iter()
        .map(|(id, key)| block.sign_with(*id, key))
        .collect();
    block.signatures.sort_by_key(|s| s.validator_id);
    block
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::ElgCiphertext;
    use crate::ledger::tx::TokenSerial;

    fn block() -> Block {
        let tx = BallotTx::new(
            "e",
            ElgCiphertext {
                c1: 9u32.into(),
                c2: 9u32.into(),
            },
            TokenSerial::from_bytes([1; 32]),
            5u32.into(),
            None,
        );
        Block::new(3, 100, Digest::ZERO, "e", vec![tx])
    }

    #[test]
    fn header_serialization_is_fixed() {
        let b = Block::new(1, 42, Digest::ZERO, "e", vec![]);
        assert_eq!(
            String::from_utf8(b.header_bytes()).unwrap(),
            format!(
                r#"{{"ballot_root":"{0}","election_id":"e","index":1,"prev_hash":"{0}","timestamp":42}}"#,
                "0".repeat(64)
            )
        );
    }

    #[test]
    fn hash_recomputes_and_is_sensitive() {
        let b = block();
        assert_eq!(block_hash(&b), b.hash);
        let mut changed = b.clone();
        changed.prev_hash = sha256(b"x");
        assert_ne!(block_hash(&changed), b.hash);
        let mut resigned = b.clone();
        resigned.signatures.push(BlockSignature {
            validator_id: 9,
            signature: 1u32.into(),
        });
        assert_eq!(block_hash(&resigned), b.hash);
    }

    #[test]
    fn empty_block_root_is_zero() {
        assert_eq!(
            Block::new(1, 0, Digest::ZERO, "e", vec![]).ballot_root,
            Digest::ZERO
        );
    }
}

#[cfg(test)]
mod header_props {
    use super::*;
    use proptest::prelude::*;

    fn digest() -> impl Strategy<Value = Digest> {
        any::<[u8; 32]>().prop_map(Digest::from_bytes)
    }

    proptest! {
        #[test]
        fn distinct_headers_hash_differently(
            a in (any::<u64>(), any::<u64>(), digest(), "[a-z\"\\\\]{0,6}"),
            b in (any::<u64>(), any::<u64>(), digest(), "[a-z\"\\\\]{0,6}"),
        ) {
            let x = Block::new(a.0, a.1, a.2, a.3.clone(), vec![]);
            let y = Block::new(b.0, b.1, b.2, b.3.clone(), vec![]);
            prop_assert_eq!(x.header_bytes() == y.header_bytes(), a == b);
            prop_assert_eq!(x.hash == y.hash, a == b);
        }
    }
}
