//! Cryptographic primitives: hashing, RSA blind signatures, ElGamal over a
//! prime-order subgroup, Shamir sharing and Merkle trees.
//!
//! Everything here is a pure function of its inputs. Randomness is always
//! passed in by the caller so test transcripts can be reproduced from a seed.

pub mod arith;
pub mod elgamal;
pub mod group;
pub mod hash;
pub mod merkle;
pub mod rsa;
pub mod shamir;

use thiserror::Error;

pub use elgamal::{ElgCiphertext, ElgKeyPair, PartialDecryption, MAX_CANDIDATES};
pub use group::GroupParams;
pub use hash::{sha256, sha256_concat, Digest};
pub use merkle::{
    merkle_prove, merkle_root, merkle_verify, MerkleProof, MerkleTree, ProofStep, Side,
};
pub use rsa::{RsaKey, RsaPublicKey};
pub use shamir::KeyShare;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("blinding factor is not invertible modulo n")]
    BlindingNotInvertible,
    #[error("value out of range")]
    OutOfRange,
    #[error("candidate {candidate} out of range (candidate count {candidate_count})")]
    CandidateOutOfRange {
        candidate: usize,
        candidate_count: usize,
    },
    #[error("decrypted value is not a candidate encoding")]
    NotACandidate,
    #[error("invalid threshold {threshold} of {share_count}")]
    BadThreshold {
        threshold: usize,
        share_count: usize,
    },
    #[error("insufficient shares: need {needed}, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("duplicate share index {0}")]
    DuplicateShareIndex(u32),
    #[error("empty batch")]
    EmptyBatch,
    #[error("index {index} out of range for {len} leaves")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid group parameters: {0}")]
    InvalidGroup(String),
    #[error("invalid digest {0:?}")]
    InvalidDigest(String),
}
