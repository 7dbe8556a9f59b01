//! Hybrid online voting: anonymous blind-signed tokens, encrypted ballots on a
//! small permissioned validator chain, Merkle-root anchoring to a public
//! chain, receipts with inclusion proofs and a threshold trustee tally.

pub mod anchoring;
pub mod canonical;
pub mod client;
pub mod config;
pub mod consensus;
pub mod crypto;
pub mod election;
pub mod gateway;
pub mod ledger;
pub mod registrar;
pub mod setup;
pub mod tally;
#[doc(hidden)]
pub mod testkit;

pub use anchoring::{AnchorRecord, Anchorer, MockChain, PublicChainAdapter};
pub use client::{build_ballot, build_ballot_for, PendingToken, Token};
pub use config::{AnchorPolicy, ConsensusParams, ElectionConfig, Mode, ValidatorId};
pub use crypto::{Digest, MerkleProof};
pub use election::Election;
pub use gateway::{ElectionBackend, Gateway, Receipt};
pub use ledger::{BallotTx, Block, ChainState, TokenSerial, TxError};
pub use registrar::Registrar;
pub use setup::{generate_election, Credential, ElectionSetup, SetupParams};
pub use tally::TallyResult;
