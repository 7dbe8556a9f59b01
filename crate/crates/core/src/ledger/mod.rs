//! The private permissioned chain: ballot transactions, blocks, the
//! nullifier set, validation and full-chain audit.

pub mod audit;
pub mod block;
pub mod state;
pub mod store;
pub mod tx;

pub use audit::{verify_chain, AuditFinding, AuditReport, FindingKind};
pub use block::{
    ballot_root, block_hash, block_signature_message, config_digest, genesis, genesis_unsigned,
    verify_block_signature, Block, BlockSignature,
};
pub use state::{BallotLocation, BlockError, ChainState, LedgerError, TxError};
pub use store::LedgerStore;
pub use tx::{token_message, BallotTx, TokenSerial};
