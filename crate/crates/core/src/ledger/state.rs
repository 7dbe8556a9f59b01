use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use super::block::{ballot_root, genesis_unsigned, verify_block_signature, Block};
use super::tx::{BallotTx, TokenSerial};
use crate::config::{ElectionConfig, Mode};
use crate::consensus::quorum;
use crate::crypto::{rsa, Digest};

/// Why a single transaction was rejected. Each variant names one check.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TxError {
    #[error("ballot belongs to a different election")]
    WrongElection,
    #[error("token signature does not verify")]
    InvalidToken,
    #[error("token already spent")]
    DoubleVote,
    #[error("ciphertext is not a pair of subgroup elements")]
    MalformedCiphertext,
    #[error("ballot hash does not match its contents")]
    HashMismatch,
    #[error("candidate label missing, unexpected or unknown")]
    InvalidLabel,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlockError {
    #[error("block does not extend the head (expected index {expected_index})")]
    BadParent { expected_index: u64 },
    #[error("stored hash does not match header")]
    BadHash,
    #[error("timestamp earlier than parent")]
    BadTimestamp,
    #[error("block belongs to a different election")]
    WrongElection,
    #[error("genesis block does not match the election config")]
    BadGenesis,
    #[error("mode marker outside genesis")]
    UnexpectedMode,
    #[error("ballot root does not match transactions")]
    BadRoot,
    #[error("block holds {count} transactions, limit {max}")]
    Oversized { count: usize, max: usize },
    #[error("transaction {index} invalid: {reason}")]
    TxInvalid { index: usize, reason: TxError },
    #[error("{valid} valid validator signatures, quorum is {required}")]
    BadQuorum { valid: usize, required: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("range {from}..={to} out of bounds (head {head})")]
    RangeOutOfBounds { from: u64, to: u64, head: u64 },
    #[error(transparent)]
    Block(#[from] BlockError),
}

/// Where a committed ballot lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BallotLocation {
    pub block_index: u64,
    pub position: usize,
}

/// The committed chain plus derived indexes. Cloning is cheap enough for
/// snapshots: blocks are shared.
#[derive(Clone, Debug)]
pub struct ChainState {
    config: Arc<ElectionConfig>,
    blocks: Vec<Arc<Block>>,
    nullifiers: HashSet<TokenSerial>,
    ballots: HashMap<Digest, BallotLocation>,
}

impl ChainState {
    /// Starts a chain from a signed genesis block.
    pub fn new(config: Arc<ElectionConfig>, genesis: Block) -> Result<Self, BlockError> {
        check_genesis(&config, &genesis)?;
        Ok(ChainState {
            config,
            blocks: vec![Arc::new(genesis)],
            nullifiers: HashSet::new(),
            ballots: HashMap::new(),
        })
    }

    /// Replays `blocks` (genesis first) through `apply_block`.
    pub fn replay(
        config: Arc<ElectionConfig>,
        blocks: Vec<Block>,
    ) -> Result<Self, (u64, BlockError)> {
        let mut iter = blocks.into_iter();
        let genesis = iter.next().ok_or((0, BlockError::BadGenesis))?;
        let mut state = ChainState::new(config, genesis).map_err(|e| (0, e))?;
        for block in iter {
            let index = block.index;
            state.apply_block(block).map_err(|e| (index, e))?;
        }
        Ok(state)
    }

    pub fn config(&self) -> &Arc<ElectionConfig> {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn head(&self) -> &Arc<Block> {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.head().index
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    pub fn block(&self, index: u64) -> Option<&Arc<Block>> {
        self.blocks.get(usize::try_from(index).ok()?)
    }

    pub fn nullifiers(&self) -> &HashSet<TokenSerial> {
        &self.nullifiers
    }

    pub fn is_spent(&self, serial: &TokenSerial) -> bool {
        self.nullifiers.contains(serial)
    }

    pub fn ballot_count(&self) -> usize {
        self.ballots.len()
    }

    pub fn locate_ballot(&self, ballot_hash: &Digest) -> Option<BallotLocation> {
        self.ballots.get(ballot_hash).copied()
    }

    /// Every committed ballot in commit order.
    pub fn ballots(&self) -> impl Iterator<Item = &BallotTx> {
        self.blocks.iter().flat_map(|b| b.txs.iter())
    }

    /// Inclusive range of blocks.
    pub fn get_blocks(&self, from: u64, to: u64) -> Result<Vec<Arc<Block>>, LedgerError> {
        let head = self.height();
        if from > to || to > head {
            return Err(LedgerError::RangeOutOfBounds { from, to, head });
        }
        Ok(self.blocks[from as usize..=to as usize].to_vec())
    }

    /// Checks one transaction against committed state plus the serials of a
    /// block under assembly.
    pub fn validate_tx(
        &self,
        tx: &BallotTx,
        pending: &HashSet<TokenSerial>,
    ) -> Result<(), TxError> {
        validate_tx(&self.config, &self.nullifiers, pending, tx)
    }

    /// Full validation of a candidate next block without mutating state.
    pub fn check_block(&self, block: &Block) -> Result<(), BlockError> {
        self.check_next(block, true)
    }

    /// Like `check_block` but ignores the signature list, for proposals that
    /// have not collected a certificate yet.
    pub fn check_proposal(&self, block: &Block) -> Result<(), BlockError> {
        self.check_next(block, false)
    }

    fn check_next(&self, block: &Block, require_quorum: bool) -> Result<(), BlockError> {
        let head = self.head();
        let parent = ParentLink {
            index: head.index,
            hash: head.hash,
            timestamp: head.timestamp,
        };
        let faults = inspect_block(
            &self.config,
            Some(parent),
            &self.nullifiers,
            block,
            Inspect {
                stop_early: true,
                require_quorum,
            },
        );
        match faults.into_iter().next() {
            Some(fault) => Err(fault),
            None => Ok(()),
        }
    }

    /// Validates and appends `block`. On error the state is untouched.
    pub fn apply_block(&mut self, block: Block) -> Result<(), BlockError> {
        self.check_block(&block)?;
        for (position, tx) in block.txs.iter().enumerate() {
            self.nullifiers.insert(tx.token_serial);
            self.ballots.insert(
                tx.ballot_hash,
                BallotLocation {
                    block_index: block.index,
                    position,
                },
            );
        }
        self.blocks.push(Arc::new(block));
        Ok(())
    }
}

pub(crate) fn validate_tx(
    config: &ElectionConfig,
    nullifiers: &HashSet<TokenSerial>,
    pending: &HashSet<TokenSerial>,
    tx: &BallotTx,
) -> Result<(), TxError> {
    if tx.compute_hash() != tx.ballot_hash {
        return Err(TxError::HashMismatch);
    }
    if tx.election_id != config.election_id {
        return Err(TxError::WrongElection);
    }
    if !rsa::verify(&tx.token_message(), &tx.token_sig, &config.registrar_key) {
        return Err(TxError::InvalidToken);
    }
    if nullifiers.contains(&tx.token_serial) || pending.contains(&tx.token_serial) {
        return Err(TxError::DoubleVote);
    }
    if !tx.ciphertext.is_well_formed(&config.group) {
        return Err(TxError::MalformedCiphertext);
    }
    let label_ok = match (config.mode, tx.label.as_deref()) {
        (Mode::Sealed, None) => true,
        (Mode::Demo, Some(label)) => config.candidate_index(label).is_some(),
        _ => false,
    };
    if !label_ok {
        return Err(TxError::InvalidLabel);
    }
    Ok(())
}

fn check_genesis(config: &ElectionConfig, genesis: &Block) -> Result<(), BlockError> {
    let expected = genesis_unsigned(config);
    if genesis.index != 0
        || genesis.hash != expected.hash
        || genesis.compute_hash() != expected.hash
        || !genesis.txs.is_empty()
        || genesis.ballot_root != expected.ballot_root
    {
        return Err(BlockError::BadGenesis);
    }
    check_quorum(config, genesis)
}

fn check_quorum(config: &ElectionConfig, block: &Block) -> Result<(), BlockError> {
    let required = quorum(config.validator_count());
    let mut signers = BTreeSet::new();
    for sig in &block.signatures {
        let valid = config
            .validator(sig.validator_id)
            .is_some_and(|v| verify_block_signature(&block.hash, sig, &v.public_key));
        if !valid || !signers.insert(sig.validator_id) {
            // Any bad or repeated signature taints the certificate.
            return Err(BlockError::BadQuorum {
                valid: signers.len(),
                required,
            });
        }
    }
    if signers.len() < required {
        return Err(BlockError::BadQuorum {
            valid: signers.len(),
            required,
        });
    }
    Ok(())
}

/// The parent fields a child block is checked against.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ParentLink {
    pub index: u64,
    pub hash: Digest,
    pub timestamp: u64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Inspect {
    pub stop_early: bool,
    pub require_quorum: bool,
}

/// Every fault found in `block` relative to `parent` and the spent set.
pub(crate) fn inspect_block(
    config: &ElectionConfig,
    parent: Option<ParentLink>,
    nullifiers: &HashSet<TokenSerial>,
    block: &Block,
    mode: Inspect,
) -> Vec<BlockError> {
    let stop_early = mode.stop_early;
    let mut faults = Vec::new();
    macro_rules! fault {
        ($e:expr) => {{
            faults.push($e);
            if stop_early {
                return faults;
            }
        }};
    }
    let Some(parent) = parent else {
        if let Err(e) = check_genesis(config, block) {
            faults.push(e);
        }
        return faults;
    };
    if block.index != parent.index + 1 || block.prev_hash != parent.hash {
        fault!(BlockError::BadParent {
            expected_index: parent.index + 1
        });
    }
    if block.election_id != config.election_id {
        fault!(BlockError::WrongElection);
    }
    if block.mode.is_some() {
        fault!(BlockError::UnexpectedMode);
    }
    if block.compute_hash() != block.hash {
        fault!(BlockError::BadHash);
    }
    if block.timestamp < parent.timestamp {
        fault!(BlockError::BadTimestamp);
    }
    if ballot_root(&block.txs) != block.ballot_root {
        fault!(BlockError::BadRoot);
    }
    let max = config.consensus.max_txs_per_block;
    if block.txs.len() > max {
        fault!(BlockError::Oversized {
            count: block.txs.len(),
            max
        });
    }
    let mut pending = HashSet::new();
    for (index, tx) in block.txs.iter().enumerate() {
        match validate_tx(config, nullifiers, &pending, tx) {
            Ok(()) => {
                pending.insert(tx.token_serial);
            }
            Err(reason) => fault!(BlockError::TxInvalid { index, reason }),
        }
    }
    if mode.require_quorum {
        if let Err(e) = check_quorum(config, block) {
            fault!(e);
        }
    }
    faults
}
