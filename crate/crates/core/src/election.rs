//! All roles in one process: a simulated validator cluster, the registrar,
//! the anchoring agent and the tally book, behind the gateway backend trait.
//! Time is the cluster's simulated clock; callers drive it with `step`.

use std::collections::HashMap;
use std::sync::Arc;

use num_bigint::BigUint;
use parking_lot::Mutex;

use crate::anchoring::{AnchorError, AnchorJournal, AnchorRecord, Anchorer, PublicChainAdapter};
use crate::config::{ElectionConfig, ValidatorId};
use crate::consensus::{Cluster, NetParams, Validator};
use crate::gateway::{BackendError, CloseSummary, ElectionBackend};
use crate::ledger::{BallotTx, Block, ChainState, TokenSerial, TxError};
use crate::registrar::{Registrar, VoterRecord};
use crate::setup::ElectionSetup;
use crate::tally::{crosscheck, CrosscheckReport, PartialSubmission, TallyBook, TallyResult};

/// Ticks allowed for pending ballots to commit at close.
pub const CLOSE_TICKS: u64 = 20_000;
/// Submission attempts per range when anchoring at close.
pub const CLOSE_ANCHOR_ATTEMPTS: u32 = 8;

struct Inner {
    cluster: Cluster,
    anchorer: Anchorer,
    book: TallyBook,
    closed: bool,
    /// Accepted ballots not yet committed, by token serial.
    pending: HashMap<TokenSerial, crate::crypto::Digest>,
    next: usize,
    tally: Option<TallyResult>,
    crosscheck: Option<CrosscheckReport>,
    anchor_errors: u64,
}

impl Inner {
    fn reference(&self) -> &Validator {
        self.cluster.node(self.cluster.honest_ids()[0])
    }

    fn prune(&mut self) {
        let chain = self.cluster.node(self.cluster.honest_ids()[0]).chain();
        let spent: Vec<TokenSerial> = self
            .pending
            .keys()
            .filter(|s| chain.is_spent(s))
            .copied()
            .collect();
        for s in spent {
            self.pending.remove(&s);
        }
    }

    fn step(&mut self) {
        self.cluster.step();
        self.prune();
        let now = self.cluster.unix_time();
        let blocks = self.reference().chain().blocks().to_vec();
        if self.anchorer.poll(&blocks, now).is_err() {
            self.anchor_errors += 1;
        }
    }

    fn settle(&mut self, max_ticks: u64) -> bool {
        for _ in 0..max_ticks {
            if self.pending.is_empty() {
                return true;
            }
            self.step();
        }
        self.pending.is_empty()
    }
}

pub struct Election {
    config: Arc<ElectionConfig>,
    registrar: Registrar,
    adapter: Arc<dyn PublicChainAdapter>,
    inner: Mutex<Inner>,
}

impl Election {
    pub fn new(
        setup: &ElectionSetup,
        roster: Vec<VoterRecord>,
        adapter: Arc<dyn PublicChainAdapter>,
        net: NetParams,
        seed: u64,
    ) -> Self {
        let config = Arc::new(setup.config.clone());
        let nodes = setup
            .validator_keys
            .iter()
            .enumerate()
            .map(|(i, key)| {
                let chain = ChainState::new(config.clone(), setup.genesis.clone())
                    .expect("genesis matches config");
                Validator::new(i as ValidatorId, key.clone(), chain)
            })
            .collect();
        let cluster = Cluster::new(nodes, net, seed);
        let anchorer = Anchorer::new(
            config.election_id.clone(),
            config.anchor_policy,
            adapter.clone(),
            AnchorJournal::in_memory(),
            cluster.unix_time(),
        );
        Election {
            registrar: Registrar::new(
                config.election_id.clone(),
                setup.registrar_key.clone(),
                roster,
            ),
            adapter,
            inner: Mutex::new(Inner {
                cluster,
                anchorer,
                book: TallyBook::new(setup.config.clone()),
                closed: false,
                pending: HashMap::new(),
                next: 0,
                tally: None,
                crosscheck: None,
                anchor_errors: 0,
            }),
            config,
        }
    }

    pub fn registrar(&self) -> &Registrar {
        &self.registrar
    }

    /// Advances the simulated clock by one tick.
    pub fn step(&self) {
        self.inner.lock().step();
    }

    pub fn run(&self, ticks: u64) {
        let mut inner = self.inner.lock();
        for _ in 0..ticks {
            inner.step();
        }
    }

    /// Steps until every accepted ballot is committed.
    pub fn settle(&self, max_ticks: u64) -> bool {
        self.inner.lock().settle(max_ticks)
    }

    /// Steps until the reference node's chain satisfies `done`.
    pub fn run_until(
        &self,
        max_ticks: u64,
        mut done: impl FnMut(&ChainState, &[AnchorRecord]) -> bool,
    ) -> bool {
        let mut inner = self.inner.lock();
        for _ in 0..max_ticks {
            if done(inner.reference().chain(), inner.anchorer.records()) {
                return true;
            }
            inner.step();
        }
        done(inner.reference().chain(), inner.anchorer.records())
    }

    pub fn pending_count(&self) -> usize {
        self.inner.lock().pending.len()
    }

    pub fn anchor_errors(&self) -> u64 {
        self.inner.lock().anchor_errors
    }

    /// Submits straight to one validator, bypassing the round-robin and
    /// the gateway's pending check.
    pub fn submit_to(&self, validator: ValidatorId, tx: BallotTx) -> Result<(), BackendError> {
        let mut inner = self.inner.lock();
        if inner.closed {
            return Err(BackendError::Closed);
        }
        let (serial, hash) = (tx.token_serial, tx.ballot_hash);
        inner.cluster.submit(validator, tx)?;
        inner.pending.entry(serial).or_insert(hash);
        Ok(())
    }

    /// Read access to the cluster.
    pub fn with_cluster<R>(&self, f: impl FnOnce(&Cluster) -> R) -> R {
        f(&self.inner.lock().cluster)
    }

    /// Committed blocks of the reference node.
    pub fn blocks(&self) -> Vec<Block> {
        self.inner
            .lock()
            .reference()
            .chain()
            .blocks()
            .iter()
            .map(|b| Block::clone(b))
            .collect()
    }

    pub fn crosscheck_report(&self) -> Option<CrosscheckReport> {
        self.inner.lock().crosscheck.clone()
    }
}

impl ElectionBackend for Election {
    fn config(&self) -> Arc<ElectionConfig> {
        self.config.clone()
    }

    fn now(&self) -> u64 {
        self.inner.lock().cluster.unix_time()
    }

    fn issue_token(
        &self,
        voter_id: &str,
        credential: &str,
        blinded: &BigUint,
    ) -> Result<BigUint, BackendError> {
        let now = self.now();
        Ok(self
            .registrar
            .issue_token(voter_id, credential, blinded, now)?)
    }

    fn submit_ballot(&self, tx: BallotTx) -> Result<(), BackendError> {
        let mut inner = self.inner.lock();
        if inner.closed {
            return Err(BackendError::Closed);
        }
        match inner.pending.get(&tx.token_serial) {
            Some(h) if *h == tx.ballot_hash => return Ok(()),
            Some(_) => return Err(TxError::DoubleVote.into()),
            None => {}
        }
        let honest = inner.cluster.honest_ids();
        let target = honest[inner.next % honest.len()];
        inner.next += 1;
        let (serial, hash) = (tx.token_serial, tx.ballot_hash);
        inner.cluster.submit(target, tx)?;
        inner.pending.insert(serial, hash);
        Ok(())
    }

    fn chain(&self) -> ChainState {
        self.inner.lock().reference().chain().clone()
    }

    fn anchors(&self) -> Vec<AnchorRecord> {
        self.inner.lock().anchorer.records().to_vec()
    }

    fn public_chain(&self) -> Arc<dyn PublicChainAdapter> {
        self.adapter.clone()
    }

    fn is_closed(&self) -> bool {
        self.inner.lock().closed
    }

    /// Stops casting, lets pending ballots commit, anchors whatever is left
    /// (committing a heartbeat block if nothing was ever anchored) and
    /// freezes the ballot list.
    fn close(&self) -> Result<CloseSummary, BackendError> {
        let mut inner = self.inner.lock();
        if inner.closed {
            return Err(crate::tally::TallyError::AlreadyClosed.into());
        }
        inner.closed = true;
        if !inner.settle(CLOSE_TICKS) {
            return Err(BackendError::Internal(format!(
                "{} ballots did not commit",
                inner.pending.len()
            )));
        }
        if inner.anchorer.records().is_empty() && inner.reference().chain().height() == 0 {
            inner.cluster.heartbeat();
            let mut ok = false;
            for _ in 0..CLOSE_TICKS {
                if inner.reference().chain().height() > 0 {
                    ok = true;
                    break;
                }
                inner.step();
            }
            if !ok {
                return Err(BackendError::Internal(
                    "heartbeat block did not commit".into(),
                ));
            }
        }
        let now = inner.cluster.unix_time();
        let blocks = inner.reference().chain().blocks().to_vec();
        inner
            .anchorer
            .force(&blocks, now, CLOSE_ANCHOR_ATTEMPTS)
            .map_err(|e| match e {
                AnchorError::AdapterUnavailable(a) => {
                    BackendError::Unavailable(format!("public chain ({a})"))
                }
                other => BackendError::Internal(other.to_string()),
            })?;
        let ballots: Vec<BallotTx> = inner.reference().chain().ballots().cloned().collect();
        let count = ballots.len() as u64;
        inner.book.close(ballots)?;
        Ok(CloseSummary {
            ballots: count,
            height: blocks.len() as u64 - 1,
            anchors: inner.anchorer.records().len() as u64,
        })
    }

    fn frozen_ballots(&self) -> Option<Vec<BallotTx>> {
        self.inner.lock().book.frozen().map(<[BallotTx]>::to_vec)
    }

    fn submit_partials(
        &self,
        credential: &str,
        submission: PartialSubmission,
    ) -> Result<usize, BackendError> {
        let mut inner = self.inner.lock();
        inner.book.submit(credential, submission)?;
        if inner.tally.is_none() && inner.book.ready() {
            let mut result = inner.book.combine()?;
            let blocks: Vec<Block> = inner
                .reference()
                .chain()
                .blocks()
                .iter()
                .map(|b| Block::clone(b))
                .collect();
            let frozen = inner.book.frozen().unwrap_or_default();
            let report = crosscheck(
                &self.config,
                &blocks,
                inner.anchorer.records(),
                self.adapter.as_ref(),
                frozen,
            );
            result.crosscheck_passed = report.passed() && result.undecryptable.is_empty();
            inner.crosscheck = Some(report);
            inner.tally = Some(result);
        }
        Ok(inner.book.submitted().len())
    }

    fn tally(&self) -> Option<TallyResult> {
        self.inner.lock().tally.clone()
    }
}
