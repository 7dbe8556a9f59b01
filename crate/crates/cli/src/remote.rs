//! The gateway's networked backend. It follows the committed chain by
//! syncing from validators (every block's certificate is checked locally),
//! forwards check-ins to the registrar, submits ballots to validators and
//! runs the anchoring agent.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Result;
use ballotchain_core::anchoring::{
    AnchorError, AnchorJournal, AnchorRecord, Anchorer, PublicChainAdapter,
};
use ballotchain_core::consensus::Envelope;
use ballotchain_core::gateway::{BackendError, CloseSummary, ElectionBackend, FrozenBallots};
use ballotchain_core::registrar::RegistrarError;
use ballotchain_core::tally::{crosscheck, PartialSubmission, TallyBook, TallyResult};
use ballotchain_core::{BallotTx, Block, ChainState, Digest, ElectionConfig, TokenSerial, TxError};
use num_bigint::BigUint;
use parking_lot::Mutex;

use crate::files::{read_canonical, write_canonical, ElectionDir};
use crate::http::{unix_now, RegistrarClient};
use crate::validator::ValidatorClient;

/// Submission attempts per anchor range at close.
const CLOSE_ANCHOR_ATTEMPTS: u32 = 8;

struct State {
    chain: ChainState,
    anchorer: Anchorer,
    book: TallyBook,
    closed: bool,
    /// Accepted ballots not yet committed, by token serial.
    pending: HashMap<TokenSerial, Digest>,
    tally: Option<TallyResult>,
}

pub struct RemoteBackend {
    config: Arc<ElectionConfig>,
    dir: ElectionDir,
    registrar: RegistrarClient,
    public: Arc<dyn PublicChainAdapter>,
    validators: Vec<Mutex<ValidatorClient>>,
    next: Mutex<usize>,
    state: Mutex<State>,
    sync_interval: Duration,
    close_timeout: Duration,
}

pub struct RemoteOptions {
    pub registrar_url: String,
    pub public: Arc<dyn PublicChainAdapter>,
    pub sync_interval: Duration,
    pub close_timeout: Duration,
}

impl RemoteBackend {
    pub fn open(dir: &ElectionDir, opts: RemoteOptions) -> Result<Arc<Self>> {
        let config = Arc::new(dir.config()?);
        let chain = ChainState::new(config.clone(), dir.genesis()?)?;
        std::fs::create_dir_all(dir.anchors_path().parent().unwrap())?;
        let journal = AnchorJournal::open(dir.anchors_path())?;
        let anchorer = Anchorer::new(
            config.election_id.clone(),
            config.anchor_policy,
            opts.public.clone(),
            journal,
            unix_now(),
        );
        let mut book = TallyBook::new((*config).clone());
        let mut closed = false;
        if dir.frozen_path().exists() {
            let frozen: FrozenBallots = read_canonical(&dir.frozen_path())?;
            book.close(frozen.ballots)?;
            closed = true;
            if let Ok(entries) = std::fs::read_dir(dir.partials_dir()) {
                let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
                paths.sort();
                for path in paths {
                    let submission: PartialSubmission = read_canonical(&path)?;
                    book.restore(submission)?;
                }
            }
        }
        let tally = if dir.tally_path().exists() {
            Some(read_canonical(&dir.tally_path())?)
        } else {
            None
        };
        let validators = config
            .validators
            .iter()
            .map(|v| Mutex::new(ValidatorClient::new(v.address.clone())))
            .collect();
        Ok(Arc::new(RemoteBackend {
            registrar: RegistrarClient::new(&opts.registrar_url),
            public: opts.public,
            validators,
            next: Mutex::new(0),
            state: Mutex::new(State {
                chain,
                anchorer,
                book,
                closed,
                pending: HashMap::new(),
                tally,
            }),
            sync_interval: opts.sync_interval,
            close_timeout: opts.close_timeout,
            dir: dir.clone(),
            config,
        }))
    }

    /// Runs the sync loop on a background thread until `stop` is set.
    pub fn spawn_sync(self: &Arc<Self>, stop: Arc<AtomicBool>) {
        let me = self.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                me.sync_once();
                thread::sleep(me.sync_interval);
            }
        });
    }

    /// Pulls new blocks from the first validator that answers, then lets
    /// the anchorer take its turn.
    pub fn sync_once(&self) {
        let n = self.validators.len();
        let start = *self.next.lock();
        for k in 0..n {
            let v = (start + k) % n;
            match self.pull(v) {
                Ok(()) => break,
                Err(e) => tracing::debug!("sync from validator {v}: {e:#}"),
            }
        }
        let mut st = self.state.lock();
        let now = unix_now();
        let blocks = st.chain.blocks().to_vec();
        match st.anchorer.poll(&blocks, now) {
            Ok(Some(r)) => tracing::info!(
                "anchored blocks {}..={} as {}",
                r.first_block,
                r.last_block,
                r.txid.unwrap()
            ),
            Ok(None) => {}
            Err(e) => tracing::warn!("anchoring: {e}"),
        }
    }

    fn pull(&self, v: usize) -> Result<()> {
        loop {
            let from = self.state.lock().chain.height() + 1;
            let reply = self.validators[v]
                .lock()
                .request(&Envelope::SyncRequest { from, to: u64::MAX })?;
            let Envelope::SyncBlocks { blocks } = reply else {
                anyhow::bail!("unexpected reply {reply:?}");
            };
            if blocks.is_empty() {
                return Ok(());
            }
            let mut st = self.state.lock();
            for block in blocks {
                if block.index != st.chain.height() + 1 {
                    continue;
                }
                st.chain.apply_block(block)?;
            }
            let chain = &st.chain;
            let spent: Vec<TokenSerial> = st
                .pending
                .keys()
                .filter(|s| chain.is_spent(s))
                .copied()
                .collect();
            for s in spent {
                st.pending.remove(&s);
            }
        }
    }

    fn send_to_validators(&self, tx: &BallotTx) -> Result<(), BackendError> {
        let n = self.validators.len();
        let start = {
            let mut next = self.next.lock();
            *next = (*next + 1) % n;
            *next
        };
        for k in 0..n {
            let v = (start + k) % n;
            match self.validators[v]
                .lock()
                .request(&Envelope::Submit { tx: tx.clone() })
            {
                Ok(Envelope::SubmitAck { error: None, .. }) => return Ok(()),
                Ok(Envelope::SubmitAck { error: Some(e), .. }) => return Err(BackendError::Tx(e)),
                Ok(other) => tracing::warn!("validator {v} answered {other:?}"),
                Err(e) => tracing::debug!("submit to validator {v}: {e:#}"),
            }
        }
        Err(BackendError::Unavailable("validators".into()))
    }

    fn heartbeat(&self) {
        for (v, client) in self.validators.iter().enumerate() {
            if let Err(e) = client.lock().request(&Envelope::Heartbeat {}) {
                tracing::debug!("heartbeat to validator {v}: {e:#}");
            }
        }
    }

    fn wait_for(&self, mut done: impl FnMut(&State) -> bool) -> bool {
        let deadline = Instant::now() + self.close_timeout;
        loop {
            self.sync_once();
            if done(&self.state.lock()) {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(self.sync_interval);
        }
    }
}

impl ElectionBackend for RemoteBackend {
    fn config(&self) -> Arc<ElectionConfig> {
        self.config.clone()
    }

    fn now(&self) -> u64 {
        unix_now()
    }

    fn issue_token(
        &self,
        voter_id: &str,
        credential: &str,
        blinded: &BigUint,
    ) -> Result<BigUint, BackendError> {
        self.registrar
            .issue(voter_id, credential, blinded)
            .map_err(|e| match e {
                Some(RegistrarError::Journal(detail)) => BackendError::Internal(detail),
                Some(e) => BackendError::Registrar(e),
                None => BackendError::Unavailable("registrar".into()),
            })
    }

    fn submit_ballot(&self, tx: BallotTx) -> Result<(), BackendError> {
        {
            let mut st = self.state.lock();
            if st.closed {
                return Err(BackendError::Closed);
            }
            if st.chain.is_spent(&tx.token_serial) {
                return Err(TxError::DoubleVote.into());
            }
            match st.pending.get(&tx.token_serial) {
                Some(h) if *h == tx.ballot_hash => return Ok(()),
                Some(_) => return Err(TxError::DoubleVote.into()),
                None => {
                    st.chain.validate_tx(&tx, &Default::default())?;
                    st.pending.insert(tx.token_serial, tx.ballot_hash);
                }
            }
        }
        let result = self.send_to_validators(&tx);
        if result.is_err() {
            self.state.lock().pending.remove(&tx.token_serial);
        }
        result
    }

    fn chain(&self) -> ChainState {
        self.state.lock().chain.clone()
    }

    fn anchors(&self) -> Vec<AnchorRecord> {
        self.state.lock().anchorer.records().to_vec()
    }

    fn public_chain(&self) -> Arc<dyn PublicChainAdapter> {
        self.public.clone()
    }

    fn is_closed(&self) -> bool {
        self.state.lock().closed
    }

    fn close(&self) -> Result<CloseSummary, BackendError> {
        {
            let mut st = self.state.lock();
            if st.book.is_closed() {
                return Err(ballotchain_core::tally::TallyError::AlreadyClosed.into());
            }
            st.closed = true;
        }
        if !self.wait_for(|st| st.pending.is_empty()) {
            let left = self.state.lock().pending.len();
            return Err(BackendError::Internal(format!(
                "{left} ballots did not commit"
            )));
        }
        let empty = {
            let st = self.state.lock();
            st.anchorer.records().is_empty() && st.chain.height() == 0
        };
        if empty {
            self.heartbeat();
            if !self.wait_for(|st| st.chain.height() > 0) {
                return Err(BackendError::Internal(
                    "heartbeat block did not commit".into(),
                ));
            }
        }
        let mut st = self.state.lock();
        let blocks = st.chain.blocks().to_vec();
        st.anchorer
            .force(&blocks, unix_now(), CLOSE_ANCHOR_ATTEMPTS)
            .map_err(|e| match e {
                AnchorError::AdapterUnavailable(a) => {
                    BackendError::Unavailable(format!("public chain ({a})"))
                }
                other => BackendError::Internal(other.to_string()),
            })?;
        let ballots: Vec<BallotTx> = st.chain.ballots().cloned().collect();
        write_canonical(
            &self.dir.frozen_path(),
            &FrozenBallots {
                ballots: ballots.clone(),
            },
            false,
        )
        .map_err(|e| BackendError::Internal(format!("{e:#}")))?;
        let count = ballots.len() as u64;
        st.book.close(ballots)?;
        Ok(CloseSummary {
            ballots: count,
            height: st.chain.height(),
            anchors: st.anchorer.records().len() as u64,
        })
    }

    fn frozen_ballots(&self) -> Option<Vec<BallotTx>> {
        self.state.lock().book.frozen().map(<[BallotTx]>::to_vec)
    }

    fn submit_partials(
        &self,
        credential: &str,
        submission: PartialSubmission,
    ) -> Result<usize, BackendError> {
        let mut st = self.state.lock();
        let path = self
            .dir
            .partials_dir()
            .join(format!("share-{}.json", submission.share_index));
        st.book.submit(credential, submission.clone())?;
        write_canonical(&path, &submission, false)
            .map_err(|e| BackendError::Internal(format!("{e:#}")))?;
        if st.tally.is_none() && st.book.ready() {
            let mut result = st.book.combine()?;
            let blocks: Vec<Block> = st.chain.blocks().iter().map(|b| Block::clone(b)).collect();
            let frozen = st.book.frozen().unwrap_or_default();
            let report = crosscheck(
                &self.config,
                &blocks,
                st.anchorer.records(),
                self.public.as_ref(),
                frozen,
            );
            for problem in &report.problems {
                tracing::warn!("crosscheck: {problem}");
            }
            result.crosscheck_passed = report.passed() && result.undecryptable.is_empty();
            write_canonical(&self.dir.tally_path(), &result, false)
                .map_err(|e| BackendError::Internal(format!("{e:#}")))?;
            st.tally = Some(result);
        }
        Ok(st.book.submitted().len())
    }

    fn tally(&self) -> Option<TallyResult> {
        self.state.lock().tally.clone()
    }
}
