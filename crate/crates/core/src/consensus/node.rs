//! One validator's consensus state machine. It is a pure function of its
//! inputs: the owner feeds ticks, messages and submitted transactions and
//! delivers the returned messages.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::Serialize;

use super::message::{ConsensusMessage, MessageKind, Payload, Signature, VoteStage};
use super::pool::TxPool;
use super::{leader_for, max_faulty, quorum};
use crate::config::{ElectionConfig, ValidatorId};
use crate::crypto::{Digest, RsaKey};
use crate::ledger::{verify_block_signature, BallotTx, Block, ChainState, TokenSerial, TxError};

/// Rounds beyond the current one that a peer's message may name before it
/// is ignored.
const MAX_ROUND_AHEAD: u64 = 10_000;
/// Heights ahead for which commits are buffered.
const MAX_BUFFERED_HEIGHTS: u64 = 1_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Input {
    Tick {
        tick: u64,
        unix_time: u64,
    },
    Message(ConsensusMessage),
    SubmitTx(BallotTx),
    /// Allow an empty block at the current height, so a ballot-free
    /// election still has something to anchor.
    Heartbeat,
    /// A certified block fetched out of band, e.g. by a restarted node
    /// syncing from a peer. Applied only if it is the next block.
    Synced(Block),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Destination {
    All,
    To(ValidatorId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outbound {
    pub to: Destination,
    pub message: ConsensusMessage,
}

#[derive(Clone, Debug, Default)]
pub struct Output {
    pub messages: Vec<Outbound>,
    pub committed: Vec<Arc<Block>>,
    /// Set for `SubmitTx` only.
    pub submit: Option<Result<(), TxError>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Propose,
    Prevote,
    Precommit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Telemetry {
    pub commits: u64,
    pub rounds_started: u64,
    /// Rounds entered because a timer expired or peers moved on.
    pub view_changes: u64,
    pub invalid_messages: u64,
    pub equivocations: u64,
    pub rejected_proposals: u64,
    pub catchup_replies: u64,
}

/// A read-only snapshot of where a validator is.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ViewState {
    pub height: u64,
    pub round: u64,
    pub step: Step,
    pub locked: Option<(u64, Digest)>,
    pub prevotes: BTreeMap<ValidatorId, Option<Digest>>,
    pub precommits: BTreeMap<ValidatorId, Option<Digest>>,
}

type VoteBook = BTreeMap<u64, BTreeMap<ValidatorId, ConsensusMessage>>;

#[derive(Debug)]
struct HeightState {
    height: u64,
    round: u64,
    step: Step,
    deadline: Option<u64>,
    active: bool,
    round_start: u64,
    locked: Option<(u64, Digest)>,
    valid: Option<(u64, Digest)>,
    blocks: HashMap<Digest, Block>,
    block_ok: HashMap<Digest, bool>,
    proposals: BTreeMap<u64, ConsensusMessage>,
    equivocated: BTreeSet<u64>,
    prevotes: VoteBook,
    precommits: VoteBook,
    seen_rounds: BTreeMap<ValidatorId, u64>,
    own: Vec<ConsensusMessage>,
    proposed: bool,
    prevoted: bool,
    precommitted: bool,
    last_rebroadcast: u64,
}

impl HeightState {
    fn new(height: u64, tick: u64, active: bool) -> Self {
        HeightState {
            height,
            round: 0,
            step: Step::Propose,
            deadline: None,
            active,
            round_start: tick,
            locked: None,
            valid: None,
            blocks: HashMap::new(),
            block_ok: HashMap::new(),
            proposals: BTreeMap::new(),
            equivocated: BTreeSet::new(),
            prevotes: BTreeMap::new(),
            precommits: BTreeMap::new(),
            seen_rounds: BTreeMap::new(),
            own: Vec::new(),
            proposed: false,
            prevoted: false,
            precommitted: false,
            last_rebroadcast: tick,
        }
    }
}

fn count_for(book: &VoteBook, round: u64, target: Option<Digest>) -> usize {
    book.get(&round).map_or(0, |votes| {
        votes
            .values()
            .filter(|m| m.vote().map(|(_, h)| h) == Some(target))
            .count()
    })
}

pub struct Validator {
    id: ValidatorId,
    key: RsaKey,
    config: Arc<ElectionConfig>,
    chain: ChainState,
    pool: TxPool,
    st: HeightState,
    future_commits: BTreeMap<u64, Block>,
    replies: HashMap<(ValidatorId, u64), u64>,
    tick: u64,
    unix_time: u64,
    telemetry: Telemetry,
    cumulative_rounds: u64,
    heartbeat: bool,
}

impl std::fmt::Debug for Validator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Validator")
            .field("id", &self.id)
            .field("height", &self.st.height)
            .field("round", &self.st.round)
            .finish_non_exhaustive()
    }
}

impl Validator {
    pub fn new(id: ValidatorId, key: RsaKey, chain: ChainState) -> Self {
        let config = chain.config().clone();
        assert!(
            config.validator(id).is_some(),
            "validator {id} not in config"
        );
        let height = chain.height() + 1;
        Validator {
            id,
            key,
            config,
            chain,
            pool: TxPool::new(),
            st: HeightState::new(height, 0, false),
            future_commits: BTreeMap::new(),
            replies: HashMap::new(),
            tick: 0,
            unix_time: 0,
            telemetry: Telemetry::default(),
            cumulative_rounds: 1,
            heartbeat: false,
        }
    }

    pub fn id(&self) -> ValidatorId {
        self.id
    }

    pub fn chain(&self) -> &ChainState {
        &self.chain
    }

    pub fn config(&self) -> &Arc<ElectionConfig> {
        &self.config
    }

    pub fn pool(&self) -> &TxPool {
        &self.pool
    }

    pub fn telemetry(&self) -> Telemetry {
        self.telemetry
    }

    /// Rounds entered since start, summed over heights.
    pub fn cumulative_rounds(&self) -> u64 {
        self.cumulative_rounds
    }

    pub fn view(&self) -> ViewState {
        let votes = |book: &VoteBook| {
            book.get(&self.st.round)
                .map(|m| {
                    m.iter()
                        .map(|(id, msg)| (*id, msg.vote().and_then(|v| v.1)))
                        .collect()
                })
                .unwrap_or_default()
        };
        ViewState {
            height: self.st.height,
            round: self.st.round,
            step: self.st.step,
            locked: self.st.locked,
            prevotes: votes(&self.st.prevotes),
            precommits: votes(&self.st.precommits),
        }
    }

    pub fn handle(&mut self, input: Input) -> Output {
        let mut out = Output::default();
        match input {
            Input::Tick { tick, unix_time } => self.on_tick(tick, unix_time, &mut out),
            Input::Message(msg) => self.on_message(msg, &mut out),
            Input::SubmitTx(tx) => {
                let result = self.on_submit(tx);
                out.submit = Some(result);
            }
            Input::Heartbeat => {
                self.heartbeat = true;
                self.activate();
                self.try_propose(&mut out);
            }
            Input::Synced(block) => {
                if block.index == self.st.height && self.try_apply(block, &mut out).is_err() {
                    self.telemetry.invalid_messages += 1;
                }
            }
        }
        self.progress(&mut out);
        out
    }

    fn n(&self) -> usize {
        self.config.validator_count()
    }

    fn q(&self) -> usize {
        quorum(self.n())
    }

    fn timeout(&self, base: u64) -> u64 {
        base.max(1) + self.st.round.min(base.max(1))
    }

    fn rebroadcast_interval(&self) -> u64 {
        (self.config.consensus.vote_timeout / 3).max(2)
    }

    fn activate(&mut self) {
        if self.st.active {
            return;
        }
        self.st.active = true;
        self.st.round_start = self.tick;
        self.st.last_rebroadcast = self.tick;
        self.arm_step_timer();
    }

    fn arm_step_timer(&mut self) {
        let base = match self.st.step {
            Step::Propose => self.config.consensus.propose_timeout,
            Step::Prevote | Step::Precommit => self.config.consensus.vote_timeout,
        };
        self.st.deadline = self.st.active.then(|| self.tick + self.timeout(base));
    }

    fn on_submit(&mut self, tx: BallotTx) -> Result<(), TxError> {
        if self.pool.contains(&tx.ballot_hash) {
            return Ok(());
        }
        let pending: HashSet<TokenSerial> = self.pool.iter().map(|t| t.token_serial).collect();
        self.chain.validate_tx(&tx, &pending)?;
        self.pool.insert(tx);
        self.activate();
        Ok(())
    }

    fn absorb_gossip(&mut self, txs: &[BallotTx]) {
        let limit = self.config.consensus.max_txs_per_block * 4;
        for tx in txs.iter().take(limit) {
            if self.pool.contains(&tx.ballot_hash) {
                continue;
            }
            if self.chain.validate_tx(tx, &HashSet::new()).is_ok() {
                self.pool.insert(tx.clone());
            }
        }
    }

    fn on_tick(&mut self, tick: u64, unix_time: u64, out: &mut Output) {
        self.tick = self.tick.max(tick);
        self.unix_time = self.unix_time.max(unix_time);
        if !self.st.active {
            return;
        }
        if let Some(deadline) = self.st.deadline {
            if self.tick >= deadline {
                match self.st.step {
                    Step::Propose => self.prevote(None, out),
                    Step::Prevote => self.precommit(None, out),
                    Step::Precommit => {
                        let next = self.st.round + 1;
                        self.start_round(next, out);
                    }
                }
            }
        }
        if self.tick >= self.st.last_rebroadcast + self.rebroadcast_interval() {
            self.st.last_rebroadcast = self.tick;
            for message in self.st.own.clone() {
                out.messages.push(Outbound {
                    to: Destination::All,
                    message,
                });
            }
        }
    }

    fn sign(&self, payload: Payload) -> ConsensusMessage {
        ConsensusMessage::sign(self.st.height, self.st.round, self.id, payload, &self.key)
    }

    fn broadcast(&mut self, payload: Payload, out: &mut Output) -> ConsensusMessage {
        let msg = self.sign(payload);
        self.st.own.push(msg.clone());
        out.messages.push(Outbound {
            to: Destination::All,
            message: msg.clone(),
        });
        msg
    }

    fn start_round(&mut self, round: u64, out: &mut Output) {
        if round <= self.st.round {
            return;
        }
        self.st.round = round;
        self.st.step = Step::Propose;
        self.st.round_start = self.tick;
        self.st.own.clear();
        self.st.proposed = false;
        self.st.prevoted = false;
        self.st.precommitted = false;
        self.telemetry.rounds_started += 1;
        self.telemetry.view_changes += 1;
        self.cumulative_rounds += 1;
        self.activate();
        self.arm_step_timer();
        self.broadcast(Payload::ViewChange {}, out);
    }

    fn prevote(&mut self, target: Option<Digest>, out: &mut Output) {
        if self.st.prevoted {
            return;
        }
        self.st.prevoted = true;
        let msg = self.broadcast(
            Payload::Vote {
                stage: VoteStage::Prevote,
                block_hash: target,
                block_signature: None,
            },
            out,
        );
        self.record_vote(msg);
        self.st.step = Step::Prevote;
        self.arm_step_timer();
    }

    fn precommit(&mut self, target: Option<Digest>, out: &mut Output) {
        if self.st.precommitted {
            return;
        }
        self.st.precommitted = true;
        let block_signature = target.map(|hash| {
            Signature(crate::crypto::rsa::sign(
                &crate::ledger::block_signature_message(&hash),
                &self.key,
            ))
        });
        let msg = self.broadcast(
            Payload::Vote {
                stage: VoteStage::Precommit,
                block_hash: target,
                block_signature,
            },
            out,
        );
        self.record_vote(msg);
        self.st.step = Step::Precommit;
        self.arm_step_timer();
    }

    /// Stores a vote; the first vote per sender, round and stage wins.
    fn record_vote(&mut self, msg: ConsensusMessage) -> bool {
        let Some((stage, _)) = msg.vote() else {
            return false;
        };
        let book = match stage {
            VoteStage::Prevote => &mut self.st.prevotes,
            VoteStage::Precommit => &mut self.st.precommits,
        };
        let slot = book.entry(msg.round).or_default();
        match slot.get(&msg.sender) {
            Some(existing) if existing.vote() != msg.vote() => {
                self.telemetry.equivocations += 1;
                false
            }
            Some(_) => false,
            None => {
                slot.insert(msg.sender, msg);
                true
            }
        }
    }

    fn on_message(&mut self, msg: ConsensusMessage, out: &mut Output) {
        if msg.sender == self.id || !msg.verify(&self.config) {
            self.telemetry.invalid_messages += u64::from(msg.sender != self.id);
            return;
        }
        if msg.height < self.st.height {
            if msg.kind() != MessageKind::Commit {
                self.reply_catchup(msg.sender, msg.height, out);
            }
            return;
        }
        if msg.height > self.st.height {
            // We are behind; wake up so our own timeouts reach peers that
            // can answer with the missing commits.
            if let Payload::Commit { block } = msg.payload {
                if msg.height <= self.st.height + MAX_BUFFERED_HEIGHTS && block.index == msg.height
                {
                    self.future_commits.entry(msg.height).or_insert(block);
                }
            }
            self.activate();
            return;
        }
        if msg.round > self.st.round + MAX_ROUND_AHEAD {
            self.telemetry.invalid_messages += 1;
            return;
        }
        self.activate();
        let seen = self.st.seen_rounds.entry(msg.sender).or_insert(0);
        *seen = (*seen).max(msg.round);
        match msg.payload {
            Payload::Commit { ref block } => {
                let block = block.clone();
                if self.try_apply(block, out).is_err() {
                    self.telemetry.invalid_messages += 1;
                }
            }
            Payload::Propose { .. } => self.on_proposal(msg, out),
            Payload::Vote {
                stage,
                block_hash,
                ref block_signature,
            } => {
                let ok = match (stage, block_hash, block_signature) {
                    (VoteStage::Prevote, _, None) | (VoteStage::Precommit, None, None) => true,
                    (VoteStage::Precommit, Some(hash), Some(sig)) => {
                        let info = self.config.validator(msg.sender).expect("verified sender");
                        let sig = crate::ledger::BlockSignature {
                            validator_id: msg.sender,
                            signature: sig.0.clone(),
                        };
                        verify_block_signature(&hash, &sig, &info.public_key)
                    }
                    _ => false,
                };
                if ok {
                    self.record_vote(msg);
                } else {
                    self.telemetry.invalid_messages += 1;
                }
            }
            Payload::ViewChange {} => {}
        }
    }

    fn reply_catchup(&mut self, to: ValidatorId, height: u64, out: &mut Output) {
        let Some(block) = self.chain.block(height).filter(|_| height > 0) else {
            return;
        };
        let interval = self.rebroadcast_interval();
        let last = self.replies.entry((to, height)).or_insert(0);
        if *last != 0 && self.tick < *last + interval {
            return;
        }
        *last = self.tick.max(1);
        self.telemetry.catchup_replies += 1;
        let msg = ConsensusMessage::sign(
            height,
            0,
            self.id,
            Payload::Commit {
                block: (**block).clone(),
            },
            &self.key,
        );
        out.messages.push(Outbound {
            to: Destination::To(to),
            message: msg,
        });
    }

    fn on_proposal(&mut self, msg: ConsensusMessage, out: &mut Output) {
        let Payload::Propose {
            block,
            valid_round,
            pol,
            gossip,
        } = &msg.payload
        else {
            return;
        };
        if msg.sender != leader_for(self.st.height, msg.round, self.n())
            || block.index != self.st.height
        {
            self.telemetry.invalid_messages += 1;
            return;
        }
        self.absorb_gossip(gossip);
        if let Some(existing) = self.st.proposals.get(&msg.round) {
            if existing.payload != msg.payload {
                let existing_hash = match &existing.payload {
                    Payload::Propose { block, .. } => block.hash,
                    _ => unreachable!("only proposals are stored"),
                };
                if existing_hash != block.hash && self.st.equivocated.insert(msg.round) {
                    self.telemetry.equivocations += 1;
                    if msg.round == self.st.round {
                        // Abandon the round: nil prevote, then move on.
                        self.prevote(None, out);
                        let next = self.st.round + 1;
                        self.start_round(next, out);
                    }
                }
            }
            return;
        }
        if let Some(vr) = valid_round {
            if *vr >= msg.round || !self.check_pol(*vr, block.hash, pol) {
                self.telemetry.invalid_messages += 1;
                return;
            }
            for vote in pol {
                self.record_vote(vote.clone());
            }
        } else if !pol.is_empty() {
            self.telemetry.invalid_messages += 1;
            return;
        }
        self.st.blocks.insert(block.hash, block.clone());
        self.st.proposals.insert(msg.round, msg);
    }

    fn check_pol(&self, round: u64, hash: Digest, pol: &[ConsensusMessage]) -> bool {
        let mut senders = BTreeSet::new();
        for vote in pol {
            let ok = vote.height == self.st.height
                && vote.round == round
                && vote.vote() == Some((VoteStage::Prevote, Some(hash)))
                && vote.verify(&self.config);
            if !ok {
                return false;
            }
            senders.insert(vote.sender);
        }
        senders.len() >= self.q()
    }

    fn block_ok(&mut self, hash: Digest) -> bool {
        if let Some(ok) = self.st.block_ok.get(&hash) {
            return *ok;
        }
        let Some(block) = self.st.blocks.get(&hash) else {
            return false;
        };
        let result = self.chain.check_proposal(block);
        if result.is_err() {
            self.telemetry.rejected_proposals += 1;
            let bad: HashSet<Digest> = block.txs.iter().map(|t| t.ballot_hash).collect();
            let chain = &self.chain;
            self.pool.retain(|tx| {
                !bad.contains(&tx.ballot_hash) || chain.validate_tx(tx, &HashSet::new()).is_ok()
            });
        }
        self.st.block_ok.insert(hash, result.is_ok());
        result.is_ok()
    }

    fn proposal_hash(&self, round: u64) -> Option<(Digest, Option<u64>)> {
        match &self.st.proposals.get(&round)?.payload {
            Payload::Propose {
                block, valid_round, ..
            } => Some((block.hash, *valid_round)),
            _ => None,
        }
    }

    /// Applies the rules until nothing changes.
    fn progress(&mut self, out: &mut Output) {
        loop {
            let before = (
                self.st.height,
                self.st.round,
                self.st.step,
                self.st.proposed,
            );
            self.try_propose(out);
            self.try_prevote(out);
            self.try_lock(out);
            if self.try_commit(out) {
                continue;
            }
            self.try_skip(out);
            if before
                == (
                    self.st.height,
                    self.st.round,
                    self.st.step,
                    self.st.proposed,
                )
            {
                break;
            }
        }
    }

    fn try_propose(&mut self, out: &mut Output) {
        if self.st.proposed
            || self.st.step != Step::Propose
            || leader_for(self.st.height, self.st.round, self.n()) != self.id
        {
            return;
        }
        let (block, valid_round, pol) = if let Some((vr, hash)) = self.st.valid {
            let block = self.st.blocks[&hash].clone();
            let pol: Vec<ConsensusMessage> = self.st.prevotes[&vr]
                .values()
                .filter(|m| m.vote() == Some((VoteStage::Prevote, Some(hash))))
                .cloned()
                .collect();
            (block, Some(vr), pol)
        } else {
            let max = self.config.consensus.max_txs_per_block;
            let waited = self.tick >= self.st.round_start + self.config.consensus.propose_delay;
            if (self.pool.is_empty() && !self.heartbeat) || (self.pool.len() < max && !waited) {
                return;
            }
            match self.assemble_block() {
                Some(block) => (block, None, Vec::new()),
                None => return,
            }
        };
        let gossip: Vec<BallotTx> = {
            let included: HashSet<Digest> = block.ballot_hashes().copied().collect();
            let limit = self.config.consensus.max_txs_per_block * 2;
            self.pool
                .iter()
                .filter(|t| !included.contains(&t.ballot_hash))
                .take(limit)
                .cloned()
                .collect()
        };
        self.st.proposed = true;
        let msg = self.broadcast(
            Payload::Propose {
                block: block.clone(),
                valid_round,
                pol,
                gossip,
            },
            out,
        );
        self.st.blocks.insert(block.hash, block);
        self.st.proposals.insert(self.st.round, msg);
    }

    /// Builds a fresh block from the pool, dropping anything that no longer
    /// validates.
    fn assemble_block(&mut self) -> Option<Block> {
        let max = self.config.consensus.max_txs_per_block;
        let mut pending = HashSet::new();
        let mut txs = Vec::new();
        let mut stale = Vec::new();
        for tx in self.pool.iter() {
            if txs.len() == max {
                break;
            }
            match self.chain.validate_tx(tx, &pending) {
                Ok(()) => {
                    pending.insert(tx.token_serial);
                    txs.push(tx.clone());
                }
                Err(_) => stale.push(tx.ballot_hash),
            }
        }
        for hash in stale {
            self.pool.remove(&hash);
        }
        if txs.is_empty() && !self.heartbeat {
            return None;
        }
        let head = self.chain.head();
        Some(Block::new(
            head.index + 1,
            head.timestamp.max(self.unix_time),
            head.hash,
            self.config.election_id.clone(),
            txs,
        ))
    }

    fn try_prevote(&mut self, out: &mut Output) {
        if self.st.step != Step::Propose || self.st.prevoted {
            return;
        }
        let round = self.st.round;
        let Some((hash, valid_round)) = self.proposal_hash(round) else {
            return;
        };
        let target = if self.st.equivocated.contains(&round) || !self.block_ok(hash) {
            None
        } else {
            let unlocked = match (self.st.locked, valid_round) {
                (None, _) => true,
                (Some((_, locked)), _) if locked == hash => true,
                (Some((locked_round, _)), Some(vr)) => locked_round <= vr,
                (Some(_), None) => false,
            };
            unlocked.then_some(hash)
        };
        self.prevote(target, out);
    }

    fn try_lock(&mut self, out: &mut Output) {
        let round = self.st.round;
        let q = self.q();
        if let Some((hash, _)) = self.proposal_hash(round) {
            if count_for(&self.st.prevotes, round, Some(hash)) >= q
                && !self.st.equivocated.contains(&round)
                && self.block_ok(hash)
            {
                if self.st.valid.is_none_or(|(r, _)| r < round) {
                    self.st.valid = Some((round, hash));
                }
                if self.st.step == Step::Prevote {
                    self.st.locked = Some((round, hash));
                    self.precommit(Some(hash), out);
                }
                return;
            }
        }
        if self.st.step == Step::Prevote && count_for(&self.st.prevotes, round, None) >= q {
            self.precommit(None, out);
        }
        if self.st.step == Step::Precommit && count_for(&self.st.precommits, round, None) >= q {
            self.start_round(round + 1, out);
        }
    }

    fn try_commit(&mut self, out: &mut Output) -> bool {
        let q = self.q();
        let mut found = None;
        for (round, votes) in &self.st.precommits {
            let mut tally: BTreeMap<Digest, usize> = BTreeMap::new();
            for msg in votes.values() {
                if let Some((_, Some(hash))) = msg.vote() {
                    *tally.entry(hash).or_default() += 1;
                }
            }
            if let Some((hash, _)) = tally
                .into_iter()
                .find(|(h, c)| *c >= q && self.st.blocks.contains_key(h))
            {
                found = Some((*round, hash));
                break;
            }
        }
        let Some((round, hash)) = found else {
            return false;
        };
        let mut block = self.st.blocks[&hash].clone();
        block.signatures = self.st.precommits[&round]
            .values()
            .filter_map(|m| {
                m.block_signature()
                    .filter(|_| m.vote() == Some((VoteStage::Precommit, Some(hash))))
            })
            .collect();
        block.signatures.sort_by_key(|s| s.validator_id);
        match self.try_apply(block.clone(), out) {
            Ok(()) => {
                let msg = ConsensusMessage::sign(
                    block.index,
                    round,
                    self.id,
                    Payload::Commit { block },
                    &self.key,
                );
                out.messages.push(Outbound {
                    to: Destination::All,
                    message: msg,
                });
                true
            }
            Err(()) => {
                // Should not happen for a block that passed proposal checks.
                self.st.blocks.remove(&hash);
                false
            }
        }
    }

    /// Jumps ahead when more than f peers are in a later round.
    fn try_skip(&mut self, out: &mut Output) {
        let f = max_faulty(self.n());
        let mut ahead: Vec<u64> = self
            .st
            .seen_rounds
            .values()
            .copied()
            .filter(|r| *r > self.st.round)
            .collect();
        if ahead.len() > f {
            ahead.sort_unstable_by(|a, b| b.cmp(a));
            let target = ahead[f];
            self.start_round(target, out);
        }
    }

    /// Appends a certified block for the current height and moves on.
    fn try_apply(&mut self, block: Block, out: &mut Output) -> Result<(), ()> {
        if block.index != self.st.height {
            return Err(());
        }
        self.chain.apply_block(block).map_err(|_| ())?;
        self.after_commit(out);
        while let Some(next) = self.future_commits.remove(&self.st.height) {
            if self.chain.apply_block(next).is_err() {
                break;
            }
            self.after_commit(out);
        }
        let height = self.st.height;
        self.future_commits.retain(|h, _| *h >= height);
        Ok(())
    }

    fn after_commit(&mut self, out: &mut Output) {
        let head = self.chain.head().clone();
        let spent: HashSet<TokenSerial> = head.txs.iter().map(|t| t.token_serial).collect();
        self.pool.retain(|tx| !spent.contains(&tx.token_serial));
        self.telemetry.commits += 1;
        self.telemetry.rounds_started += 1;
        self.cumulative_rounds += 1;
        self.heartbeat = false;
        self.st = HeightState::new(head.index + 1, self.tick, !self.pool.is_empty());
        self.arm_step_timer();
        self.replies.retain(|(_, h), _| *h + 64 > head.index);
        out.committed.push(head);
    }
}
