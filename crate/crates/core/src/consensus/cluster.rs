//! A discrete-event network of validators in one process. Used by the
//! simulator and by in-process elections.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::message::{ConsensusMessage, Payload};
use super::node::{Destination, Input, Outbound, Output, Validator};
use super::quorum;
use crate::canonical;
use crate::config::ValidatorId;
use crate::crypto::{Digest, RsaKey};
use crate::ledger::{verify_block_signature, BallotTx, Block, TxError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetParams {
    /// Probability of losing a message, in thousandths.
    pub drop_permille: u32,
    pub min_delay: u64,
    pub max_delay: u64,
}

impl NetParams {
    pub const PERFECT: NetParams = NetParams {
        drop_permille: 0,
        min_delay: 0,
        max_delay: 0,
    };
}

#[derive(Clone, Debug)]
pub enum Fault {
    /// Sends nothing and ignores everything.
    Silent,
    /// Behaves honestly except that every proposal it makes is paired with
    /// a conflicting one, both sent to every peer.
    Equivocate(RsaKey),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub injected: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitRecord {
    pub tick: u64,
    pub node: ValidatorId,
    pub height: u64,
    pub hash: Digest,
    /// The node's cumulative round count right after the commit.
    pub rounds: u64,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Line<'a> {
    Deliver {
        tick: u64,
        from: Option<ValidatorId>,
        to: ValidatorId,
        kind: super::MessageKind,
        height: u64,
        round: u64,
        id: &'a str,
    },
    Drop {
        tick: u64,
        from: ValidatorId,
        to: ValidatorId,
        id: &'a str,
    },
    Submit {
        tick: u64,
        to: ValidatorId,
        ballot: &'a str,
        accepted: bool,
    },
    Commit {
        tick: u64,
        node: ValidatorId,
        height: u64,
        hash: &'a str,
    },
}

struct Pending {
    from: Option<ValidatorId>,
    to: ValidatorId,
    message: ConsensusMessage,
}

pub struct Cluster {
    nodes: Vec<Validator>,
    faults: BTreeMap<ValidatorId, Fault>,
    net: NetParams,
    rng: ChaCha20Rng,
    tick: u64,
    seq: u64,
    queue: BTreeMap<(u64, u64), Pending>,
    unix_base: u64,
    tick_ms: u64,
    transcript: Option<Vec<String>>,
    commits: Vec<CommitRecord>,
    stats: NetStats,
    recent: Vec<ConsensusMessage>,
    certified: BTreeMap<u64, BTreeSet<Digest>>,
    cert_checked: BTreeSet<Digest>,
}

const RECENT: usize = 256;

impl Cluster {
    pub fn new(nodes: Vec<Validator>, net: NetParams, seed: u64) -> Self {
        let config = nodes
            .first()
            .expect("at least one validator")
            .config()
            .clone();
        Cluster {
            nodes,
            faults: BTreeMap::new(),
            net,
            rng: ChaCha20Rng::seed_from_u64(seed),
            tick: 0,
            seq: 0,
            queue: BTreeMap::new(),
            unix_base: config.open_time,
            tick_ms: config.consensus.tick_ms.max(1),
            transcript: None,
            commits: Vec::new(),
            stats: NetStats::default(),
            recent: Vec::new(),
            certified: BTreeMap::new(),
            cert_checked: BTreeSet::new(),
        }
    }

    pub fn with_faults(mut self, faults: BTreeMap<ValidatorId, Fault>) -> Self {
        self.faults = faults;
        self
    }

    pub fn record_transcript(mut self) -> Self {
        self.transcript = Some(Vec::new());
        self
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Wall-clock seconds corresponding to the current tick.
    pub fn unix_time(&self) -> u64 {
        self.unix_base + self.tick * self.tick_ms / 1000
    }

    pub fn nodes(&self) -> &[Validator] {
        &self.nodes
    }

    pub fn node(&self, id: ValidatorId) -> &Validator {
        &self.nodes[id as usize]
    }

    pub fn is_honest(&self, id: ValidatorId) -> bool {
        !self.faults.contains_key(&id)
    }

    pub fn honest_ids(&self) -> Vec<ValidatorId> {
        (0..self.nodes.len() as ValidatorId)
            .filter(|id| self.is_honest(*id))
            .collect()
    }

    pub fn commits(&self) -> &[CommitRecord] {
        &self.commits
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn transcript(&self) -> &[String] {
        self.transcript.as_deref().unwrap_or(&[])
    }

    /// Recently delivered messages, for the fuzzer to mutate.
    pub fn recent(&self) -> &[ConsensusMessage] {
        &self.recent
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    fn log(&mut self, line: Line<'_>) {
        if let Some(t) = self.transcript.as_mut() {
            t.push(canonical::to_canonical(&line));
        }
    }

    /// Hands a transaction to one validator, as a gateway would.
    pub fn submit(&mut self, to: ValidatorId, tx: BallotTx) -> Result<(), TxError> {
        if matches!(self.faults.get(&to), Some(Fault::Silent)) {
            return Ok(());
        }
        let ballot = tx.ballot_hash.to_hex();
        let out = self.nodes[to as usize].handle(Input::SubmitTx(tx));
        let result = out.submit.unwrap_or(Ok(()));
        let tick = self.tick;
        self.log(Line::Submit {
            tick,
            to,
            ballot: &ballot,
            accepted: result.is_ok(),
        });
        self.route(to, out);
        self.drain_due();
        result
    }

    /// Lets every non-silent node commit an empty block at its next height.
    pub fn heartbeat(&mut self) {
        for id in 0..self.nodes.len() as ValidatorId {
            if matches!(self.faults.get(&id), Some(Fault::Silent)) {
                continue;
            }
            let out = self.nodes[id as usize].handle(Input::Heartbeat);
            self.route(id, out);
        }
        self.drain_due();
    }

    /// Queues an arbitrary message for delivery at the next tick.
    pub fn inject(&mut self, to: ValidatorId, message: ConsensusMessage) {
        self.stats.injected += 1;
        let at = self.tick + 1;
        self.schedule(
            at,
            Pending {
                from: None,
                to,
                message,
            },
        );
    }

    /// Advances one tick: due deliveries first, then every node's timer.
    pub fn step(&mut self) {
        self.tick += 1;
        self.drain_due();
        let unix_time = self.unix_time();
        for id in 0..self.nodes.len() as ValidatorId {
            if matches!(self.faults.get(&id), Some(Fault::Silent)) {
                continue;
            }
            let out = self.nodes[id as usize].handle(Input::Tick {
                tick: self.tick,
                unix_time,
            });
            self.route(id, out);
        }
        self.drain_due();
    }

    pub fn run(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.step();
        }
    }

    /// Steps until `done` holds or `max_ticks` more ticks have passed.
    pub fn run_until(&mut self, max_ticks: u64, mut done: impl FnMut(&Cluster) -> bool) -> bool {
        for _ in 0..max_ticks {
            if done(self) {
                return true;
            }
            self.step();
        }
        done(self)
    }

    fn schedule(&mut self, at: u64, pending: Pending) {
        self.seq += 1;
        self.queue.insert((at, self.seq), pending);
    }

    fn drain_due(&mut self) {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.tick {
                break;
            }
            let Pending { from, to, message } = entry.remove();
            self.deliver(from, to, message);
        }
    }

    fn deliver(&mut self, from: Option<ValidatorId>, to: ValidatorId, message: ConsensusMessage) {
        if matches!(self.faults.get(&to), Some(Fault::Silent)) {
            return;
        }
        self.stats.delivered += 1;
        if self.transcript.is_some() {
            let id = message.id().to_hex()[..16].to_owned();
            let tick = self.tick;
            self.log(Line::Deliver {
                tick,
                from,
                to,
                kind: message.kind(),
                height: message.height,
                round: message.round,
                id: &id,
            });
        }
        if self.recent.len() == RECENT {
            self.recent.remove(0);
        }
        self.recent.push(message.clone());
        if let Payload::Commit { block } = &message.payload {
            self.note_certificate(block);
        }
        let out = self.nodes[to as usize].handle(Input::Message(message));
        self.route(to, out);
    }

    fn route(&mut self, from: ValidatorId, out: Output) {
        for block in &out.committed {
            self.note_commit(from, block);
        }
        match self.faults.get(&from) {
            Some(Fault::Silent) => return,
            Some(Fault::Equivocate(key)) => {
                let key = key.clone();
                for outbound in out.messages {
                    self.route_equivocating(from, outbound, &key);
                }
                return;
            }
            None => {}
        }
        for outbound in out.messages {
            for to in self.targets(from, outbound.to) {
                self.send(from, to, outbound.message.clone());
            }
        }
    }

    fn route_equivocating(&mut self, from: ValidatorId, outbound: Outbound, key: &RsaKey) {
        let twin = match &outbound.message.payload {
            Payload::Propose { block, .. } => {
                let mut other = Block::new(
                    block.index,
                    block.timestamp + 1,
                    block.prev_hash,
                    block.election_id.clone(),
                    block.txs.iter().skip(1).cloned().collect(),
                );
                other.signatures.clear();
                Some(ConsensusMessage::sign(
                    outbound.message.height,
                    outbound.message.round,
                    from,
                    Payload::Propose {
                        block: other,
                        valid_round: None,
                        pol: vec![],
                        gossip: vec![],
                    },
                    key,
                ))
            }
            _ => None,
        };
        for to in self.targets(from, outbound.to) {
            match &twin {
                Some(twin) if self.rng.gen_bool(0.5) => {
                    self.send(from, to, twin.clone());
                    self.send(from, to, outbound.message.clone());
                }
                Some(twin) => {
                    self.send(from, to, outbound.message.clone());
                    self.send(from, to, twin.clone());
                }
                None => self.send(from, to, outbound.message.clone()),
            }
        }
    }

    fn targets(&self, from: ValidatorId, dest: Destination) -> Vec<ValidatorId> {
        match dest {
            Destination::All => (0..self.nodes.len() as ValidatorId)
                .filter(|&i| i != from)
                .collect(),
            Destination::To(id) if (id as usize) < self.nodes.len() => vec![id],
            Destination::To(_) => Vec::new(),
        }
    }

    fn send(&mut self, from: ValidatorId, to: ValidatorId, message: ConsensusMessage) {
        self.stats.sent += 1;
        if self.net.drop_permille > 0 && self.rng.gen_range(0..1000) < self.net.drop_permille {
            self.stats.dropped += 1;
            if self.transcript.is_some() {
                let id = message.id().to_hex()[..16].to_owned();
                let tick = self.tick;
                self.log(Line::Drop {
                    tick,
                    from,
                    to,
                    id: &id,
                });
            }
            return;
        }
        let delay = if self.net.max_delay > self.net.min_delay {
            self.rng.gen_range(self.net.min_delay..=self.net.max_delay)
        } else {
            self.net.min_delay
        };
        self.schedule(
            self.tick + delay,
            Pending {
                from: Some(from),
                to,
                message,
            },
        );
    }

    fn note_commit(&mut self, node: ValidatorId, block: &Arc<Block>) {
        let record = CommitRecord {
            tick: self.tick,
            node,
            height: block.index,
            hash: block.hash,
            rounds: self.nodes[node as usize].cumulative_rounds(),
        };
        if self.transcript.is_some() {
            let hash = block.hash.to_hex();
            self.log(Line::Commit {
                tick: self.tick,
                node,
                height: block.index,
                hash: &hash,
            });
        }
        self.commits.push(record);
    }

    fn note_certificate(&mut self, block: &Block) {
        if !self.cert_checked.insert(block.hash) {
            return;
        }
        let config = self.nodes[0].config().clone();
        let signers: BTreeSet<ValidatorId> = block
            .signatures
            .iter()
            .filter(|s| {
                config
                    .validator(s.validator_id)
                    .is_some_and(|v| verify_block_signature(&block.hash, s, &v.public_key))
            })
            .map(|s| s.validator_id)
            .collect();
        if signers.len() >= quorum(config.validator_count()) && block.compute_hash() == block.hash {
            self.certified
                .entry(block.index)
                .or_default()
                .insert(block.hash);
        }
    }

    /// Heights for which delivered commit messages carried valid quorum
    /// certificates for two different blocks.
    pub fn certificate_conflicts(&self) -> BTreeSet<u64> {
        self.certified
            .iter()
            .filter(|(_, hashes)| hashes.len() > 1)
            .map(|(h, _)| *h)
            .collect()
    }

    /// Heights at which honest validators committed different blocks.
    pub fn conflicting_heights(&self) -> BTreeSet<u64> {
        let mut seen: BTreeMap<u64, Digest> = BTreeMap::new();
        let mut conflicts = BTreeSet::new();
        for c in self.commits.iter().filter(|c| self.is_honest(c.node)) {
            if *seen.entry(c.height).or_insert(c.hash) != c.hash {
                conflicts.insert(c.height);
            }
        }
        conflicts
    }
}
