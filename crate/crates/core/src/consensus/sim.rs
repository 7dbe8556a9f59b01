//! Seeded consensus simulation with faulty validators, lossy links and a
//! message fuzzer. A scenario plus its seed fully determines the transcript.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::cluster::{Cluster, Fault, NetParams, NetStats};
use super::message::{ConsensusMessage, Payload, Signature, VoteStage};
use super::node::{Telemetry, Validator};
use crate::canonical;
use crate::client::build_ballot;
use crate::config::ValidatorId;
use crate::crypto::{sha256, Digest, RsaKey};
use crate::ledger::{Block, ChainState, TokenSerial};
use crate::setup::{generate_election, ElectionSetup, SetupParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Silent,
    Equivocate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub seed: u64,
    pub validators: usize,
    #[serde(default)]
    pub byzantine: BTreeMap<ValidatorId, Behavior>,
    #[serde(default)]
    pub drop_permille: u32,
    #[serde(default)]
    pub min_delay: u64,
    #[serde(default = "one")]
    pub max_delay: u64,
    /// Ballots submitted, one every `tx_interval` ticks, each to one
    /// validator chosen at random.
    pub txs: usize,
    #[serde(default = "one")]
    pub tx_interval: u64,
    /// Ballots that are later resubmitted with the same token through a
    /// different validator.
    #[serde(default)]
    pub replays: usize,
    #[serde(default)]
    pub fuzz_messages: usize,
    #[serde(default = "fifty")]
    pub fuzz_per_tick: usize,
    pub max_ticks: u64,
}

fn one() -> u64 {
    1
}

fn fifty() -> usize {
    50
}

impl SimScenario {
    pub fn to_canonical(&self) -> String {
        canonical::to_canonical(self)
    }

    pub fn from_canonical(text: &str) -> Result<Self, canonical::CanonicalError> {
        canonical::from_canonical(text.trim_end())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimMetrics {
    pub ticks: u64,
    pub net: NetStats,
    pub telemetry: BTreeMap<ValidatorId, Telemetry>,
    pub heights: BTreeMap<ValidatorId, u64>,
    pub max_rounds_to_commit: u64,
    pub replay_rejections: u64,
}

#[derive(Clone, Debug)]
pub struct SimReport {
    pub transcript: Vec<String>,
    pub metrics: SimMetrics,
    /// Heights where honest validators or valid certificates disagree.
    pub conflicts: BTreeSet<u64>,
    /// Block hash sequence per honest validator.
    pub chains: BTreeMap<ValidatorId, Vec<Digest>>,
    /// Every submitted token is spent on every honest chain.
    pub all_committed: bool,
    /// Token serials appearing more than once on any honest chain.
    pub double_spends: usize,
    /// Every honest chain passes a from-scratch audit.
    pub chains_valid: bool,
}

impl SimReport {
    pub fn chains_identical(&self) -> bool {
        let mut it = self.chains.values();
        match it.next() {
            Some(first) => it.all(|c| c == first),
            None => true,
        }
    }

    pub fn transcript_text(&self) -> String {
        let mut out = String::new();
        for line in &self.transcript {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

pub fn scenario_election(scenario: &SimScenario) -> ElectionSetup {
    let params = SetupParams::toy("sim", &["A", "B", "C"], scenario.validators);
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed ^ 0x5151);
    generate_election(&params, &mut rng).expect("sim setup")
}

pub fn run_sim(scenario: &SimScenario) -> SimReport {
    let setup = Arc::new(scenario_election(scenario));
    let config = Arc::new(setup.config.clone());
    let nodes: Vec<Validator> = (0..scenario.validators)
        .map(|i| {
            let chain = ChainState::new(config.clone(), setup.genesis.clone()).expect("genesis");
            Validator::new(i as ValidatorId, setup.validator_keys[i].clone(), chain)
        })
        .collect();
    let faults = scenario
        .byzantine
        .iter()
        .map(|(id, b)| {
            let fault = match b {
                Behavior::Silent => Fault::Silent,
                Behavior::Equivocate => {
                    Fault::Equivocate(setup.validator_keys[*id as usize].clone())
                }
            };
            (*id, fault)
        })
        .collect();
    let net = NetParams {
        drop_permille: scenario.drop_permille,
        min_delay: scenario.min_delay,
        max_delay: scenario.max_delay,
    };
    let mut cluster = Cluster::new(nodes, net, scenario.seed)
        .with_faults(faults)
        .record_transcript();
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed.wrapping_add(1));
    let honest = cluster.honest_ids();
    let adversary = scenario
        .byzantine
        .keys()
        .next()
        .map(|id| (*id, setup.validator_keys[*id as usize].clone()));
    let mut fuzzer = Fuzzer {
        adversary,
        injected: 0,
    };

    // Replays may win the race against their original, so completion is
    // judged by spent token serials.
    let mut submitted: Vec<TokenSerial> = Vec::new();
    let mut submit_rounds: HashMap<(ValidatorId, Digest), u64> = HashMap::new();
    let mut replay_queue: Vec<(u64, crate::client::Token, ValidatorId)> = Vec::new();
    let mut replay_rejections = 0;
    let mut next_tx = 0usize;
    let mut last_submit = 0u64;

    while cluster.tick() < scenario.max_ticks {
        if next_tx < scenario.txs && cluster.tick() >= last_submit + scenario.tx_interval {
            last_submit = cluster.tick();
            let token = crate::testkit::token(&setup, &mut rng);
            let tx = build_ballot(&setup.config, &token, next_tx % 3, &mut rng).expect("ballot");
            let to = honest[rng.gen_range(0..honest.len())];
            for id in &honest {
                submit_rounds.insert((*id, tx.ballot_hash), cluster.node(*id).cumulative_rounds());
            }
            submitted.push(tx.token_serial);
            let _ = cluster.submit(to, tx);
            if next_tx < scenario.replays {
                let other =
                    honest[(honest.iter().position(|i| *i == to).unwrap() + 1) % honest.len()];
                replay_queue.push((cluster.tick() + rng.gen_range(0..20), token, other));
            }
            next_tx += 1;
        }
        let now = cluster.tick();
        let (due, later): (Vec<_>, Vec<_>) =
            replay_queue.drain(..).partition(|(at, _, _)| *at <= now);
        replay_queue = later;
        for (_, token, to) in due {
            let twin = build_ballot(&setup.config, &token, 2, &mut rng).expect("ballot");
            if cluster.submit(to, twin).is_err() {
                replay_rejections += 1;
            }
        }
        if fuzzer.injected < scenario.fuzz_messages {
            let batch = scenario
                .fuzz_per_tick
                .min(scenario.fuzz_messages - fuzzer.injected);
            for _ in 0..batch {
                fuzzer.inject(&mut cluster, &honest, &mut rng);
            }
        }
        cluster.step();

        let done = next_tx == scenario.txs
            && replay_queue.is_empty()
            && fuzzer.injected >= scenario.fuzz_messages
            && honest.iter().all(|id| {
                let chain = cluster.node(*id).chain();
                submitted.iter().all(|s| chain.is_spent(s))
            });
        if done {
            break;
        }
    }

    // Liveness: rounds each honest validator went through between a
    // ballot's submission and its commit.
    let mut max_rounds = 0;
    let commit_rounds = commit_round_index(&cluster);
    for ((node, ballot), start) in &submit_rounds {
        if let Some(end) = commit_rounds.get(&(*node, *ballot)) {
            max_rounds = max_rounds.max(end.saturating_sub(*start));
        }
    }

    let mut conflicts = cluster.conflicting_heights();
    conflicts.extend(cluster.certificate_conflicts());
    let chains: BTreeMap<ValidatorId, Vec<Digest>> = honest
        .iter()
        .map(|id| {
            (
                *id,
                cluster
                    .node(*id)
                    .chain()
                    .blocks()
                    .iter()
                    .map(|b| b.hash)
                    .collect(),
            )
        })
        .collect();
    let all_committed = honest.iter().all(|id| {
        let chain = cluster.node(*id).chain();
        submitted.iter().all(|s| chain.is_spent(s))
    });
    let mut double_spends = 0;
    let mut chains_valid = true;
    for id in &honest {
        let chain = cluster.node(*id).chain();
        let mut serials: HashSet<TokenSerial> = HashSet::new();
        for tx in chain.ballots() {
            if !serials.insert(tx.token_serial) {
                double_spends += 1;
            }
        }
        let blocks: Vec<Block> = chain.blocks().iter().map(|b| (**b).clone()).collect();
        chains_valid &= crate::ledger::verify_chain(&blocks, &setup.config).is_clean();
    }

    let metrics = SimMetrics {
        ticks: cluster.tick(),
        net: cluster.stats(),
        telemetry: honest
            .iter()
            .map(|id| (*id, cluster.node(*id).telemetry()))
            .collect(),
        heights: honest
            .iter()
            .map(|id| (*id, cluster.node(*id).chain().height()))
            .collect(),
        max_rounds_to_commit: max_rounds,
        replay_rejections,
    };
    SimReport {
        transcript: cluster.transcript().to_vec(),
        metrics,
        conflicts,
        chains,
        all_committed,
        double_spends,
        chains_valid,
    }
}

/// For each honest validator and committed ballot, the validator's
/// cumulative round count just after the ballot's block committed.
fn commit_round_index(cluster: &Cluster) -> HashMap<(ValidatorId, Digest), u64> {
    let mut at: HashMap<(ValidatorId, u64), u64> = HashMap::new();
    for c in cluster.commits() {
        at.entry((c.node, c.height)).or_insert(c.rounds);
    }
    let mut out = HashMap::new();
    for id in cluster.honest_ids() {
        for block in cluster.node(id).chain().blocks().iter().skip(1) {
            if let Some(rounds) = at.get(&(id, block.index)) {
                for tx in &block.txs {
                    out.insert((id, tx.ballot_hash), *rounds);
                }
            }
        }
    }
    out
}

struct Fuzzer {
    adversary: Option<(ValidatorId, RsaKey)>,
    injected: usize,
}

impl Fuzzer {
    fn inject(&mut self, cluster: &mut Cluster, honest: &[ValidatorId], rng: &mut ChaCha20Rng) {
        self.injected += 1;
        let to = honest[rng.gen_range(0..honest.len())];
        let view = cluster.node(to).view();
        let recent = cluster.recent();
        let base = (!recent.is_empty()).then(|| recent[rng.gen_range(0..recent.len())].clone());
        let kinds = if self.adversary.is_some() { 9 } else { 4 };
        let msg = match (rng.gen_range(0..kinds), base) {
            (0, Some(m)) => m,
            (1, Some(mut m)) => {
                m.round += rng.gen_range(1..5);
                m
            }
            (2, Some(mut m)) => {
                m.sender = rng.gen_range(0..cluster.nodes().len() as ValidatorId);
                m
            }
            (3, Some(mut m)) => {
                m.signature = Signature(
                    &m.signature.0 ^ num_bigint::BigUint::from(1u8 << rng.gen_range(0..8)),
                );
                m
            }
            (k, base) => {
                let Some((id, key)) = self.adversary.clone() else {
                    return;
                };
                let height = view.height;
                let round = view.round + rng.gen_range(0..3);
                let random_hash = sha256(&rng.gen::<[u8; 32]>());
                let payload = match k {
                    4 => Payload::Vote {
                        stage: if rng.gen_bool(0.5) {
                            VoteStage::Prevote
                        } else {
                            VoteStage::Precommit
                        },
                        block_hash: Some(random_hash),
                        block_signature: None,
                    },
                    5 => Payload::ViewChange {},
                    6 => {
                        let head = cluster.node(to).chain().head().clone();
                        let txs = match &base.map(|b| b.payload) {
                            Some(Payload::Propose { block, .. }) => block.txs.clone(),
                            _ => Vec::new(),
                        };
                        let block = Block::new(
                            height,
                            head.timestamp,
                            head.hash,
                            head.election_id.clone(),
                            txs,
                        );
                        Payload::Propose {
                            block,
                            valid_round: None,
                            pol: vec![],
                            gossip: vec![],
                        }
                    }
                    7 => {
                        let head = cluster.node(to).chain().head().clone();
                        let mut block = Block::new(
                            height,
                            head.timestamp,
                            head.hash,
                            head.election_id.clone(),
                            vec![],
                        );
                        // Borrow a certificate from another block.
                        block.signatures = head.signatures.clone();
                        Payload::Commit { block }
                    }
                    _ => Payload::Vote {
                        stage: VoteStage::Precommit,
                        block_hash: Some(random_hash),
                        block_signature: Some(Signature(crate::crypto::rsa::sign(
                            &crate::ledger::block_signature_message(&random_hash),
                            &key,
                        ))),
                    },
                };
                let round = if k == 5 {
                    view.round + rng.gen_range(1..50)
                } else {
                    round
                };
                ConsensusMessage::sign(height, round, id, payload, &key)
            }
        };
        cluster.inject(to, msg);
    }
}
