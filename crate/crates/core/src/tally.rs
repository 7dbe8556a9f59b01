//! Threshold decryption of the frozen ballot list and the final cross-check
//! against the ledger and its public anchors.

use std::collections::{BTreeMap, HashMap, HashSet};

use num_bigint::BigUint;
use num_traits::Zero;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchoring::{
    batch_leaves, check_contiguous, verify_anchor, AnchorRecord, PublicChainAdapter,
};
use crate::canonical::{self, decimal};
use crate::config::ElectionConfig;
use crate::crypto::arith::random_range;
use crate::crypto::{
    elgamal, shamir, CryptoError, Digest, GroupParams, KeyShare, PartialDecryption,
};
use crate::ledger::{verify_chain, BallotTx, Block};
use crate::setup::{credential_hash, TrusteeShareFile};

/// Trusted-dealer key generation: samples the election secret, returns
/// `h = g^x` and `n_t` shares of `x`, and wipes `x`.
pub fn ceremony_keygen<R: RngCore + CryptoRng + ?Sized>(
    group: &GroupParams,
    threshold: usize,
    trustee_count: usize,
    rng: &mut R,
) -> Result<(BigUint, Vec<KeyShare>), CryptoError> {
    shamir::check_threshold(threshold, trustee_count, &group.q)?;
    let mut secret = random_range(rng, &BigUint::from(1u8), &group.q);
    let public = group.g_pow(&secret);
    let shares = shamir::split(&secret, threshold, trustee_count, &group.q, rng);
    secret.set_zero();
    Ok((public, shares?))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallotPartial {
    pub ballot_hash: Digest,
    #[serde(with = "decimal")]
    pub value: BigUint,
}

/// One trustee's partial decryptions of every frozen ballot, in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialSubmission {
    pub election_id: String,
    pub trustee_id: String,
    pub share_index: u32,
    pub partials: Vec<BallotPartial>,
}

impl PartialSubmission {
    pub fn to_canonical(&self) -> String {
        canonical::to_canonical(self)
    }
}

pub fn compute_partials(
    config: &ElectionConfig,
    share: &TrusteeShareFile,
    ballots: &[BallotTx],
) -> PartialSubmission {
    let partials = ballots
        .iter()
        .map(|tx| BallotPartial {
            ballot_hash: tx.ballot_hash,
            value: elgamal::partial_decrypt(&config.group, &share.share, &tx.ciphertext).value,
        })
        .collect();
    PartialSubmission {
        election_id: config.election_id.clone(),
        trustee_id: share.trustee_id.clone(),
        share_index: share.share.index,
        partials,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TallyResult {
    pub election_id: String,
    pub counts: BTreeMap<String, u64>,
    pub total_decrypted: u64,
    pub undecryptable: Vec<Digest>,
    pub crosscheck_passed: bool,
    pub trustees: Vec<String>,
}

impl TallyResult {
    pub fn to_canonical(&self) -> String {
        canonical::to_canonical(self)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TallyError {
    #[error("election already closed")]
    AlreadyClosed,
    #[error("election is still open")]
    ElectionOpen,
    #[error("unknown trustee {0:?}")]
    UnknownTrustee(String),
    #[error("trustee credential does not match")]
    BadCredential,
    #[error("share index does not match the registered trustee")]
    ShareMismatch,
    #[error("submission is for another election")]
    WrongElection,
    #[error("trustee {0:?} already submitted")]
    DuplicateSubmission(String),
    #[error("insufficient shares: need {needed}, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("missing partials for {} ballots", .0.len())]
    MissingPartials(Vec<Digest>),
}

/// Decrypts every ballot with the first `threshold` submissions and counts.
/// `crosscheck_passed` is left false; see [`crosscheck`].
pub fn combine_tally(
    config: &ElectionConfig,
    ballots: &[BallotTx],
    submissions: &[&PartialSubmission],
) -> Result<TallyResult, TallyError> {
    let mut chosen: Vec<&PartialSubmission> = Vec::new();
    let mut indices = HashSet::new();
    for s in submissions {
        if s.election_id != config.election_id {
            return Err(TallyError::WrongElection);
        }
        if chosen.len() < config.threshold && indices.insert(s.share_index) {
            chosen.push(s);
        }
    }
    if chosen.len() < config.threshold.max(1) {
        return Err(TallyError::InsufficientShares {
            needed: config.threshold,
            got: chosen.len(),
        });
    }
    let lookup: Vec<HashMap<Digest, &BigUint>> = chosen
        .iter()
        .map(|s| {
            s.partials
                .iter()
                .map(|p| (p.ballot_hash, &p.value))
                .collect()
        })
        .collect();
    let missing: Vec<Digest> = ballots
        .iter()
        .filter(|tx| lookup.iter().any(|m| !m.contains_key(&tx.ballot_hash)))
        .map(|tx| tx.ballot_hash)
        .collect();
    if !missing.is_empty() {
        return Err(TallyError::MissingPartials(missing));
    }

    let mut counts: BTreeMap<String, u64> =
        config.candidates.iter().map(|c| (c.clone(), 0)).collect();
    let mut undecryptable = Vec::new();
    for tx in ballots {
        let partials: Vec<PartialDecryption> = chosen
            .iter()
            .zip(&lookup)
            .map(|(s, m)| PartialDecryption {
                index: s.share_index,
                value: m[&tx.ballot_hash].clone(),
            })
            .collect();
        let decoded = if tx.ciphertext.is_well_formed(&config.group) {
            elgamal::combine(
                &config.group,
                &partials,
                config.threshold,
                &tx.ciphertext,
                config.candidate_count(),
            )
        } else {
            Err(CryptoError::NotACandidate)
        };
        match decoded {
            Ok(i) => {
                *counts
                    .get_mut(&config.candidates[i])
                    .expect("configured candidate") += 1
            }
            Err(CryptoError::InsufficientShares { needed, got }) => {
                return Err(TallyError::InsufficientShares { needed, got })
            }
            Err(_) => undecryptable.push(tx.ballot_hash),
        }
    }
    Ok(TallyResult {
        election_id: config.election_id.clone(),
        total_decrypted: counts.values().sum(),
        counts,
        undecryptable,
        crosscheck_passed: false,
        trustees: chosen.iter().map(|s| s.trustee_id.clone()).collect(),
    })
}

/// The three conditions behind `crosscheck_passed`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub chain_clean: bool,
    pub anchors_verified: bool,
    pub leaves_match: bool,
    pub problems: Vec<String>,
}

impl CrosscheckReport {
    pub fn passed(&self) -> bool {
        self.chain_clean && self.anchors_verified && self.leaves_match
    }
}

/// Verifies the chain, every anchor against the public chain, and that the
/// frozen ballot hashes are exactly the anchored leaves in order.
pub fn crosscheck(
    config: &ElectionConfig,
    blocks: &[Block],
    anchors: &[AnchorRecord],
    adapter: &dyn PublicChainAdapter,
    frozen: &[BallotTx],
) -> CrosscheckReport {
    let mut report = CrosscheckReport::default();
    let audit = verify_chain(blocks, config);
    report.chain_clean = audit.is_clean();
    report
        .problems
        .extend(audit.findings.iter().map(|f| f.to_string()));

    report.anchors_verified = check_contiguous(anchors);
    if !report.anchors_verified {
        report
            .problems
            .push("anchor ranges are not contiguous".into());
    }
    for record in anchors {
        match verify_anchor(blocks, record, &config.election_id, adapter) {
            Ok(true) => {}
            Ok(false) => {
                report.anchors_verified = false;
                report
                    .problems
                    .push(format!("anchor {} does not match", record.anchor_seq));
            }
            Err(e) => {
                report.anchors_verified = false;
                report
                    .problems
                    .push(format!("anchor {}: {e}", record.anchor_seq));
            }
        }
    }
    let head = blocks.len().saturating_sub(1) as u64;
    let covered = anchors.last().map_or(0, |r| r.last_block);
    if covered != head {
        report.anchors_verified = false;
        report.problems.push(format!(
            "anchors cover blocks up to {covered}, head is {head}"
        ));
    }

    let mut anchored = Vec::new();
    for record in anchors {
        let range = blocks
            .get(record.first_block as usize..=record.last_block as usize)
            .unwrap_or(&[]);
        if range.iter().any(|b| !b.txs.is_empty()) {
            anchored.extend(batch_leaves(range));
        }
    }
    let frozen_hashes: Vec<Digest> = frozen.iter().map(|tx| tx.ballot_hash).collect();
    let recomputed: Vec<Digest> = frozen.iter().map(|tx| tx.compute_hash()).collect();
    report.leaves_match = anchored == frozen_hashes && recomputed == frozen_hashes;
    if !report.leaves_match {
        report
            .problems
            .push("frozen ballots differ from the anchored leaves".into());
    }
    report
}

/// Close-time bookkeeping: the frozen ballot list and authenticated
/// trustee submissions.
#[derive(Debug)]
pub struct TallyBook {
    config: ElectionConfig,
    frozen: Option<Vec<BallotTx>>,
    submissions: BTreeMap<String, PartialSubmission>,
}

impl TallyBook {
    pub fn new(config: ElectionConfig) -> Self {
        TallyBook {
            config,
            frozen: None,
            submissions: BTreeMap::new(),
        }
    }

    pub fn is_closed(&self) -> bool {
        self.frozen.is_some()
    }

    /// Freezes the ballot list. Later calls fail.
    pub fn close(&mut self, ballots: Vec<BallotTx>) -> Result<&[BallotTx], TallyError> {
        if self.frozen.is_some() {
            return Err(TallyError::AlreadyClosed);
        }
        Ok(self.frozen.insert(ballots))
    }

    pub fn frozen(&self) -> Option<&[BallotTx]> {
        self.frozen.as_deref()
    }

    /// Accepts one trustee's partials after checking the trustee's
    /// credential and share index and that they cover the frozen list.
    pub fn submit(
        &mut self,
        credential: &str,
        submission: PartialSubmission,
    ) -> Result<(), TallyError> {
        if self.frozen.is_none() {
            return Err(TallyError::ElectionOpen);
        }
        let trustee = self
            .config
            .trustee(&submission.trustee_id)
            .ok_or_else(|| TallyError::UnknownTrustee(submission.trustee_id.clone()))?;
        if credential_hash(credential) != trustee.credential_hash {
            return Err(TallyError::BadCredential);
        }
        self.restore(submission)
    }

    /// Re-admits a submission that was authenticated earlier, e.g. from the
    /// gateway's own journal after a restart. Every check but the
    /// credential still applies.
    pub fn restore(&mut self, submission: PartialSubmission) -> Result<(), TallyError> {
        let frozen = self.frozen.as_ref().ok_or(TallyError::ElectionOpen)?;
        if submission.election_id != self.config.election_id {
            return Err(TallyError::WrongElection);
        }
        let trustee = self
            .config
            .trustee(&submission.trustee_id)
            .ok_or_else(|| TallyError::UnknownTrustee(submission.trustee_id.clone()))?;
        if trustee.index != submission.share_index {
            return Err(TallyError::ShareMismatch);
        }
        if self.submissions.contains_key(&submission.trustee_id) {
            return Err(TallyError::DuplicateSubmission(submission.trustee_id));
        }
        let covered: Vec<Digest> = submission.partials.iter().map(|p| p.ballot_hash).collect();
        let expected: Vec<Digest> = frozen.iter().map(|tx| tx.ballot_hash).collect();
        if covered != expected {
            let have: HashSet<&Digest> = covered.iter().collect();
            let missing = expected.into_iter().filter(|h| !have.contains(h)).collect();
            return Err(TallyError::MissingPartials(missing));
        }
        self.submissions
            .insert(submission.trustee_id.clone(), submission);
        Ok(())
    }

    pub fn submitted(&self) -> Vec<&str> {
        self.submissions.keys().map(String::as_str).collect()
    }

    pub fn ready(&self) -> bool {
        self.is_closed() && self.submissions.len() >= self.config.threshold
    }

    /// Combines the submissions, lowest share indices first.
    pub fn combine(&self) -> Result<TallyResult, TallyError> {
        let frozen = self.frozen.as_ref().ok_or(TallyError::ElectionOpen)?;
        let mut subs: Vec<&PartialSubmission> = self.submissions.values().collect();
        subs.sort_by_key(|s| s.share_index);
        combine_tally(&self.config, frozen, &subs)
    }
}

/// Zero for every candidate.
pub fn empty_result(config: &ElectionConfig) -> TallyResult {
    TallyResult {
        election_id: config.election_id.clone(),
        counts: config.candidates.iter().map(|c| (c.clone(), 0)).collect(),
        total_decrypted: 0,
        undecryptable: Vec::new(),
        crosscheck_passed: false,
        trustees: Vec::new(),
    }
}
