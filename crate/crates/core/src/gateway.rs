//! Voter- and auditor-facing API, independent of any HTTP stack.
//!
//! Each endpoint is a method on [`Gateway`] that takes the raw request body
//! and returns a status code plus a canonical body. The server binary only
//! maps routes onto these methods.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigUint;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchoring::{batch_leaves, AnchorPayload, AnchorRecord, PublicChainAdapter};
use crate::canonical::{self, decimal};
use crate::config::{ElectionConfig, Mode};
use crate::crypto::{merkle_verify, Digest, MerkleProof, MerkleTree};
use crate::ledger::{BallotTx, ChainState, TxError};
use crate::registrar::RegistrarError;
use crate::tally::{PartialSubmission, TallyError, TallyResult};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error(transparent)]
    Registrar(#[from] RegistrarError),
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error(transparent)]
    Tally(#[from] TallyError),
    #[error("election closed")]
    Closed,
    #[error("credential does not match")]
    Unauthorized,
    #[error("{0} unavailable")]
    Unavailable(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloseSummary {
    pub ballots: u64,
    pub height: u64,
    pub anchors: u64,
}

/// Everything the gateway needs from the rest of the system. Implemented
/// in-process by [`crate::election::Election`] and over the network by the
/// server binary.
pub trait ElectionBackend: Send + Sync {
    fn config(&self) -> Arc<ElectionConfig>;
    /// Current unix time as seen by the election.
    fn now(&self) -> u64;
    fn issue_token(
        &self,
        voter_id: &str,
        credential: &str,
        blinded: &BigUint,
    ) -> Result<BigUint, BackendError>;
    /// Hands a ballot to the validators. `Ok` means it entered a pool.
    fn submit_ballot(&self, tx: BallotTx) -> Result<(), BackendError>;
    /// A consistent snapshot of the committed chain.
    fn chain(&self) -> ChainState;
    fn anchors(&self) -> Vec<AnchorRecord>;
    fn public_chain(&self) -> Arc<dyn PublicChainAdapter>;
    /// True once the operator closed the election.
    fn is_closed(&self) -> bool;
    fn close(&self) -> Result<CloseSummary, BackendError>;
    /// The frozen ballot list, available after close.
    fn frozen_ballots(&self) -> Option<Vec<BallotTx>>;
    /// Stores one trustee's partials; returns how many trustees have
    /// submitted so far.
    fn submit_partials(
        &self,
        credential: &str,
        submission: PartialSubmission,
    ) -> Result<usize, BackendError>;
    fn tally(&self) -> Option<TallyResult>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: String,
}

impl ApiResponse {
    pub fn ok<T: Serialize>(body: &T) -> Self {
        ApiResponse {
            status: 200,
            body: canonical::to_canonical(body),
        }
    }

    pub fn error(status: u16, code: &str, detail: impl Into<String>) -> Self {
        let body = ApiError {
            error: code.to_owned(),
            detail: detail.into(),
        };
        ApiResponse {
            status,
            body: canonical::to_canonical(&body),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn json<T: DeserializeOwned>(&self) -> Result<T, serde_json::Error> {
        serde_json::from_str(&self.body)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiError {
    pub error: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckinRequest {
    pub voter_id: String,
    pub credential: String,
    #[serde(with = "decimal")]
    pub blinded_value: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckinResponse {
    #[serde(with = "decimal")]
    pub blind_signature: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CastResponse {
    pub ballot_hash: Digest,
    pub status: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiptStatus {
    Pending,
    Anchored,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Receipt {
    pub election_id: String,
    pub ballot_hash: Digest,
    pub block_index: u64,
    pub leaf_index: Option<u64>,
    pub merkle_proof: Option<MerkleProof>,
    pub anchor_txid: Option<Digest>,
    pub anchor_root: Option<Digest>,
    pub status: ReceiptStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRequest {
    pub ballot_hash: Digest,
    pub merkle_proof: MerkleProof,
    pub anchor_txid: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyResponse {
    pub valid: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRow {
    pub index: u64,
    pub timestamp: u64,
    pub hash: Digest,
    pub prev_hash: Digest,
    pub tx_count: u64,
    /// Candidate labels, demo mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    /// Ballot hashes, sealed mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ballot_hashes: Option<Vec<Digest>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainView {
    pub height: u64,
    pub rows: Vec<ChainRow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsView {
    pub mode: Mode,
    /// `live` (demo totals), `sealed` (before the tally) or `final`.
    pub status: String,
    pub ballots: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<BTreeMap<String, u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undecryptable: Option<Vec<Digest>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crosscheck_passed: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorsView {
    pub anchors: Vec<AnchorRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialRequest {
    pub credential: String,
    pub submission: PartialSubmission,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialResponse {
    pub submitted: u64,
    pub threshold: u64,
    pub tallied: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloseRequest {
    pub credential: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenBallots {
    pub ballots: Vec<BallotTx>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusView {
    pub election_id: String,
    pub height: u64,
    pub ballots: u64,
    pub anchors: u64,
    pub closed: bool,
}

/// The receipt for `ballot_hash`: its block and, once anchored, its
/// inclusion proof under the covering anchor.
pub fn build_receipt(
    chain: &ChainState,
    anchors: &[AnchorRecord],
    ballot_hash: &Digest,
) -> Option<Receipt> {
    let location = chain.locate_ballot(ballot_hash)?;
    let mut receipt = Receipt {
        election_id: chain.config().election_id.clone(),
        ballot_hash: *ballot_hash,
        block_index: location.block_index,
        leaf_index: None,
        merkle_proof: None,
        anchor_txid: None,
        anchor_root: None,
        status: ReceiptStatus::Pending,
    };
    let Some(anchor) = anchors
        .iter()
        .find(|a| a.covers(location.block_index) && a.txid.is_some())
    else {
        return Some(receipt);
    };
    let range = chain
        .blocks()
        .get(anchor.first_block as usize..=anchor.last_block as usize)?;
    let leaves = batch_leaves(range.iter().map(|b| b.as_ref()));
    let index = leaves.iter().position(|l| l == ballot_hash)?;
    let proof = MerkleTree::build(&leaves).ok()?.prove(index).ok()?;
    receipt.leaf_index = Some(index as u64);
    receipt.merkle_proof = Some(proof);
    receipt.anchor_txid = anchor.txid;
    receipt.anchor_root = Some(anchor.batch_root);
    receipt.status = ReceiptStatus::Anchored;
    Some(receipt)
}

/// Checks a receipt against the public chain alone. `None` when the txid is
/// unknown there.
pub fn verify_receipt(
    adapter: &dyn PublicChainAdapter,
    election_id: &str,
    ballot_hash: &Digest,
    proof: &MerkleProof,
    txid: &Digest,
) -> Result<Option<VerifyResponse>, BackendError> {
    let fetched = adapter
        .fetch(txid)
        .map_err(|e| BackendError::Unavailable(e.to_string()))?;
    let Some((payload, _)) = fetched else {
        return Ok(None);
    };
    let verdict = |valid: bool, detail: &str| {
        Some(VerifyResponse {
            valid,
            detail: detail.to_owned(),
        })
    };
    let Ok(payload) = AnchorPayload::from_bytes(&payload) else {
        return Ok(verdict(false, "anchor payload unparseable"));
    };
    if payload.election_id != election_id {
        return Ok(verdict(false, "election_id mismatch"));
    }
    if !merkle_verify(ballot_hash, proof, &payload.batch_root) {
        return Ok(verdict(false, "root mismatch"));
    }
    Ok(verdict(true, "ballot included under anchored root"))
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiResponse> {
    serde_json::from_slice(body)
        .map_err(|e| ApiResponse::error(400, "MalformedRequest", e.to_string()))
}

fn error_name<E: std::fmt::Debug>(e: &E) -> String {
    let name = format!("{e:?}");
    name.split(['(', ' ', '{'])
        .next()
        .unwrap_or_default()
        .to_owned()
}

fn backend_error(e: BackendError) -> ApiResponse {
    let detail = e.to_string();
    match &e {
        BackendError::Registrar(r) => {
            let status = match r {
                RegistrarError::UnknownVoter => 404,
                RegistrarError::BadCredential => 403,
                RegistrarError::AlreadyIssued => 409,
                RegistrarError::BadBlindedValue => 400,
                _ => 500,
            };
            ApiResponse::error(status, &error_name(r), detail)
        }
        BackendError::Tx(t) => {
            let status = if *t == TxError::DoubleVote { 409 } else { 400 };
            ApiResponse::error(status, &error_name(t), detail)
        }
        BackendError::Tally(t) => {
            let status = match t {
                TallyError::UnknownTrustee(_) => 404,
                TallyError::BadCredential => 403,
                TallyError::ElectionOpen
                | TallyError::AlreadyClosed
                | TallyError::DuplicateSubmission(_)
                | TallyError::InsufficientShares { .. } => 409,
                _ => 400,
            };
            ApiResponse::error(status, &error_name(t), detail)
        }
        BackendError::Closed => ApiResponse::error(410, "ElectionClosed", detail),
        BackendError::Unauthorized => ApiResponse::error(403, "BadCredential", detail),
        BackendError::Unavailable(what) if what == "registrar" => {
            ApiResponse::error(503, "RegistrarDown", detail)
        }
        BackendError::Unavailable(_) => ApiResponse::error(503, "Unavailable", detail),
        BackendError::Internal(_) => ApiResponse::error(500, "Internal", detail),
    }
}

fn respond<T: Serialize>(result: Result<T, BackendError>) -> ApiResponse {
    match result {
        Ok(v) => ApiResponse::ok(&v),
        Err(e) => backend_error(e),
    }
}

pub struct Gateway<B: ?Sized> {
    backend: Arc<B>,
}

impl<B: ?Sized> Clone for Gateway<B> {
    fn clone(&self) -> Self {
        Gateway {
            backend: self.backend.clone(),
        }
    }
}

impl<B: ElectionBackend + ?Sized> Gateway<B> {
    pub fn new(backend: Arc<B>) -> Self {
        Gateway { backend }
    }

    pub fn backend(&self) -> &Arc<B> {
        &self.backend
    }

    fn closed(&self) -> bool {
        let config = self.backend.config();
        self.backend.is_closed() || config.close_time.is_some_and(|t| self.backend.now() >= t)
    }

    /// POST /api/checkin
    pub fn checkin(&self, body: &[u8]) -> ApiResponse {
        let req: CheckinRequest = match parse_body(body) {
            Ok(r) => r,
            Err(resp) => return resp,
        };
        if self.closed() {
            return backend_error(BackendError::Closed);
        }
        respond(
            self.backend
                .issue_token(&req.voter_id, &req.credential, &req.blinded_value)
                .map(|blind_signature| CheckinResponse { blind_signature }),
        )
    }

    /// POST /api/vote
    pub fn vote(&self, body: &[u8]) -> ApiResponse {
        let tx: BallotTx = match parse_body(body) {
            Ok(tx) => tx,
            Err(resp) => return resp,
        };
        if self.closed() {
            return backend_error(BackendError::Closed);
        }
        let ballot_hash = tx.compute_hash();
        respond(self.backend.submit_ballot(tx).map(|()| CastResponse {
            ballot_hash,
            status: "accepted".into(),
        }))
    }

    /// GET /api/receipt/{hash}
    pub fn receipt(&self, hash: &str) -> ApiResponse {
        let Ok(hash) = Digest::from_hex(hash) else {
            return ApiResponse::error(
                400,
                "MalformedRequest",
                "ballot hash must be 64 hex digits",
            );
        };
        let chain = self.backend.chain();
        match build_receipt(&chain, &self.backend.anchors(), &hash) {
            Some(r) => ApiResponse::ok(&r),
            None => ApiResponse::error(404, "UnknownBallot", "no committed ballot with this hash"),
        }
    }

    /// GET /api/results
    pub fn results(&self) -> ApiResponse {
        let chain = self.backend.chain();
        let config = chain.config().clone();
        let ballots = chain.ballot_count() as u64;
        let mut view = ResultsView {
            mode: config.mode,
            status: "sealed".into(),
            ballots,
            counts: None,
            undecryptable: None,
            crosscheck_passed: None,
        };
        if let Some(tally) = self.backend.tally() {
            view.status = "final".into();
            view.counts = Some(tally.counts);
            view.undecryptable = Some(tally.undecryptable);
            view.crosscheck_passed = Some(tally.crosscheck_passed);
        } else if config.mode == Mode::Demo {
            let mut counts: BTreeMap<String, u64> =
                config.candidates.iter().map(|c| (c.clone(), 0)).collect();
            for tx in chain.ballots() {
                if let Some(n) = tx.label.as_ref().and_then(|l| counts.get_mut(l)) {
                    *n += 1;
                }
            }
            view.status = "live".into();
            view.counts = Some(counts);
        }
        ApiResponse::ok(&view)
    }

    /// GET /api/chain?from=&to=
    pub fn chain(&self, from: Option<u64>, to: Option<u64>) -> ApiResponse {
        let chain = self.backend.chain();
        let head = chain.height();
        let (from, to) = (from.unwrap_or(0), to.unwrap_or(head));
        if from > to || to > head {
            return ApiResponse::error(
                416,
                "RangeOutOfBounds",
                format!("valid range is 0..={head}"),
            );
        }
        let demo = chain.mode() == Mode::Demo;
        let rows = chain.blocks()[from as usize..=to as usize]
            .iter()
            .map(|b| ChainRow {
                index: b.index,
                timestamp: b.timestamp,
                hash: b.hash,
                prev_hash: b.prev_hash,
                tx_count: b.txs.len() as u64,
                candidates: demo.then(|| {
                    b.txs
                        .iter()
                        .map(|t| t.label.clone().unwrap_or_default())
                        .collect()
                }),
                ballot_hashes: (!demo).then(|| b.ballot_hashes().copied().collect()),
            })
            .collect();
        ApiResponse::ok(&ChainView { height: head, rows })
    }

    /// GET /api/anchors
    pub fn anchors(&self) -> ApiResponse {
        ApiResponse::ok(&AnchorsView {
            anchors: self.backend.anchors(),
        })
    }

    /// POST /api/verify
    pub fn verify(&self, body: &[u8]) -> ApiResponse {
        let req: VerifyRequest = match parse_body(body) {
            Ok(r) => r,
            Err(resp) => return resp,
        };
        let config = self.backend.config();
        let adapter = self.backend.public_chain();
        match verify_receipt(
            adapter.as_ref(),
            &config.election_id,
            &req.ballot_hash,
            &req.merkle_proof,
            &req.anchor_txid,
        ) {
            Ok(Some(v)) => ApiResponse::ok(&v),
            Ok(None) => ApiResponse::error(404, "UnknownTxid", "no such public-chain transaction"),
            Err(e) => backend_error(e),
        }
    }

    /// POST /api/tally/partial
    pub fn tally_partial(&self, body: &[u8]) -> ApiResponse {
        let req: PartialRequest = match parse_body(body) {
            Ok(r) => r,
            Err(resp) => return resp,
        };
        let threshold = self.backend.config().threshold as u64;
        respond(
            self.backend
                .submit_partials(&req.credential, req.submission)
                .map(|n| PartialResponse {
                    submitted: n as u64,
                    threshold,
                    tallied: self.backend.tally().is_some(),
                }),
        )
    }

    /// GET /api/tally/ballots
    pub fn tally_ballots(&self) -> ApiResponse {
        match self.backend.frozen_ballots() {
            Some(ballots) => ApiResponse::ok(&FrozenBallots { ballots }),
            None => backend_error(BackendError::Tally(TallyError::ElectionOpen)),
        }
    }

    /// GET /api/config
    pub fn config(&self) -> ApiResponse {
        ApiResponse::ok(self.backend.config().as_ref())
    }

    /// POST /api/close, authorised by the operator credential.
    pub fn close(&self, body: &[u8]) -> ApiResponse {
        let req: CloseRequest = match parse_body(body) {
            Ok(r) => r,
            Err(resp) => return resp,
        };
        let config = self.backend.config();
        let authorised = config
            .operator_credential_hash
            .is_some_and(|h| crate::setup::credential_hash(&req.credential) == h);
        if !authorised {
            return backend_error(BackendError::Unauthorized);
        }
        if self.backend.is_closed() {
            return backend_error(BackendError::Tally(TallyError::AlreadyClosed));
        }
        respond(self.backend.close())
    }

    /// GET /api/status
    pub fn status(&self) -> ApiResponse {
        let chain = self.backend.chain();
        ApiResponse::ok(&StatusView {
            election_id: chain.config().election_id.clone(),
            height: chain.height(),
            ballots: chain.ballot_count() as u64,
            anchors: self.backend.anchors().len() as u64,
            closed: self.closed(),
        })
    }

    /// Routes a request by method and path; the query string carries only
    /// `from` and `to` for the chain view.
    pub fn dispatch(&self, method: &str, path: &str, query: &str, body: &[u8]) -> ApiResponse {
        let param = |name: &str| -> Result<Option<u64>, ApiResponse> {
            for pair in query.split('&').filter(|p| !p.is_empty()) {
                let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
                if k == name {
                    return v.parse().map(Some).map_err(|_| {
                        ApiResponse::error(400, "MalformedRequest", format!("bad {name}"))
                    });
                }
            }
            Ok(None)
        };
        match (method, path) {
            ("POST", "/api/checkin") => self.checkin(body),
            ("POST", "/api/vote") => self.vote(body),
            ("GET", "/api/results") => self.results(),
            ("GET", "/api/chain") => match (param("from"), param("to")) {
                (Ok(from), Ok(to)) => self.chain(from, to),
                (Err(e), _) | (_, Err(e)) => e,
            },
            ("GET", "/api/anchors") => self.anchors(),
            ("POST", "/api/verify") => self.verify(body),
            ("POST", "/api/tally/partial") => self.tally_partial(body),
            ("GET", "/api/tally/ballots") => self.tally_ballots(),
            ("GET", "/api/config") => self.config(),
            ("POST", "/api/close") => self.close(body),
            ("GET", "/api/status") => self.status(),
            ("GET", p) if p.starts_with("/api/receipt/") => {
                self.receipt(&p["/api/receipt/".len()..])
            }
            _ => ApiResponse::error(404, "NotFound", format!("no route for {method} {path}")),
        }
    }
}
