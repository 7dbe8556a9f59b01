//! Election configuration shared by every role.

use std::collections::BTreeSet;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, decimal};
use crate::crypto::{Digest, GroupParams, RsaPublicKey, MAX_CANDIDATES};

pub type ValidatorId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Ballots are stored only as ciphertexts.
    Sealed,
    /// Ballots also carry the plaintext candidate label.
    Demo,
}

/// Anchor when `blocks` new blocks exist or `seconds` have elapsed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorPolicy {
    pub blocks: u64,
    pub seconds: u64,
}

impl Default for AnchorPolicy {
    fn default() -> Self {
        AnchorPolicy {
            blocks: 8,
            seconds: 60,
        }
    }
}

/// Consensus timing, in ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusParams {
    pub max_txs_per_block: usize,
    pub propose_timeout: u64,
    pub vote_timeout: u64,
    /// Ticks a leader waits for more transactions before proposing a
    /// partially filled block.
    pub propose_delay: u64,
    /// Wall-clock length of one tick for live nodes.
    pub tick_ms: u64,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        ConsensusParams {
            max_txs_per_block: 25,
            propose_timeout: 10,
            vote_timeout: 10,
            propose_delay: 1,
            tick_ms: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorInfo {
    pub id: ValidatorId,
    pub public_key: RsaPublicKey,
    pub address: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrusteeInfo {
    pub id: String,
    pub index: u32,
    pub credential_hash: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectionConfig {
    pub election_id: String,
    pub candidates: Vec<String>,
    pub mode: Mode,
    pub group: GroupParams,
    #[serde(with = "decimal")]
    pub election_public_key: BigUint,
    pub registrar_key: RsaPublicKey,
    pub validators: Vec<ValidatorInfo>,
    pub trustees: Vec<TrusteeInfo>,
    pub threshold: usize,
    pub trustee_count: usize,
    pub anchor_policy: AnchorPolicy,
    pub consensus: ConsensusParams,
    pub open_time: u64,
    pub close_time: Option<u64>,
    pub operator_credential_hash: Option<Digest>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid election config: {0}")]
pub struct ConfigError(pub String);

impl ElectionConfig {
    pub fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidate_index(&self, label: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c == label)
    }

    pub fn validator_count(&self) -> usize {
        self.validators.len()
    }

    pub fn validator(&self, id: ValidatorId) -> Option<&ValidatorInfo> {
        self.validators.get(id as usize).filter(|v| v.id == id)
    }

    pub fn trustee(&self, id: &str) -> Option<&TrusteeInfo> {
        self.trustees.iter().find(|t| t.id == id)
    }

    pub fn to_canonical(&self) -> String {
        canonical::to_canonical(self)
    }

    pub fn from_canonical(text: &str) -> Result<Self, ConfigError> {
        let config: ElectionConfig =
            canonical::from_canonical(text.trim_end()).map_err(|e| ConfigError(e.to_string()))?;
        config.validate_structure()?;
        Ok(config)
    }

    /// Full validation, including primality of the group parameters.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_structure()?;
        self.group
            .validate()
            .map_err(|e| ConfigError(e.to_string()))
    }

    /// Everything except the (slow) primality checks.
    pub fn validate_structure(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError(msg));
        if self.election_id.is_empty() || self.election_id.chars().any(|c| c.is_control()) {
            return fail("election_id must be non-empty printable text".into());
        }
        if self.candidates.is_empty() || self.candidates.len() > MAX_CANDIDATES {
            return fail(format!("candidate count must be in 1..={MAX_CANDIDATES}"));
        }
        if BigUint::from(self.candidates.len()) >= self.group.q {
            return fail("more candidates than the group can encode".into());
        }
        let labels: BTreeSet<&str> = self.candidates.iter().map(String::as_str).collect();
        if labels.len() != self.candidates.len() || labels.contains("") {
            return fail("candidate labels must be unique and non-empty".into());
        }
        if !self.group.is_member(&self.election_public_key) {
            return fail("election public key is not a group element".into());
        }
        if self.validators.is_empty() {
            return fail("at least one validator is required".into());
        }
        for (position, v) in self.validators.iter().enumerate() {
            if v.id as usize != position {
                return fail("validator ids must be 0..n in order".into());
            }
        }
        if self.trustee_count != self.trustees.len() {
            return fail("trustee_count does not match trustee list".into());
        }
        if self.threshold == 0 || self.threshold > self.trustee_count {
            return fail(format!(
                "threshold {} of {} trustees",
                self.threshold, self.trustee_count
            ));
        }
        let ids: BTreeSet<&str> = self.trustees.iter().map(|t| t.id.as_str()).collect();
        let indices: BTreeSet<u32> = self.trustees.iter().map(|t| t.index).collect();
        if ids.len() != self.trustees.len() || indices.len() != self.trustees.len() {
            return fail("trustee ids and share indices must be unique".into());
        }
        if indices
            .iter()
            .any(|&i| i == 0 || i as usize > self.trustee_count)
        {
            return fail("trustee share indices must lie in 1..=n".into());
        }
        if self.anchor_policy.blocks == 0 {
            return fail("anchor policy needs at least one block per anchor".into());
        }
        if self.consensus.max_txs_per_block == 0 {
            return fail("max_txs_per_block must be positive".into());
        }
        if let Some(close) = self.close_time {
            if close < self.open_time {
                return fail("close_time precedes open_time".into());
            }
        }
        Ok(())
    }
}
