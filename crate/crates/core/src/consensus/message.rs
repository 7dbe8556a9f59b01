use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::canonical::{self, decimal};
use crate::config::{ElectionConfig, ValidatorId};
use crate::crypto::{rsa, sha256_concat, Digest, RsaKey};
use crate::ledger::{BallotTx, Block, BlockSignature};

const MESSAGE_DOMAIN: &[u8] = b"CONSENSUS-MSG";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteStage {
    Prevote,
    Precommit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Propose,
    Vote,
    Commit,
    ViewChange,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    /// A block for this round. `valid_round` and `pol` re-propose a block
    /// that already gathered a prevote quorum in an earlier round; `pol`
    /// holds those prevotes. `gossip` relays pending transactions.
    Propose {
        block: Block,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        valid_round: Option<u64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        pol: Vec<ConsensusMessage>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        gossip: Vec<BallotTx>,
    },
    /// `block_hash` of `None` is a nil vote. Non-nil precommits carry the
    /// block signature that goes into the commit certificate.
    Vote {
        stage: VoteStage,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block_hash: Option<Digest>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block_signature: Option<Signature>,
    },
    /// A block with its quorum certificate.
    Commit { block: Block },
    /// The sender has moved to this message's round.
    ViewChange {},
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(#[serde(with = "decimal")] pub BigUint);

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Propose { .. } => MessageKind::Propose,
            Payload::Vote { .. } => MessageKind::Vote,
            Payload::Commit { .. } => MessageKind::Commit,
            Payload::ViewChange {} => MessageKind::ViewChange,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusMessage {
    pub height: u64,
    pub round: u64,
    pub sender: ValidatorId,
    pub payload: Payload,
    pub signature: Signature,
}

#[derive(Serialize)]
struct Unsigned<'a> {
    height: u64,
    round: u64,
    sender: ValidatorId,
    payload: &'a Payload,
}

fn signing_digest(height: u64, round: u64, sender: ValidatorId, payload: &Payload) -> Digest {
    let body = canonical::to_canonical_bytes(&Unsigned {
        height,
        round,
        sender,
        payload,
    });
    sha256_concat(&[MESSAGE_DOMAIN, &body])
}

impl ConsensusMessage {
    pub fn sign(
        height: u64,
        round: u64,
        sender: ValidatorId,
        payload: Payload,
        key: &RsaKey,
    ) -> Self {
        let digest = signing_digest(height, round, sender, &payload);
        let signature = Signature(rsa::sign(&digest, key));
        ConsensusMessage {
            height,
            round,
            sender,
            payload,
            signature,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    /// Checks the sender is a configured validator and the signature is
    /// theirs. Says nothing about the payload's contents.
    pub fn verify(&self, config: &ElectionConfig) -> bool {
        let Some(info) = config.validator(self.sender) else {
            return false;
        };
        let digest = signing_digest(self.height, self.round, self.sender, &self.payload);
        rsa::verify(&digest, &self.signature.0, &info.public_key)
    }

    /// Digest identifying this exact message, for logs.
    pub fn id(&self) -> Digest {
        crate::crypto::sha256(&canonical::to_canonical_bytes(self))
    }

    pub fn to_canonical(&self) -> String {
        canonical::to_canonical(self)
    }

    pub fn vote(&self) -> Option<(VoteStage, Option<Digest>)> {
        match &self.payload {
            Payload::Vote {
                stage, block_hash, ..
            } => Some((*stage, *block_hash)),
            _ => None,
        }
    }

    /// The block signature carried by a non-nil precommit.
    pub fn block_signature(&self) -> Option<BlockSignature> {
        match &self.payload {
            Payload::Vote {
                stage: VoteStage::Precommit,
                block_hash: Some(_),
                block_signature: Some(sig),
            } => Some(BlockSignature {
                validator_id: self.sender,
                signature: sig.0.clone(),
            }),
            _ => None,
        }
    }
}
