//! Voter-side steps: blind a fresh token serial, unblind the registrar's
//! signature, and encrypt a ballot bound to the token.

use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::decimal;
use crate::config::{ElectionConfig, Mode};
use crate::crypto::{elgamal, rsa, CryptoError, RsaPublicKey};
use crate::ledger::{token_message, BallotTx, TokenSerial};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("registrar signature does not verify")]
    BadRegistrarSignature,
    #[error("unknown candidate {0:?}")]
    UnknownCandidate(String),
}

/// A blinded serial waiting for the registrar's signature. Holds the
/// blinding factor, so it never leaves the voter's device.
#[derive(Clone)]
pub struct PendingToken {
    election_id: String,
    serial: TokenSerial,
    r: BigUint,
    blinded: BigUint,
}

impl PendingToken {
    pub fn new<R: RngCore + CryptoRng + ?Sized>(
        election_id: &str,
        registrar_key: &RsaPublicKey,
        rng: &mut R,
    ) -> Result<Self, CryptoError> {
        let serial = TokenSerial::random(rng);
        let r = rsa::random_blinding_factor(registrar_key, rng);
        let blinded = rsa::blind(&token_message(election_id, &serial), registrar_key, &r)?;
        Ok(PendingToken {
            election_id: election_id.to_owned(),
            serial,
            r,
            blinded,
        })
    }

    /// The value sent to the registrar.
    pub fn blinded(&self) -> &BigUint {
        &self.blinded
    }

    pub fn finish(
        self,
        blind_sig: &BigUint,
        registrar_key: &RsaPublicKey,
    ) -> Result<Token, ClientError> {
        let signature = rsa::unblind(blind_sig, &self.r, registrar_key)?;
        if !rsa::verify(
            &token_message(&self.election_id, &self.serial),
            &signature,
            registrar_key,
        ) {
            return Err(ClientError::BadRegistrarSignature);
        }
        Ok(Token {
            serial: self.serial,
            signature,
        })
    }
}

impl std::fmt::Debug for PendingToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PendingToken")
            .field("serial", &self.serial)
            .finish_non_exhaustive()
    }
}

/// An unblinded anonymous voting token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Token {
    pub serial: TokenSerial,
    #[serde(with = "decimal")]
    pub signature: BigUint,
}

/// Encrypts `candidate` under the election key and binds it to `token`.
pub fn build_ballot<R: RngCore + CryptoRng + ?Sized>(
    config: &ElectionConfig,
    token: &Token,
    candidate: usize,
    rng: &mut R,
) -> Result<BallotTx, ClientError> {
    let ciphertext = elgamal::encrypt_random(
        &config.group,
        &config.election_public_key,
        candidate,
        config.candidate_count(),
        rng,
    )?;
    let label = match config.mode {
        Mode::Demo => Some(config.candidates[candidate].clone()),
        Mode::Sealed => None,
    };
    Ok(BallotTx::new(
        config.election_id.clone(),
        ciphertext,
        token.serial,
        token.signature.clone(),
        label,
    ))
}

pub fn build_ballot_for<R: RngCore + CryptoRng + ?Sized>(
    config: &ElectionConfig,
    token: &Token,
    candidate: &str,
    rng: &mut R,
) -> Result<BallotTx, ClientError> {
    let index = config
        .candidate_index(candidate)
        .ok_or_else(|| ClientError::UnknownCandidate(candidate.to_owned()))?;
    build_ballot(config, token, index, rng)
}
