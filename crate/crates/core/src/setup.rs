//! Election initialisation: key generation for every role and the shared
//! config. The trustee key ceremony uses a trusted dealer that forgets the
//! secret once shares are handed out.

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::config::{
    AnchorPolicy, ConfigError, ConsensusParams, ElectionConfig, Mode, TrusteeInfo, ValidatorId,
    ValidatorInfo,
};
use crate::crypto::{sha256, shamir, CryptoError, Digest, GroupParams, KeyShare, RsaKey};
use crate::ledger::{genesis, Block};
use crate::tally::ceremony_keygen;

/// A random bearer secret, stored by its holder as hex and by the config as
/// a hash.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Credential(String);

impl Credential {
    pub fn random<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        Credential(hex::encode(bytes))
    }

    pub fn from_secret(secret: impl Into<String>) -> Self {
        Credential(secret.into())
    }

    pub fn secret(&self) -> &str {
        &self.0
    }

    pub fn hash(&self) -> Digest {
        credential_hash(&self.0)
    }
}

impl std::fmt::Debug for Credential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Credential(..)")
    }
}

pub fn credential_hash(secret: &str) -> Digest {
    sha256(secret.as_bytes())
}

/// What one trustee receives from the ceremony.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrusteeShareFile {
    pub election_id: String,
    pub trustee_id: String,
    pub credential: Credential,
    pub share: KeyShare,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorKeyFile {
    pub id: ValidatorId,
    pub key: RsaKey,
}

#[derive(Clone, Debug)]
pub struct SetupParams {
    pub election_id: String,
    pub candidates: Vec<String>,
    pub mode: Mode,
    pub group: GroupParams,
    pub registrar_bits: u64,
    pub validator_bits: u64,
    pub validator_addresses: Vec<String>,
    pub trustee_ids: Vec<String>,
    pub threshold: usize,
    pub anchor_policy: AnchorPolicy,
    pub consensus: ConsensusParams,
    pub open_time: u64,
    pub close_time: Option<u64>,
}

impl SetupParams {
    /// Small keys and the toy group; for tests and simulations only.
    pub fn toy(election_id: &str, candidates: &[&str], validators: usize) -> Self {
        SetupParams {
            election_id: election_id.to_owned(),
            candidates: candidates.iter().map(|c| c.to_string()).collect(),
            mode: Mode::Sealed,
            group: GroupParams::toy(),
            registrar_bits: 512,
            validator_bits: 512,
            validator_addresses: (0..validators).map(|i| format!("validator-{i}")).collect(),
            trustee_ids: ["t1", "t2", "t3", "t4", "t5"].map(String::from).to_vec(),
            threshold: 3,
            anchor_policy: AnchorPolicy::default(),
            consensus: ConsensusParams::default(),
            open_time: 1_700_000_000,
            close_time: None,
        }
    }

    /// Production sizes: the 2048-bit MODP group and 2048-bit RSA keys.
    pub fn production(election_id: &str, candidates: &[&str], validators: usize) -> Self {
        SetupParams {
            group: GroupParams::modp_2048(),
            registrar_bits: 2048,
            validator_bits: 2048,
            ..SetupParams::toy(election_id, candidates, validators)
        }
    }
}

/// Everything `election init` produces. Only `config` is public.
#[derive(Clone, Debug)]
pub struct ElectionSetup {
    pub config: ElectionConfig,
    pub genesis: Block,
    pub registrar_key: RsaKey,
    pub validator_keys: Vec<RsaKey>,
    pub trustee_shares: Vec<TrusteeShareFile>,
    pub operator_credential: Credential,
}

impl ElectionSetup {
    pub fn validator_key_file(&self, id: ValidatorId) -> ValidatorKeyFile {
        ValidatorKeyFile {
            id,
            key: self.validator_keys[id as usize].clone(),
        }
    }

    pub fn trustee_share(&self, trustee_id: &str) -> Option<&TrusteeShareFile> {
        self.trustee_shares
            .iter()
            .find(|s| s.trustee_id == trustee_id)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Runs the dealer ceremony and generates all keys.
pub fn generate_election<R: RngCore + CryptoRng + ?Sized>(
    params: &SetupParams,
    rng: &mut R,
) -> Result<ElectionSetup, SetupError> {
    let group = params.group.clone();
    let trustee_count = params.trustee_ids.len();
    shamir::check_threshold(params.threshold, trustee_count, &group.q)?;

    let (election_public_key, shares) =
        ceremony_keygen(&group, params.threshold, trustee_count, rng)?;

    let registrar_key = RsaKey::generate(params.registrar_bits, rng);
    let validator_keys: Vec<RsaKey> = params
        .validator_addresses
        .iter()
        .map(|_| RsaKey::generate(params.validator_bits, rng))
        .collect();
    let validators = params
        .validator_addresses
        .iter()
        .zip(&validator_keys)
        .enumerate()
        .map(|(i, (address, key))| ValidatorInfo {
            id: i as ValidatorId,
            public_key: key.public(),
            address: address.clone(),
        })
        .collect();

    let mut trustees = Vec::with_capacity(trustee_count);
    let mut trustee_shares = Vec::with_capacity(trustee_count);
    for (id, share) in params.trustee_ids.iter().zip(shares) {
        let credential = Credential::random(rng);
        trustees.push(TrusteeInfo {
            id: id.clone(),
            index: share.index,
            credential_hash: credential.hash(),
        });
        trustee_shares.push(TrusteeShareFile {
            election_id: params.election_id.clone(),
            trustee_id: id.clone(),
            credential,
            share,
        });
    }
    let operator_credential = Credential::random(rng);

    let config = ElectionConfig {
        election_id: params.election_id.clone(),
        candidates: params.candidates.clone(),
        mode: params.mode,
        group,
        election_public_key,
        registrar_key: registrar_key.public(),
        validators,
        trustees,
        threshold: params.threshold,
        trustee_count,
        anchor_policy: params.anchor_policy,
        consensus: params.consensus,
        open_time: params.open_time,
        close_time: params.close_time,
        operator_credential_hash: Some(operator_credential.hash()),
    };
    config.validate_structure()?;
    let signers: Vec<(ValidatorId, &RsaKey)> = validator_keys
        .iter()
        .enumerate()
        .map(|(i, k)| (i as ValidatorId, k))
        .collect();
    let genesis = genesis(&config, &signers);
    Ok(ElectionSetup {
        config,
        genesis,
        registrar_key,
        validator_keys,
        trustee_shares,
        operator_credential,
    })
}
