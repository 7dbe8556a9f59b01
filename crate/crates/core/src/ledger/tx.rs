use std::fmt;

use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::canonical::{self, decimal};
use crate::crypto::{sha256, sha256_concat, Digest, ElgCiphertext};

const TOKEN_DOMAIN: &[u8] = b"VOTE-TOKEN";

/// The voter-chosen 32-byte serial inside a token. Spent serials form the
/// nullifier set.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSerial(Digest);

impl TokenSerial {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        TokenSerial(Digest::from_bytes(bytes))
    }

    pub fn random<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        TokenSerial::from_bytes(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        self.0.as_bytes()
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl fmt::Debug for TokenSerial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TokenSerial({})", self.0.to_hex())
    }
}

/// The digest the registrar's blind signature ultimately covers.
pub fn token_message(election_id: &str, serial: &TokenSerial) -> Digest {
    sha256_concat(&[TOKEN_DOMAIN, election_id.as_bytes(), serial.as_bytes()])
}

/// An encrypted ballot bound to a spent token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallotTx {
    pub election_id: String,
    pub ciphertext: ElgCiphertext,
    pub token_serial: TokenSerial,
    #[serde(with = "decimal")]
    pub token_sig: BigUint,
    /// Plaintext candidate label, present only in demo-mode elections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub ballot_hash: Digest,
}

#[derive(Serialize)]
struct BallotBody<'a> {
    election_id: &'a str,
    ciphertext: &'a ElgCiphertext,
    token_serial: &'a TokenSerial,
    #[serde(with = "decimal")]
    token_sig: &'a BigUint,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

impl BallotTx {
    /// Builds a transaction and fills in its hash.
    pub fn new(
        election_id: impl Into<String>,
        ciphertext: ElgCiphertext,
        token_serial: TokenSerial,
        token_sig: BigUint,
        label: Option<String>,
    ) -> Self {
        let mut tx = BallotTx {
            election_id: election_id.into(),
            ciphertext,
            token_serial,
            token_sig,
            label,
            ballot_hash: Digest::ZERO,
        };
        tx.ballot_hash = tx.compute_hash();
        tx
    }

    /// Canonical bytes of every field except `ballot_hash`.
    pub fn canonical_body(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(&BallotBody {
            election_id: &self.election_id,
            ciphertext: &self.ciphertext,
            token_serial: &self.token_serial,
            token_sig: &self.token_sig,
            label: self.label.as_deref(),
        })
    }

    pub fn compute_hash(&self) -> Digest {
        sha256(&self.canonical_body())
    }

    pub fn token_message(&self) -> Digest {
        token_message(&self.election_id, &self.token_serial)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(label: Option<&str>) -> BallotTx {
        BallotTx::new(
            "e1",
            ElgCiphertext {
                c1: 9u32.into(),
                c2: 9u32.into(),
            },
            TokenSerial::from_bytes([7u8; 32]),
            12345u32.into(),
            label.map(str::to_owned),
        )
    }

    #[test]
    fn body_is_canonical() {
        let tx = sample(None);
        let body = String::from_utf8(tx.canonical_body()).unwrap();
        assert_eq!(
            body,
            format!(
                r#"{{"ciphertext":{{"c1":"9","c2":"9"}},"election_id":"e1","token_serial":"{}","token_sig":"12345"}}"#,
                "07".repeat(32)
            )
        );
        assert_eq!(tx.ballot_hash, sha256(body.as_bytes()));
    }

    #[test]
    fn label_changes_hash_and_roundtrips() {
        let plain = sample(None);
        let labeled = sample(Some("Alice"));
        assert_ne!(plain.ballot_hash, labeled.ballot_hash);
        let text = canonical::to_canonical(&labeled);
        assert_eq!(
            canonical::from_canonical::<BallotTx>(&text).unwrap(),
            labeled
        );
        let null_label = canonical::to_canonical(&plain)
            .replace("\"election_id\"", "\"label\":null,\"election_id\"");
        assert!(canonical::from_canonical::<BallotTx>(&null_label).is_err());
    }

    #[test]
    fn token_message_depends_on_election() {
        let serial = TokenSerial::from_bytes([1u8; 32]);
        assert_ne!(token_message("a", &serial), token_message("b", &serial));
    }
}
