//! Exponential ElGamal with threshold decryption.
//!
//! Candidate `i` is encoded as `g^(i+1)` so the identity element never
//! encodes a choice. Decryption recovers the group element and then searches
//! the (small) candidate range for the matching power of `g`.

use std::collections::BTreeSet;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::arith::{mod_inverse, random_range};
use super::shamir::{lagrange_at_zero, KeyShare};
use super::{CryptoError, GroupParams};
use crate::canonical::decimal;

/// Upper bound on configured candidates; bounds the decryption search.
pub const MAX_CANDIDATES: usize = 1 << 16;

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElgKeyPair {
    #[serde(with = "decimal")]
    pub secret: BigUint,
    #[serde(with = "decimal")]
    pub public: BigUint,
}

impl std::fmt::Debug for ElgKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ElgKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElgCiphertext {
    #[serde(with = "decimal")]
    pub c1: BigUint,
    #[serde(with = "decimal")]
    pub c2: BigUint,
}

impl ElgCiphertext {
    pub fn is_well_formed(&self, params: &GroupParams) -> bool {
        params.is_member(&self.c1) && params.is_member(&self.c2)
    }
}

/// One trustee's contribution `c1^share` towards decrypting a ciphertext.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialDecryption {
    pub index: u32,
    #[serde(with = "decimal")]
    pub value: BigUint,
}

pub fn keygen<R: RngCore + CryptoRng + ?Sized>(params: &GroupParams, rng: &mut R) -> ElgKeyPair {
    let secret = random_range(rng, &BigUint::one(), &params.q);
    keypair_from_secret(params, secret)
}

pub fn keypair_from_secret(params: &GroupParams, secret: BigUint) -> ElgKeyPair {
    let public = params.g_pow(&secret);
    ElgKeyPair { secret, public }
}

pub fn encode_candidate(
    params: &GroupParams,
    candidate: usize,
    candidate_count: usize,
) -> Result<BigUint, CryptoError> {
    if candidate >= candidate_count {
        return Err(CryptoError::CandidateOutOfRange {
            candidate,
            candidate_count,
        });
    }
    Ok(params.g_pow(&BigUint::from(candidate + 1)))
}

/// `(g^k, g^(candidate+1) * h^k)`.
pub fn encrypt(
    params: &GroupParams,
    public: &BigUint,
    candidate: usize,
    candidate_count: usize,
    nonce: &BigUint,
) -> Result<ElgCiphertext, CryptoError> {
    let m = encode_candidate(params, candidate, candidate_count)?;
    if nonce.is_zero() || nonce >= &params.q {
        return Err(CryptoError::OutOfRange);
    }
    let c1 = params.g_pow(nonce);
    let c2 = params.mul(&m, &params.exp(public, nonce));
    Ok(ElgCiphertext { c1, c2 })
}

/// Encrypts with a fresh nonce from `rng`.
pub fn encrypt_random<R: RngCore + CryptoRng + ?Sized>(
    params: &GroupParams,
    public: &BigUint,
    candidate: usize,
    candidate_count: usize,
    rng: &mut R,
) -> Result<ElgCiphertext, CryptoError> {
    let nonce = random_range(rng, &BigUint::one(), &params.q);
    encrypt(params, public, candidate, candidate_count, &nonce)
}

/// Finds `i` in `0..candidate_count` with `g^(i+1) == m`.
pub fn decode_candidate(
    params: &GroupParams,
    m: &BigUint,
    candidate_count: usize,
) -> Result<usize, CryptoError> {
    let mut acc = params.g.clone();
    for i in 0..candidate_count.min(MAX_CANDIDATES) {
        if &acc == m {
            return Ok(i);
        }
        acc = params.mul(&acc, &params.g);
    }
    Err(CryptoError::NotACandidate)
}

/// Strips `shared = c1^x` from `c2` and decodes.
fn unmask(
    params: &GroupParams,
    ct: &ElgCiphertext,
    shared: &BigUint,
    candidate_count: usize,
) -> Result<usize, CryptoError> {
    let inv = mod_inverse(shared, &params.p).ok_or(CryptoError::NotACandidate)?;
    decode_candidate(params, &params.mul(&ct.c2, &inv), candidate_count)
}

pub fn decrypt(
    params: &GroupParams,
    secret: &BigUint,
    ct: &ElgCiphertext,
    candidate_count: usize,
) -> Result<usize, CryptoError> {
    let shared = params.exp(&ct.c1, secret);
    unmask(params, ct, &shared, candidate_count)
}

pub fn partial_decrypt(
    params: &GroupParams,
    share: &KeyShare,
    ct: &ElgCiphertext,
) -> PartialDecryption {
    PartialDecryption {
        index: share.index,
        value: params.exp(&ct.c1, &share.value),
    }
}

/// Reconstructs `c1^x` as `prod d_j^lambda_j` and decodes the candidate.
pub fn combine(
    params: &GroupParams,
    partials: &[PartialDecryption],
    threshold: usize,
    ct: &ElgCiphertext,
    candidate_count: usize,
) -> Result<usize, CryptoError> {
    let shared = combine_shared(params, partials, threshold)?;
    unmask(params, ct, &shared, candidate_count)
}

/// The reconstructed `c1^x` for the given partials.
pub fn combine_shared(
    params: &GroupParams,
    partials: &[PartialDecryption],
    threshold: usize,
) -> Result<BigUint, CryptoError> {
    let mut seen = BTreeSet::new();
    for partial in partials {
        if !seen.insert(partial.index) {
            return Err(CryptoError::DuplicateShareIndex(partial.index));
        }
    }
    if partials.len() < threshold.max(1) {
        return Err(CryptoError::InsufficientShares {
            needed: threshold,
            got: partials.len(),
        });
    }
    let indices: Vec<u32> = partials.iter().map(|p| p.index).collect();
    let lambdas = lagrange_at_zero(&indices, &params.q)?;
    Ok(partials
        .iter()
        .zip(lambdas.iter())
        .fold(BigUint::one(), |acc, (partial, lambda)| {
            params.mul(&acc, &params.exp(&partial.value, lambda))
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::shamir::{shares_from_coefficients, split};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn n(v: u32) -> BigUint {
        BigUint::from(v)
    }

    fn toy_ct() -> ElgCiphertext {
        ElgCiphertext { c1: n(9), c2: n(9) }
    }

    #[test]
    fn toy_keypair() {
        let kp = keypair_from_secret(&GroupParams::toy(), n(3));
        assert_eq!(kp.public, n(8));
    }

    #[test]
    fn toy_encrypt() {
        let ct = encrypt(&GroupParams::toy(), &n(8), 0, 3, &n(5)).unwrap();
        assert_eq!(ct, toy_ct());
    }

    #[test]
    fn toy_decrypt() {
        let params = GroupParams::toy();
        assert_eq!(decrypt(&params, &n(3), &toy_ct(), 3), Ok(0));
        // c1 = 1 makes the key irrelevant
        let ct = ElgCiphertext { c1: n(1), c2: n(4) };
        assert_eq!(decrypt(&params, &n(3), &ct, 3), Ok(1));
        assert_eq!(decrypt(&params, &n(7), &ct, 3), Ok(1));
    }

    #[test]
    fn candidate_range_enforced() {
        let params = GroupParams::toy();
        assert_eq!(
            encrypt(&params, &n(8), 3, 3, &n(5)),
            Err(CryptoError::CandidateOutOfRange {
                candidate: 3,
                candidate_count: 3
            })
        );
        assert_eq!(
            encrypt(&params, &n(8), 0, 3, &n(0)),
            Err(CryptoError::OutOfRange)
        );
        assert_eq!(
            encrypt(&params, &n(8), 0, 3, &n(11)),
            Err(CryptoError::OutOfRange)
        );
    }

    #[test]
    fn toy_partials_and_combine() {
        let params = GroupParams::toy();
        let shares = shares_from_coefficients(&[n(3), n(2)], 3, &params.q);
        let ct = toy_ct();
        let d1 = partial_decrypt(&params, &shares[0], &ct);
        let d2 = partial_decrypt(&params, &shares[1], &ct);
        assert_eq!(
            d1,
            PartialDecryption {
                index: 1,
                value: n(8)
            }
        );
        assert_eq!(
            d2,
            PartialDecryption {
                index: 2,
                value: n(4)
            }
        );
        let shared = combine_shared(&params, &[d1.clone(), d2.clone()], 2).unwrap();
        assert_eq!(shared, n(16));
        assert_eq!(combine(&params, &[d1.clone(), d2], 2, &ct, 3), Ok(0));
        assert_eq!(
            combine(&params, std::slice::from_ref(&d1), 2, &ct, 3),
            Err(CryptoError::InsufficientShares { needed: 2, got: 1 })
        );
        assert_eq!(
            combine(&params, &[d1.clone(), d1], 2, &ct, 3),
            Err(CryptoError::DuplicateShareIndex(1))
        );
        let unit = ElgCiphertext { c1: n(1), c2: n(2) };
        for share in &shares {
            assert_eq!(partial_decrypt(&params, share, &unit).value, n(1));
        }
    }

    #[test]
    fn every_subset_matches_single_key_decryption_on_toy_group() {
        let params = GroupParams::toy();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for share_count in 1..=5usize {
            for threshold in 1..=share_count {
                let kp = keygen(&params, &mut rng);
                let shares =
                    split(&kp.secret, threshold, share_count, &params.q, &mut rng).unwrap();
                for candidate in 0..4 {
                    let ct = encrypt_random(&params, &kp.public, candidate, 4, &mut rng).unwrap();
                    let expected = decrypt(&params, &kp.secret, &ct, 4).unwrap();
                    assert_eq!(expected, candidate);
                    for mask in 1u32..(1 << share_count) {
                        let subset: Vec<PartialDecryption> = shares
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| mask & (1 << i) != 0)
                            .map(|(_, s)| partial_decrypt(&params, s, &ct))
                            .collect();
                        let result = combine(&params, &subset, threshold, &ct, 4);
                        if subset.len() >= threshold {
                            assert_eq!(result, Ok(expected));
                        } else {
                            assert!(matches!(
                                result,
                                Err(CryptoError::InsufficientShares { .. })
                            ));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn roundtrip_all_candidates_large_group() {
        let params = GroupParams::modp_2048();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let kp = keygen(&params, &mut rng);
        for candidate in 0..3 {
            let ct = encrypt_random(&params, &kp.public, candidate, 3, &mut rng).unwrap();
            assert!(ct.is_well_formed(&params));
            assert_eq!(decrypt(&params, &kp.secret, &ct, 3), Ok(candidate));
        }
    }

    #[test]
    fn mutated_ciphertext_is_not_a_candidate() {
        let params = GroupParams::modp_2048();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let kp = keygen(&params, &mut rng);
        let ct = encrypt_random(&params, &kp.public, 1, 3, &mut rng).unwrap();
        let mutated = ElgCiphertext {
            c1: ct.c1.clone(),
            c2: params.mul(&ct.c2, &params.g.pow(5)),
        };
        assert_eq!(
            decrypt(&params, &kp.secret, &mutated, 3),
            Err(CryptoError::NotACandidate)
        );
    }

    #[test]
    fn same_plaintext_distinct_nonces_differ() {
        let params = GroupParams::toy();
        let a = encrypt(&params, &n(8), 1, 3, &n(2)).unwrap();
        let b = encrypt(&params, &n(8), 1, 3, &n(3)).unwrap();
        assert_ne!(a, b);
    }
}
