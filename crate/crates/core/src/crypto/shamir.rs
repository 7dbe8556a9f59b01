//! Shamir t-of-n secret sharing over the scalar field of order `q`.

use std::collections::BTreeSet;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::arith::{mod_inverse, mod_sub, random_range};
use super::CryptoError;
use crate::canonical::decimal;

/// The evaluation `(index, f(index))` of the sharing polynomial.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyShare {
    pub index: u32,
    #[serde(with = "decimal")]
    pub value: BigUint,
}

impl std::fmt::Debug for KeyShare {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyShare")
            .field("index", &self.index)
            .finish_non_exhaustive()
    }
}

/// Splits `secret` into `share_count` shares, any `threshold` of which recombine.
pub fn split<R: RngCore + CryptoRng + ?Sized>(
    secret: &BigUint,
    threshold: usize,
    share_count: usize,
    q: &BigUint,
    rng: &mut R,
) -> Result<Vec<KeyShare>, CryptoError> {
    check_threshold(threshold, share_count, q)?;
    if secret >= q {
        return Err(CryptoError::OutOfRange);
    }
    let mut coefficients = Vec::with_capacity(threshold);
    coefficients.push(secret.clone());
    for _ in 1..threshold {
        coefficients.push(random_range(rng, &BigUint::zero(), q));
    }
    let shares = shares_from_coefficients(&coefficients, share_count, q);
    // Coefficients hold the secret; overwrite before dropping.
    for c in coefficients.iter_mut() {
        *c = BigUint::zero();
    }
    Ok(shares)
}

pub fn check_threshold(
    threshold: usize,
    share_count: usize,
    q: &BigUint,
) -> Result<(), CryptoError> {
    if threshold == 0 || threshold > share_count || BigUint::from(share_count) >= *q {
        return Err(CryptoError::BadThreshold {
            threshold,
            share_count,
        });
    }
    Ok(())
}

/// Evaluates the polynomial with the given coefficients (constant term
/// first) at `1..=share_count`.
pub fn shares_from_coefficients(
    coefficients: &[BigUint],
    share_count: usize,
    q: &BigUint,
) -> Vec<KeyShare> {
    (1..=share_count as u32)
        .map(|index| {
            let x = BigUint::from(index);
            // Horner
            let value = coefficients
                .iter()
                .rev()
                .fold(BigUint::zero(), |acc, c| (acc * &x + c) % q);
            KeyShare { index, value }
        })
        .collect()
}

/// Lagrange basis coefficients at zero for the given evaluation points.
pub fn lagrange_at_zero(indices: &[u32], q: &BigUint) -> Result<Vec<BigUint>, CryptoError> {
    let mut seen = BTreeSet::new();
    for &i in indices {
        if i == 0 || !seen.insert(i) {
            return Err(CryptoError::DuplicateShareIndex(i));
        }
    }
    indices
        .iter()
        .map(|&j| {
            let xj = BigUint::from(j);
            let mut num = BigUint::one();
            let mut den = BigUint::one();
            for &m in indices.iter().filter(|&&m| m != j) {
                let xm = BigUint::from(m);
                num = num * &xm % q;
                den = den * mod_sub(&xm, &xj, q) % q;
            }
            let inv = mod_inverse(&den, q).ok_or(CryptoError::BadThreshold {
                threshold: indices.len(),
                share_count: indices.len(),
            })?;
            Ok(num * inv % q)
        })
        .collect()
}

/// Interpolates `f(0)` from `shares`.
pub fn recombine(shares: &[KeyShare], q: &BigUint) -> Result<BigUint, CryptoError> {
    let indices: Vec<u32> = shares.iter().map(|s| s.index).collect();
    let lambdas = lagrange_at_zero(&indices, q)?;
    Ok(shares
        .iter()
        .zip(lambdas)
        .fold(BigUint::zero(), |acc, (s, l)| (acc + &s.value * l) % q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn n(v: u32) -> BigUint {
        BigUint::from(v)
    }

    #[test]
    fn hand_polynomial_shares() {
        let shares = shares_from_coefficients(&[n(3), n(2)], 3, &n(11));
        let pairs: Vec<(u32, BigUint)> =
            shares.iter().map(|s| (s.index, s.value.clone())).collect();
        assert_eq!(pairs, vec![(1, n(5)), (2, n(7)), (3, n(9))]);
    }

    #[test]
    fn hand_lagrange() {
        assert_eq!(
            lagrange_at_zero(&[1, 2], &n(11)).unwrap(),
            vec![n(2), n(10)]
        );
        let shares = shares_from_coefficients(&[n(3), n(2)], 3, &n(11));
        assert_eq!(recombine(&shares[..2], &n(11)).unwrap(), n(3));
        assert_eq!(recombine(&shares[1..], &n(11)).unwrap(), n(3));
    }

    #[test]
    fn threshold_one_is_constant() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let shares = split(&n(7), 1, 4, &n(11), &mut rng).unwrap();
        assert!(shares.iter().all(|s| s.value == n(7)));
    }

    #[test]
    fn bad_thresholds() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(matches!(
            split(&n(1), 0, 3, &n(11), &mut rng),
            Err(CryptoError::BadThreshold { .. })
        ));
        assert!(matches!(
            split(&n(1), 4, 3, &n(11), &mut rng),
            Err(CryptoError::BadThreshold { .. })
        ));
        assert!(matches!(
            split(&n(1), 2, 11, &n(11), &mut rng),
            Err(CryptoError::BadThreshold { .. })
        ));
        assert_eq!(
            split(&n(11), 2, 3, &n(11), &mut rng),
            Err(CryptoError::OutOfRange)
        );
    }

    proptest! {
        #[test]
        fn any_threshold_subset_recombines(
            secret in 0u32..1_000_003,
            share_count in 1usize..7,
            threshold_seed in 0usize..7,
            mask in 1u32..128,
            seed in any::<u64>(),
        ) {
            let q = n(1_000_003);
            let threshold = threshold_seed % share_count + 1;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let shares = split(&n(secret), threshold, share_count, &q, &mut rng).unwrap();
            let subset: Vec<KeyShare> = shares
                .into_iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, s)| s)
                .collect();
            prop_assume!(subset.len() >= threshold);
            prop_assert_eq!(recombine(&subset, &q).unwrap(), n(secret));
        }
    }
}
