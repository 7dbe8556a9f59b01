use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::arith::is_prime_deterministic_seed;
use super::CryptoError;
use crate::canonical::decimal;

const MODP_2048_HEX: &str = concat!(
    "ffffffffffffffffc90fdaa22168c234c4c6628b80dc1cd129024e088a67cc74",
    "020bbea63b139b22514a08798e3404ddef9519b3cd3a431b302b0a6df25f1437",
    "4fe1356d6d51c245e485b576625e7ec6f44c42e9a637ed6b0bff5cb6f406b7ed",
    "ee386bfb5a899fa5ae9f24117c4b1fe649286651ece45b3dc2007cb8a163bf05",
    "98da48361c55d39a69163fa8fd24cf5f83655d23dca3ad961c62f356208552bb",
    "9ed529077096966d670c354e4abc9804f1746c08ca18217c32905e462e36ce3b",
    "e39e772c180e86039b2783a2ec07a28fb5c55df06f4c52c9de2bcbf695581718",
    "3995497cea956ae515d2261898fa051015728e5a8aacaa68ffffffffffffffff",
);

/// A prime-order subgroup of `Z_p^*`: `q | p - 1` and `g` has order `q`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupParams {
    #[serde(with = "decimal")]
    pub p: BigUint,
    #[serde(with = "decimal")]
    pub q: BigUint,
    #[serde(with = "decimal")]
    pub g: BigUint,
}

impl GroupParams {
    pub fn new(p: BigUint, q: BigUint, g: BigUint) -> Result<Self, CryptoError> {
        let params = GroupParams { p, q, g };
        params.validate()?;
        Ok(params)
    }

    /// `(p, q, g) = (23, 11, 2)`. Only for tests and worked examples.
    pub fn toy() -> Self {
        GroupParams {
            p: 23u32.into(),
            q: 11u32.into(),
            g: 2u32.into(),
        }
    }

    /// The 2048-bit MODP safe prime with `q = (p - 1) / 2` and `g = 2`.
    pub fn modp_2048() -> Self {
        let p = BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("constant is valid hex");
        let q = (&p - 1u8) >> 1;
        GroupParams {
            p,
            q,
            g: 2u32.into(),
        }
    }

    pub fn validate(&self) -> Result<(), CryptoError> {
        let fail = |why: &str| Err(CryptoError::InvalidGroup(why.to_owned()));
        if self.p < BigUint::from(5u8) || self.q < BigUint::from(2u8) {
            return fail("parameters too small");
        }
        if !((&self.p - 1u8) % &self.q).is_zero() {
            return fail("q does not divide p - 1");
        }
        if self.g.is_zero() || self.g.is_one() || self.g >= self.p {
            return fail("generator out of range");
        }
        if !self.g.modpow(&self.q, &self.p).is_one() {
            return fail("generator order is not q");
        }
        if !is_prime_deterministic_seed(&self.q) {
            return fail("q is not prime");
        }
        if !is_prime_deterministic_seed(&self.p) {
            return fail("p is not prime");
        }
        Ok(())
    }

    /// Membership in the order-`q` subgroup.
    pub fn is_member(&self, x: &BigUint) -> bool {
        !x.is_zero() && x < &self.p && x.modpow(&self.q, &self.p).is_one()
    }

    pub fn exp(&self, base: &BigUint, exponent: &BigUint) -> BigUint {
        base.modpow(exponent, &self.p)
    }

    pub fn g_pow(&self, exponent: &BigUint) -> BigUint {
        self.g.modpow(exponent, &self.p)
    }

    pub fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        a * b % &self.p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_group_is_valid() {
        GroupParams::toy().validate().unwrap();
    }

    #[test]
    fn modp_group_is_valid() {
        let params = GroupParams::modp_2048();
        assert_eq!(params.p.bits(), 2048);
        params.validate().unwrap();
    }

    #[test]
    fn invalid_groups_are_rejected() {
        // 5 has order 22 mod 23
        assert!(GroupParams::new(23u32.into(), 11u32.into(), 5u32.into()).is_err());
        assert!(GroupParams::new(23u32.into(), 7u32.into(), 2u32.into()).is_err());
        assert!(GroupParams::new(23u32.into(), 11u32.into(), 1u32.into()).is_err());
        // composite modulus
        assert!(GroupParams::new(25u32.into(), 3u32.into(), 2u32.into()).is_err());
    }

    #[test]
    fn membership() {
        let g = GroupParams::toy();
        let members: Vec<u32> = (1..23u32)
            .filter(|x| g.is_member(&BigUint::from(*x)))
            .collect();
        assert_eq!(members, vec![1, 2, 3, 4, 6, 8, 9, 12, 13, 16, 18]);
        assert!(!g.is_member(&BigUint::zero()));
        assert!(!g.is_member(&BigUint::from(23u32)));
    }
}
