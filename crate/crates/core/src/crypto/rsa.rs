//! Chaum-style RSA blind signatures.
//!
//! A message is a 32-byte digest interpreted as a big-endian integer reduced
//! modulo `n`. The holder blinds it with `r^e`, the signer raises the blinded
//! value to `d`, and the holder strips `r` to obtain an ordinary RSA signature
//! on the message that the signer has never seen.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::arith::{gen_prime, mod_inverse, random_range};
use super::{CryptoError, Digest};
use crate::canonical::decimal;

pub const DEFAULT_PUBLIC_EXPONENT: u32 = 65_537;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsaPublicKey {
    #[serde(with = "decimal")]
    pub n: BigUint,
    #[serde(with = "decimal")]
    pub e: BigUint,
}

/// Full key pair. `d` never leaves the signer.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsaKey {
    #[serde(with = "decimal")]
    pub n: BigUint,
    #[serde(with = "decimal")]
    pub e: BigUint,
    #[serde(with = "decimal")]
    pub d: BigUint,
}

impl std::fmt::Debug for RsaKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RsaKey")
            .field("n_bits", &self.n.bits())
            .field("e", &self.e)
            .finish_non_exhaustive()
    }
}

impl RsaKey {
    /// Generates a key with a `bits`-bit modulus and `e = 65537`.
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(bits: u64, rng: &mut R) -> Self {
        assert!(bits >= 32, "RSA modulus too small");
        let e = BigUint::from(DEFAULT_PUBLIC_EXPONENT);
        loop {
            let p = gen_prime(bits / 2, rng);
            let q = gen_prime(bits - bits / 2, rng);
            if p == q {
                continue;
            }
            let n = &p * &q;
            if n.bits() != bits {
                continue;
            }
            let lambda = (&p - 1u8).lcm(&(&q - 1u8));
            if let Some(d) = mod_inverse(&e, &lambda) {
                return RsaKey { n, e, d };
            }
        }
    }

    pub fn from_parts(n: BigUint, e: BigUint, d: BigUint) -> Self {
        RsaKey { n, e, d }
    }

    pub fn public(&self) -> RsaPublicKey {
        RsaPublicKey {
            n: self.n.clone(),
            e: self.e.clone(),
        }
    }
}

impl RsaPublicKey {
    pub fn new(n: BigUint, e: BigUint) -> Self {
        RsaPublicKey { n, e }
    }

    pub fn modulus_bits(&self) -> u64 {
        self.n.bits()
    }
}

/// Big-endian digest reduced modulo `n`.
pub fn encode_digest(msg: &Digest, n: &BigUint) -> BigUint {
    BigUint::from_bytes_be(msg.as_bytes()) % n
}

fn check_blinding(r: &BigUint, n: &BigUint) -> Result<BigUint, CryptoError> {
    if r <= &BigUint::one() || r >= n {
        return Err(CryptoError::BlindingNotInvertible);
    }
    mod_inverse(r, n).ok_or(CryptoError::BlindingNotInvertible)
}

/// `encode(msg) * r^e mod n`.
pub fn blind(msg: &Digest, key: &RsaPublicKey, r: &BigUint) -> Result<BigUint, CryptoError> {
    blind_integer(&encode_digest(msg, &key.n), key, r)
}

/// Blinds an already-encoded message integer.
pub fn blind_integer(m: &BigUint, key: &RsaPublicKey, r: &BigUint) -> Result<BigUint, CryptoError> {
    if !r.is_one() {
        check_blinding(r, &key.n)?;
    }
    Ok((m % &key.n) * r.modpow(&key.e, &key.n) % &key.n)
}

/// `blinded^d mod n`. The signer learns nothing about the underlying message.
pub fn sign_blinded(blinded: &BigUint, key: &RsaKey) -> Result<BigUint, CryptoError> {
    if blinded >= &key.n {
        return Err(CryptoError::OutOfRange);
    }
    Ok(blinded.modpow(&key.d, &key.n))
}

/// `blind_sig * r^-1 mod n`.
pub fn unblind(
    blind_sig: &BigUint,
    r: &BigUint,
    key: &RsaPublicKey,
) -> Result<BigUint, CryptoError> {
    if r.is_one() {
        return Ok(blind_sig % &key.n);
    }
    let r_inv = check_blinding(r, &key.n)?;
    Ok(blind_sig * r_inv % &key.n)
}

/// True iff `sig^e mod n == encode(msg)`. Malformed input yields false.
pub fn verify(msg: &Digest, sig: &BigUint, key: &RsaPublicKey) -> bool {
    if key.n.is_zero() || sig >= &key.n {
        return false;
    }
    sig.modpow(&key.e, &key.n) == encode_digest(msg, &key.n)
}

/// Plain (unblinded) signature, used for validator signatures.
pub fn sign(msg: &Digest, key: &RsaKey) -> BigUint {
    encode_digest(msg, &key.n).modpow(&key.d, &key.n)
}

/// Uniform blinding factor in `(1, n)` coprime to `n`.
pub fn random_blinding_factor<R: RngCore + CryptoRng + ?Sized>(
    key: &RsaPublicKey,
    rng: &mut R,
) -> BigUint {
    let two = BigUint::from(2u8);
    loop {
        let r = random_range(rng, &two, &key.n);
        if r.gcd(&key.n).is_one() {
            return r;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::sha256;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn textbook() -> RsaKey {
        RsaKey::from_parts(3233u32.into(), 17u32.into(), 2753u32.into())
    }

    // Square-and-multiply over u128, independent of BigUint::modpow.
    fn pow_mod(mut base: u128, mut exp: u128, m: u128) -> u128 {
        let mut acc = 1u128;
        base %= m;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base % m;
            }
            base = base * base % m;
            exp >>= 1;
        }
        acc
    }

    #[test]
    fn textbook_blind_value() {
        let key = textbook();
        let blinded = blind_integer(&65u32.into(), &key.public(), &2u32.into()).unwrap();
        let expected = 65 * pow_mod(2, 17, 3233) % 3233;
        assert_eq!(expected, 725);
        assert_eq!(blinded, BigUint::from(expected));
    }

    #[test]
    fn textbook_sign_value() {
        let key = textbook();
        let expected = pow_mod(123, 2753, 3233);
        assert_eq!(expected, 2746);
        assert_eq!(
            sign_blinded(&123u32.into(), &key).unwrap(),
            BigUint::from(expected)
        );
        assert_eq!(sign_blinded(&1u32.into(), &key).unwrap(), BigUint::one());
        assert_eq!(sign_blinded(&0u32.into(), &key).unwrap(), BigUint::zero());
        assert_eq!(
            sign_blinded(&3233u32.into(), &key),
            Err(CryptoError::OutOfRange)
        );
    }

    #[test]
    fn textbook_roundtrip_equals_direct_signature() {
        let key = textbook();
        let public = key.public();
        let blinded = blind_integer(&65u32.into(), &public, &2u32.into()).unwrap();
        let sig = unblind(
            &sign_blinded(&blinded, &key).unwrap(),
            &2u32.into(),
            &public,
        )
        .unwrap();
        let direct = pow_mod(65, 2753, 3233);
        assert_eq!(direct, 588);
        assert_eq!(sig, BigUint::from(direct));
        assert_eq!(pow_mod(direct, 17, 3233), 65);
    }

    #[test]
    fn identity_blinding() {
        let key = textbook();
        let msg = sha256(b"ticket");
        let public = key.public();
        assert_eq!(
            blind(&msg, &public, &BigUint::one()).unwrap(),
            encode_digest(&msg, &key.n)
        );
        assert_eq!(
            unblind(&77u32.into(), &BigUint::one(), &public).unwrap(),
            BigUint::from(77u32)
        );
    }

    #[test]
    fn non_invertible_blinding_rejected() {
        let public = textbook().public();
        let msg = sha256(b"x");
        // 3233 = 53 * 61
        assert_eq!(
            blind(&msg, &public, &53u32.into()),
            Err(CryptoError::BlindingNotInvertible)
        );
        assert_eq!(
            unblind(&5u32.into(), &61u32.into(), &public),
            Err(CryptoError::BlindingNotInvertible)
        );
        assert_eq!(
            blind(&msg, &public, &0u32.into()),
            Err(CryptoError::BlindingNotInvertible)
        );
        assert_eq!(
            blind(&msg, &public, &3233u32.into()),
            Err(CryptoError::BlindingNotInvertible)
        );
    }

    #[test]
    fn generated_key_roundtrip_and_mutation() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let key = RsaKey::generate(512, &mut rng);
        assert_eq!(key.n.bits(), 512);
        let public = key.public();
        for i in 0..20u32 {
            let msg = sha256(&i.to_be_bytes());
            let r = random_blinding_factor(&public, &mut rng);
            let blinded = blind(&msg, &public, &r).unwrap();
            assert_ne!(blinded, encode_digest(&msg, &key.n));
            let sig = unblind(&sign_blinded(&blinded, &key).unwrap(), &r, &public).unwrap();
            assert!(verify(&msg, &sig, &public));
            assert_eq!(sig, sign(&msg, &key));
            assert!(!verify(&msg, &((&sig + 1u8) % &key.n), &public));
            assert!(!verify(&sha256(b"other"), &sig, &public));
        }
    }

    #[test]
    fn verify_rejects_oversized_signature() {
        let key = textbook();
        let msg = sha256(b"x");
        let sig = sign(&msg, &key);
        assert!(verify(&msg, &sig, &key.public()));
        assert!(!verify(&msg, &(sig + 3233u32), &key.public()));
    }
}
