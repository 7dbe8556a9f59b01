//! Modular arithmetic helpers over `BigUint`.

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const SMALL_PRIMES: [u32; 54] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

/// Inverse of `a` modulo `m`, or `None` when `gcd(a, m) != 1`.
pub fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    if m.is_zero() {
        return None;
    }
    let m_signed = BigInt::from_biguint(Sign::Plus, m.clone());
    let a_signed = BigInt::from_biguint(Sign::Plus, a % m);
    let ext = a_signed.extended_gcd(&m_signed);
    if !ext.gcd.is_one() {
        return None;
    }
    let x = ext.x.mod_floor(&m_signed);
    x.to_biguint()
}

pub fn mod_sub(a: &BigUint, b: &BigUint, m: &BigUint) -> BigUint {
    let a = a % m;
    let b = b % m;
    if a >= b {
        a - b
    } else {
        m - (b - a)
    }
}

/// Uniform sample from `[low, high)`.
pub fn random_range<R: RngCore + CryptoRng + ?Sized>(
    rng: &mut R,
    low: &BigUint,
    high: &BigUint,
) -> BigUint {
    let mut adapter = RngAdapter(rng);
    adapter.gen_biguint_range(low, high)
}

// `RandBigInt` is implemented for sized `Rng`s; this lets callers pass `&mut dyn`.
struct RngAdapter<'a, R: ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// Miller-Rabin with `rounds` random bases after trial division.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u8);
    if n < &two {
        return false;
    }
    for &p in SMALL_PRIMES.iter() {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let n_minus_one = n - 1u8;
    let mut d = n_minus_one.clone();
    let mut s = 0u32;
    while d.is_even() {
        d >>= 1;
        s += 1;
    }
    let mut adapter = RngAdapter(rng);
    'witness: for _ in 0..rounds {
        let a = adapter.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Primality check with a fixed internal seed, for validating published
/// parameters where no caller RNG is at hand.
pub fn is_prime_deterministic_seed(n: &BigUint) -> bool {
    let mut rng = ChaCha20Rng::seed_from_u64(PARAMETER_CHECK_SEED);
    is_probable_prime(n, 32, &mut rng)
}

const PARAMETER_CHECK_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Random prime with exactly `bits` bits (top two bits set).
pub fn gen_prime<R: RngCore + CryptoRng + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    assert!(bits >= 8, "prime size too small");
    let mut adapter = RngAdapter(rng);
    loop {
        let mut candidate = adapter.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, 40, adapter.0) {
            return candidate;
        }
    }
}

pub fn is_zero_or_one(x: &BigUint) -> bool {
    x.is_zero() || x.is_one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_small() {
        let inv = mod_inverse(&BigUint::from(2u8), &BigUint::from(11u8)).unwrap();
        assert_eq!(inv, BigUint::from(6u8));
        assert!(mod_inverse(&BigUint::from(6u8), &BigUint::from(9u8)).is_none());
        assert_eq!(
            mod_inverse(&BigUint::from(16u8), &BigUint::from(23u8)).unwrap(),
            BigUint::from(13u8)
        );
    }

    #[test]
    fn primality_against_sieve() {
        let limit = 2000usize;
        let mut sieve = vec![true; limit];
        sieve[0] = false;
        sieve[1] = false;
        for i in 2..limit {
            if sieve[i] {
                let mut j = i * i;
                while j < limit {
                    sieve[j] = false;
                    j += i;
                }
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for (n, &prime) in sieve.iter().enumerate() {
            assert_eq!(
                is_probable_prime(&BigUint::from(n), 16, &mut rng),
                prime,
                "n = {n}"
            );
        }
    }

    #[test]
    fn carmichael_numbers_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for n in [561u32, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 62745] {
            assert!(!is_probable_prime(&BigUint::from(n), 16, &mut rng));
        }
    }

    #[test]
    fn generated_prime_has_requested_size() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let p = gen_prime(128, &mut rng);
        assert_eq!(p.bits(), 128);
        assert!(is_prime_deterministic_seed(&p));
    }

    #[test]
    fn mod_sub_wraps() {
        let m = BigUint::from(11u8);
        assert_eq!(
            mod_sub(&BigUint::from(3u8), &BigUint::from(5u8), &m),
            BigUint::from(9u8)
        );
    }
}
