//! Word-size modular arithmetic: Barrett multiplication, exponentiation,
//! inversion, primality and NTT root discovery.
//!
//! Residues are `u64` values in `[0, q)` for a prime `q < 2^62`. The limit
//! keeps every Barrett intermediate inside `u128`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Largest supported modulus bit width.
pub const MAX_MODULUS_BITS: u32 = 62;

/// Upper bound on candidates examined by the prime search.
const MAX_PRIME_CANDIDATES: u64 = 1 << 22;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModMathError {
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("modulus {0} is outside [2, 2^62)")]
    ModulusOutOfRange(u64),
    #[error("residue {value} is not reduced modulo {modulus}")]
    ResidueOutOfRange { value: u64, modulus: u64 },
    #[error("0 has no multiplicative inverse")]
    NoInverse,
    #[error("ring dimension {0} is not a power of two")]
    InvalidDimension(usize),
    #[error("modulus {q} is not NTT-friendly for n = {n} (requires q = 1 mod {})", 2 * n)]
    NotNttFriendly { q: u64, n: usize },
    #[error("bit width {0} is outside [2, 62]")]
    InvalidBitWidth(u32),
    #[error("no {count} distinct {bits}-bit primes q = 1 mod {} found", 2 * n)]
    NoPrimeFound { bits: u32, n: usize, count: usize },
}

/// A prime modulus together with its Barrett constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Modulus {
    value: u64,
    barrett_factor: u64,
    bit_width: u32,
}

impl Modulus {
    /// Builds a modulus, rejecting composites and values outside `[2, 2^62)`.
    pub fn new(q: u64) -> Result<Self, ModMathError> {
        if !(2..(1u64 << MAX_MODULUS_BITS)).contains(&q) {
            return Err(ModMathError::ModulusOutOfRange(q));
        }
        if !is_prime(q) {
            return Err(ModMathError::NotPrime(q));
        }
        let bit_width = 64 - q.leading_zeros();
        Ok(Self {
            value: q,
            barrett_factor: barrett_factor(q, bit_width),
            bit_width,
        })
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.value
    }

    /// `floor(2^(2k) / q)` where `k` is the bit width of `q`.
    #[inline]
    pub fn barrett_factor(&self) -> u64 {
        self.barrett_factor
    }

    #[inline]
    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    /// Recomputes the Barrett constant and compares it with the stored one.
    pub fn is_consistent(&self) -> bool {
        self.bit_width == 64 - self.value.leading_zeros()
            && self.barrett_factor == barrett_factor(self.value, self.bit_width)
    }

    #[inline]
    fn debug_check(&self, a: u64) {
        debug_assert!(a < self.value, "residue {a} not reduced mod {}", self.value);
    }

    /// Modular adder: `a + b` if below `q`, otherwise `a + b - q`.
    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        self.debug_check(a);
        self.debug_check(b);
        let s = a + b;
        if s < self.value {
            s
        } else {
            s - self.value
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        self.debug_check(a);
        self.debug_check(b);
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        self.debug_check(a);
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    /// Barrett reduction of `x < q^2`.
    #[inline]
    pub fn reduce_product(&self, x: u128) -> u64 {
        let k = self.bit_width;
        let q = self.value as u128;
        debug_assert!(x < q * q);
        let estimate = ((x >> (k - 1)) * self.barrett_factor as u128) >> (k + 1);
        let mut r = x - estimate * q;
        // The quotient estimate is short by at most two.
        while r >= q {
            r -= q;
        }
        r as u64
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.debug_check(a);
        self.debug_check(b);
        self.reduce_product(a as u128 * b as u128)
    }

    /// Reduces an arbitrary `u64` into `[0, q)`.
    #[inline]
    pub fn reduce(&self, a: u64) -> u64 {
        a % self.value
    }

    /// Reduces a signed value into `[0, q)`.
    #[inline]
    pub fn reduce_i64(&self, a: i64) -> u64 {
        a.rem_euclid(self.value as i64) as u64
    }

    pub fn pow(&self, base: u64, mut exp: u64) -> u64 {
        self.debug_check(base);
        let mut acc = 1 % self.value;
        let mut b = base;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            exp >>= 1;
        }
        acc
    }

    /// Inverse by Fermat's little theorem (`q` is prime).
    pub fn inv(&self, a: u64) -> Result<u64, ModMathError> {
        if a >= self.value {
            return Err(ModMathError::ResidueOutOfRange {
                value: a,
                modulus: self.value,
            });
        }
        if a == 0 {
            return Err(ModMathError::NoInverse);
        }
        Ok(self.pow(a, self.value - 2))
    }
}

fn barrett_factor(q: u64, bit_width: u32) -> u64 {
    ((1u128 << (2 * bit_width)) / q as u128) as u64
}

pub fn mod_add(a: u64, b: u64, m: &Modulus) -> u64 {
    m.add(a, b)
}

pub fn mod_sub(a: u64, b: u64, m: &Modulus) -> u64 {
    m.sub(a, b)
}

pub fn mod_mul_barrett(a: u64, b: u64, m: &Modulus) -> u64 {
    m.mul(a, b)
}

pub fn mod_pow(base: u64, exp: u64, m: &Modulus) -> u64 {
    m.pow(base, exp)
}

pub fn mod_inv(a: u64, m: &Modulus) -> Result<u64, ModMathError> {
    m.inv(a)
}

#[inline]
fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod_u64(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod_u64(acc, b, m);
        }
        b = mul_mod_u64(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &BASES {
        let mut x = pow_mod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Roots of unity for a length-`n` transform over a fixed modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RootSet {
    pub n: usize,
    pub modulus: Modulus,
    /// Primitive `n`-th root of unity (`psi^2`).
    pub omega: u64,
    /// Primitive `2n`-th root of unity.
    pub psi: u64,
    pub omega_inv: u64,
    pub psi_inv: u64,
    pub n_inv: u64,
}

impl RootSet {
    /// Checks every algebraic relation the transforms rely on.
    pub fn verify(&self) -> bool {
        let m = &self.modulus;
        let n = self.n as u64;
        let q = m.value();
        let omega_ok = m.pow(self.omega, n) == 1 && (n == 1 || m.pow(self.omega, n / 2) != 1);
        omega_ok
            && m.mul(self.psi, self.psi) == self.omega
            && m.pow(self.psi, n) == q - 1
            && m.mul(self.omega, self.omega_inv) == 1
            && m.mul(self.psi, self.psi_inv) == 1
            && m.mul(n % q, self.n_inv) == 1
    }
}

/// Finds the canonical root set for dimension `n`: `psi` is the smallest
/// primitive `2n`-th root of unity modulo `q`, and `omega = psi^2`.
pub fn find_roots(n: usize, m: &Modulus) -> Result<RootSet, ModMathError> {
    if n == 0 || !n.is_power_of_two() {
        return Err(ModMathError::InvalidDimension(n));
    }
    let q = m.value();
    let two_n = 2 * n as u64;
    if !(q - 1).is_multiple_of(two_n) {
        return Err(ModMathError::NotNttFriendly { q, n });
    }
    // A quadratic non-residue g gives g^((q-1)/2n) an order of exactly 2n,
    // since its n-th power is g^((q-1)/2) = -1 and 2n is a power of two.
    let non_residue = (2..q)
        .find(|&g| m.pow(g, (q - 1) / 2) == q - 1)
        .expect("every odd prime has a quadratic non-residue");
    let base = m.pow(non_residue, (q - 1) / two_n);
    // The primitive 2n-th roots are exactly the odd powers of `base`.
    let step = m.mul(base, base);
    let mut candidate = base;
    let mut psi = base;
    for _ in 0..n {
        psi = psi.min(candidate);
        candidate = m.mul(candidate, step);
    }
    let omega = m.mul(psi, psi);
    let psi_inv = m.inv(psi)?;
    Ok(RootSet {
        n,
        modulus: *m,
        omega,
        psi,
        omega_inv: m.mul(psi_inv, psi_inv),
        psi_inv,
        n_inv: m.inv(n as u64 % q)?,
    })
}

/// Returns one `bit_width`-bit prime `q = 1 mod 2n`, chosen deterministically
/// from `seed`.
pub fn generate_ntt_prime(bit_width: u32, n: usize, seed: u64) -> Result<Modulus, ModMathError> {
    Ok(generate_ntt_primes(bit_width, n, 1, seed)?[0])
}

/// Returns `count` distinct `bit_width`-bit primes `q = 1 mod 2n`.
///
/// The search starts at a seed-dependent candidate `k * 2n + 1` and walks the
/// arithmetic progression upward, wrapping inside the bit-width range.
pub fn generate_ntt_primes(
    bit_width: u32,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Modulus>, ModMathError> {
    if !(2..=MAX_MODULUS_BITS).contains(&bit_width) {
        return Err(ModMathError::InvalidBitWidth(bit_width));
    }
    if n == 0 || !n.is_power_of_two() {
        return Err(ModMathError::InvalidDimension(n));
    }
    let not_found = ModMathError::NoPrimeFound {
        bits: bit_width,
        n,
        count,
    };
    let step = 2 * n as u64;
    let lo = 1u64 << (bit_width - 1);
    let hi = (1u64 << bit_width) - 1;
    // k * step + 1 in [lo, hi]
    let k_min = (lo - 1).div_ceil(step);
    let k_max = (hi - 1) / step;
    if k_min > k_max {
        return Err(not_found);
    }
    let span = k_max - k_min + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.gen_range(0..span);
    let mut out = Vec::with_capacity(count);
    for i in 0..span.min(MAX_PRIME_CANDIDATES) {
        if out.len() == count {
            break;
        }
        let k = k_min + (offset + i) % span;
        let q = k * step + 1;
        if is_prime(q) {
            out.push(Modulus::new(q)?);
        }
    }
    if out.len() < count {
        return Err(not_found);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn m(q: u64) -> Modulus {
        Modulus::new(q).unwrap()
    }

    #[test]
    fn modular_adder_examples() {
        let f = m(65537);
        assert_eq!(mod_add(65000, 1000, &f), 463);
        assert_eq!(mod_add(0, 0, &f), 0);
        assert_eq!(mod_add(65536, 65536, &f), 65535);
    }

    #[test]
    fn sub_examples() {
        let s = m(17);
        assert_eq!(mod_sub(3, 10, &s), 10);
        assert_eq!(mod_sub(5, 5, &s), 0);
        assert_eq!(mod_sub(16, 0, &s), 16);
    }

    #[test]
    fn barrett_examples() {
        assert_eq!(mod_mul_barrett(13, 13, &m(17)), 16);
        for x in 0..17 {
            assert_eq!(mod_mul_barrett(1, x, &m(17)), x);
        }
        // (q-1)^2 = 1
        assert_eq!(mod_mul_barrett(65536, 65536, &m(65537)), 1);
    }

    #[test]
    fn pow_examples() {
        let s = m(17);
        assert_eq!(mod_pow(4, 4, &s), 1);
        assert_eq!(mod_pow(2, 4, &s), 16);
        assert_eq!(mod_pow(9, 0, &s), 1);
    }

    #[test]
    fn inverse_examples() {
        let s = m(17);
        assert_eq!(mod_inv(4, &s), Ok(13));
        assert_eq!(mod_inv(1, &s), Ok(1));
        assert_eq!(mod_inv(0, &s), Err(ModMathError::NoInverse));
        assert!(mod_inv(17, &s).is_err());
    }

    #[test]
    fn rejects_bad_moduli() {
        assert_eq!(Modulus::new(15), Err(ModMathError::NotPrime(15)));
        assert!(Modulus::new(1).is_err());
        assert!(Modulus::new(1 << 62).is_err());
        assert!(m(2).is_consistent());
        assert!(m((1 << 61) - 1).is_consistent());
    }

    #[test]
    fn root_examples() {
        let r = find_roots(4, &m(17)).unwrap();
        assert_eq!((r.psi, r.omega), (2, 4));
        assert!(r.verify());
        let r2 = find_roots(2, &m(17)).unwrap();
        assert_eq!(r2.omega, 16);
        assert_eq!(r2.psi, 4);
        assert_eq!(
            find_roots(4, &m(7)),
            Err(ModMathError::NotNttFriendly { q: 7, n: 4 })
        );
        assert!(find_roots(3, &m(17)).is_err());
    }

    #[test]
    fn roots_are_exhaustively_minimal_for_small_primes() {
        // Exhaustive oracle: smallest element of exact multiplicative order 2n.
        for &q in &[17u64, 97, 193, 257, 7681, 12289] {
            let md = m(q);
            let mut n = 1;
            while (q - 1) % (2 * n as u64) == 0 {
                let two_n = 2 * n as u64;
                let has_order_2n = |x: u64| {
                    if q <= 257 {
                        (1..q).find(|&e| mod_pow(x, e, &md) == 1) == Some(two_n)
                    } else {
                        // Order divides 2n but not n, and 2n is a power of two.
                        mod_pow(x, two_n, &md) == 1 && mod_pow(x, n as u64, &md) != 1
                    }
                };
                let want = (2..q).find(|&x| has_order_2n(x)).unwrap();
                let r = find_roots(n, &md).unwrap();
                assert_eq!(r.psi, want, "q={q} n={n}");
                assert!(r.verify());
                n *= 2;
                if n > 64 {
                    break;
                }
            }
        }
    }

    #[test]
    fn prime_generation_examples() {
        let q = generate_ntt_prime(5, 4, 0).unwrap();
        assert_eq!(q.value(), 17);
        let q = generate_ntt_prime(17, 4, 3).unwrap();
        assert_eq!(q.bit_width(), 17);
        assert_eq!(q.value() % 8, 1);
        assert!(generate_ntt_prime(2, 1024, 0).is_err());
        assert!(generate_ntt_prime(63, 4, 0).is_err());
        let a = generate_ntt_primes(60, 1024, 4, 11).unwrap();
        let b = generate_ntt_primes(60, 1024, 4, 11).unwrap();
        assert_eq!(a, b);
        for q in &a {
            assert_eq!(q.bit_width(), 60);
            assert_eq!(q.value() % 2048, 1);
        }
    }

    #[test]
    fn primality_matches_trial_division() {
        let trial = |n: u64| {
            n >= 2
                && (2..)
                    .take_while(|d| d * d <= n)
                    .all(|d| !n.is_multiple_of(d))
        };
        for n in 0..5000u64 {
            assert_eq!(is_prime(n), trial(n), "{n}");
        }
        // Strong pseudoprimes to several small bases.
        assert!(!is_prime(3_215_031_751));
        assert!(!is_prime(3_825_123_056_546_413_051));
        assert!(is_prime((1 << 61) - 1));
    }

    #[test]
    fn add_and_mul_exhaustive_small_moduli() {
        for &q in &[2u64, 3, 5, 17, 251, 257] {
            let md = m(q);
            for a in 0..q {
                for b in 0..q {
                    assert_eq!(md.add(a, b), (a + b) % q);
                    assert_eq!(md.mul(a, b), a * b % q);
                    assert_eq!(md.sub(a, b), (a + q - b) % q);
                }
            }
        }
    }

    #[test]
    fn barrett_randomized_large_moduli() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for q in [
            65537u64,
            (1 << 31) - 1,
            1_152_921_504_606_830_593,
            (1 << 61) - 1,
        ] {
            let md = m(q);
            for _ in 0..100_000 {
                let a = rng.gen_range(0..q);
                let b = rng.gen_range(0..q);
                let want = (a as u128 * b as u128 % q as u128) as u64;
                assert_eq!(md.mul(a, b), want);
            }
        }
    }

    proptest! {
        #[test]
        fn inverse_is_an_involution(a in 1u64..((1 << 61) - 1)) {
            let md = m((1 << 61) - 1);
            let inv = md.inv(a).unwrap();
            prop_assert_eq!(md.mul(a, inv), 1);
            prop_assert_eq!(md.inv(inv).unwrap(), a);
        }

        #[test]
        fn roots_are_primitive(bits in 20u32..62, log_n in 1u32..12, seed: u64) {
            let n = 1usize << log_n;
            let md = generate_ntt_prime(bits, n, seed).unwrap();
            let r = find_roots(n, &md).unwrap();
            prop_assert!(r.verify());
            // Every proper divisor d of 2n is a power of two dividing n.
            let mut d = 1u64;
            while d < 2 * n as u64 {
                prop_assert_ne!(md.pow(r.psi, d), 1);
                d *= 2;
            }
        }
    }
}
