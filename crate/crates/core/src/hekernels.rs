//! A textbook BFV scheme over a single word-size modulus.
//!
//! Key generation, encryption, decryption, homomorphic addition,
//! multiplication and relinearization, each expressed through the ring
//! operations of [`crate::polyring`] and [`crate::ntt`]. Parameters are
//! sized for correctness experiments and carry no security claim.
//!
//! The tensor step of [`eval_mult`] needs exact integer products of
//! centered ring elements, which are wider than `u128` for 60-bit moduli.
//! They are computed in an auxiliary RNS basis of NTT primes large enough
//! to hold them and recovered with CRT before the `t/q` rescaling.

use std::sync::Arc;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::modmath::{generate_ntt_prime, generate_ntt_primes, ModMathError};
use crate::ntt::{fast_negacyclic_mul, NttError, TwiddleTable};
use crate::polyring::{
    cw_mul, poly_add, poly_neg, poly_sub, random_poly_from, scalar_mul, Polynomial, RingError,
    RingParams,
};
use crate::rns::{RnsBasis, RnsError};

/// Default relinearization digit width (`base = 2^16`).
pub const DEFAULT_DECOMP_BASE_LOG: u32 = 16;
pub const DEFAULT_NOISE_STDDEV: f64 = 3.2;

const AUX_PRIME_BITS: u32 = 61;
const AUX_PRIME_SEED: u64 = 0x5eed_a0c5;

#[derive(Debug, Error)]
pub enum HeError {
    #[error("plaintext modulus {t} must satisfy 2 <= t < q = {q}")]
    InvalidPlaintextModulus { t: u64, q: u64 },
    #[error("plaintext value {value} at slot {index} is not below t = {t}")]
    PlaintextOutOfRange { index: usize, value: u64, t: u64 },
    #[error("plaintext has {got} slots, ring holds {n}")]
    PlaintextTooLong { got: usize, n: usize },
    #[error("expected a ciphertext of degree {expected}, got degree {got}")]
    DegreeMismatch { expected: String, got: usize },
    #[error("ciphertexts belong to different parameter sets")]
    ParamsMismatch,
    #[error("invalid noise standard deviation {0}")]
    InvalidNoise(f64),
    #[error("relinearization digit width {0} must be in 1..=32")]
    InvalidDecompBase(u32),
    #[error(transparent)]
    Math(#[from] ModMathError),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Ntt(#[from] NttError),
    #[error(transparent)]
    Rns(#[from] RnsError),
    #[error("offload backend failed: {0}")]
    Backend(Box<dyn std::error::Error + Send + Sync>),
}

#[derive(Debug)]
struct SchemeContext {
    table: TwiddleTable,
    aux: RnsBasis,
    aux_tables: Vec<TwiddleTable>,
    aux_rings: Vec<RingParams>,
}

/// Ring, plaintext modulus, noise and relinearization settings.
#[derive(Debug, Clone)]
pub struct SchemeParams {
    ring: RingParams,
    t: u64,
    delta: u64,
    noise_stddev: f64,
    decomp_base_log: u32,
    ctx: Arc<SchemeContext>,
}

impl SchemeParams {
    pub fn new(
        ring: RingParams,
        t: u64,
        noise_stddev: f64,
        decomp_base_log: u32,
    ) -> Result<Self, HeError> {
        let q = ring.modulus().value();
        if t < 2 || t >= q {
            return Err(HeError::InvalidPlaintextModulus { t, q });
        }
        if !(noise_stddev.is_finite() && noise_stddev >= 0.0) {
            return Err(HeError::InvalidNoise(noise_stddev));
        }
        if !(1..=32).contains(&decomp_base_log) {
            return Err(HeError::InvalidDecompBase(decomp_base_log));
        }
        let n = ring.n();
        let table = TwiddleTable::new(n, ring.modulus())?;
        // |tensor coefficient| <= n * (q/2)^2 for a sum of two products;
        // the auxiliary product must exceed twice that.
        let needed_bits = n.trailing_zeros() + 2 * ring.modulus().bit_width() + 2;
        let count = needed_bits.div_ceil(AUX_PRIME_BITS - 1) as usize;
        let aux = RnsBasis::new(generate_ntt_primes(
            AUX_PRIME_BITS,
            n,
            count,
            AUX_PRIME_SEED,
        )?)?;
        let aux_tables = aux
            .towers()
            .iter()
            .map(|&p| TwiddleTable::new(n, p))
            .collect::<Result<Vec<_>, _>>()?;
        let aux_rings = aux
            .towers()
            .iter()
            .map(|&p| RingParams::negacyclic(n, p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            ring,
            t,
            delta: q / t,
            noise_stddev,
            decomp_base_log,
            ctx: Arc::new(SchemeContext {
                table,
                aux,
                aux_tables,
                aux_rings,
            }),
        })
    }

    /// Negacyclic ring of dimension `n` over a seeded `q_bits`-bit NTT prime,
    /// with default noise and digit width.
    pub fn generate(n: usize, q_bits: u32, t: u64, seed: u64) -> Result<Self, HeError> {
        let q = generate_ntt_prime(q_bits, n, seed)?;
        Self::new(
            RingParams::negacyclic(n, q)?,
            t,
            DEFAULT_NOISE_STDDEV,
            DEFAULT_DECOMP_BASE_LOG,
        )
    }

    /// Same parameters with a different noise level.
    pub fn with_noise(&self, noise_stddev: f64) -> Result<Self, HeError> {
        if !(noise_stddev.is_finite() && noise_stddev >= 0.0) {
            return Err(HeError::InvalidNoise(noise_stddev));
        }
        Ok(Self {
            noise_stddev,
            ..self.clone()
        })
    }

    #[inline]
    pub fn ring(&self) -> &RingParams {
        &self.ring
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.ring.n()
    }

    #[inline]
    pub fn q(&self) -> u64 {
        self.ring.modulus().value()
    }

    #[inline]
    pub fn t(&self) -> u64 {
        self.t
    }

    /// `floor(q / t)`.
    #[inline]
    pub fn delta(&self) -> u64 {
        self.delta
    }

    #[inline]
    pub fn noise_stddev(&self) -> f64 {
        self.noise_stddev
    }

    #[inline]
    pub fn decomp_base_log(&self) -> u32 {
        self.decomp_base_log
    }

    /// Number of base-`2^w` digits needed for a residue mod `q`.
    pub fn decomp_digits(&self) -> usize {
        self.ring
            .modulus()
            .bit_width()
            .div_ceil(self.decomp_base_log) as usize
    }

    /// Centered binomial parameter: `eta` coin pairs give variance `eta / 2`.
    pub fn binomial_eta(&self) -> u32 {
        (2.0 * self.noise_stddev * self.noise_stddev).round() as u32
    }

    pub fn table(&self) -> &TwiddleTable {
        &self.ctx.table
    }

    fn ring_mul(&self, a: &Polynomial, b: &Polynomial) -> Result<Polynomial, HeError> {
        Ok(fast_negacyclic_mul(a, b, &self.ctx.table)?)
    }
}

/// Ternary secret `s` with coefficients in `{-1, 0, 1}` (stored mod `q`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    pub s: Polynomial,
}

/// `(a, b = -(a*s + e))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    pub a: Polynomial,
    pub b: Polynomial,
}

/// Encryptions of `B^i * s^2` for relinearization: `(b_i, a_i)` with
/// `b_i = -(a_i*s + e_i) + B^i * s^2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalKey {
    pub parts: Vec<(Polynomial, Polynomial)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    pub sk: SecretKey,
    pub pk: PublicKey,
    pub ek: EvalKey,
}

/// Two polynomials after encryption or relinearization, three after
/// [`eval_mult`]. Decryption evaluates `sum_i elements[i] * s^i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub elements: Vec<Polynomial>,
}

impl Ciphertext {
    pub fn degree(&self) -> usize {
        self.elements.len().saturating_sub(1)
    }
}

/// Ring operations a homomorphic evaluation may delegate, e.g. to the
/// in-memory simulator.
pub trait PolyBackend {
    fn add(&mut self, a: &Polynomial, b: &Polynomial) -> Result<Polynomial, HeError>;
    fn cw_mul(&mut self, a: &Polynomial, b: &Polynomial) -> Result<Polynomial, HeError>;
}

/// Runs everything on the host.
#[derive(Debug, Default, Clone, Copy)]
pub struct HostBackend;

impl PolyBackend for HostBackend {
    fn add(&mut self, a: &Polynomial, b: &Polynomial) -> Result<Polynomial, HeError> {
        Ok(poly_add(a, b)?)
    }

    fn cw_mul(&mut self, a: &Polynomial, b: &Polynomial) -> Result<Polynomial, HeError> {
        Ok(cw_mul(a, b)?)
    }
}

/// Ring-level work performed by an evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeStats {
    pub poly_adds: u64,
    /// Full ring products (each may span several NTT primes internally).
    pub poly_muls: u64,
}

fn sample_ternary<R: Rng>(ring: RingParams, rng: &mut R) -> Polynomial {
    let v: Vec<i64> = (0..ring.n()).map(|_| rng.gen_range(-1i64..=1)).collect();
    Polynomial::from_signed(&v, ring).expect("length matches ring")
}

fn sample_noise<R: Rng>(params: &SchemeParams, rng: &mut R) -> Polynomial {
    let eta = params.binomial_eta();
    let v: Vec<i64> = (0..params.n())
        .map(|_| {
            (0..eta)
                .map(|_| rng.gen::<bool>() as i64 - rng.gen::<bool>() as i64)
                .sum()
        })
        .collect();
    Polynomial::from_signed(&v, params.ring).expect("length matches ring")
}

pub fn keygen(params: &SchemeParams, seed: u64) -> Result<KeyMaterial, HeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ring = params.ring;
    let s = sample_ternary(ring, &mut rng);
    let a = random_poly_from(ring, &mut rng);
    let e = sample_noise(params, &mut rng);
    let b = poly_neg(&poly_add(&params.ring_mul(&a, &s)?, &e)?);

    let s2 = params.ring_mul(&s, &s)?;
    let m = ring.modulus();
    let base = m.reduce(1u64 << params.decomp_base_log);
    let mut power = 1 % m.value();
    let mut parts = Vec::with_capacity(params.decomp_digits());
    for _ in 0..params.decomp_digits() {
        let ai = random_poly_from(ring, &mut rng);
        let ei = sample_noise(params, &mut rng);
        let mask = poly_neg(&poly_add(&params.ring_mul(&ai, &s)?, &ei)?);
        parts.push((poly_add(&mask, &scalar_mul(&s2, power))?, ai));
        power = m.mul(power, base);
    }
    Ok(KeyMaterial {
        sk: SecretKey { s },
        pk: PublicKey { a, b },
        ek: EvalKey { parts },
    })
}

fn encode(m: &[u64], params: &SchemeParams) -> Result<Polynomial, HeError> {
    let n = params.n();
    if m.len() > n {
        return Err(HeError::PlaintextTooLong { got: m.len(), n });
    }
    if let Some((index, &value)) = m.iter().enumerate().find(|(_, &v)| v >= params.t) {
        return Err(HeError::PlaintextOutOfRange {
            index,
            value,
            t: params.t,
        });
    }
    let mut coeffs = vec![0u64; n];
    let md = params.ring.modulus();
    for (c, &v) in coeffs.iter_mut().zip(m) {
        *c = md.mul(v, params.delta);
    }
    Ok(Polynomial::from_reduced(coeffs, params.ring))
}

/// Public-key encryption with explicit randomness:
/// `(u*b + e2 + delta*m, u*a + e1)`.
pub fn encrypt_with(
    m: &[u64],
    pk: &PublicKey,
    params: &SchemeParams,
    u: &Polynomial,
    e1: &Polynomial,
    e2: &Polynomial,
) -> Result<Ciphertext, HeError> {
    let scaled = encode(m, params)?;
    let c0 = poly_add(&poly_add(&params.ring_mul(u, &pk.b)?, e2)?, &scaled)?;
    let c1 = poly_add(&params.ring_mul(u, &pk.a)?, e1)?;
    Ok(Ciphertext {
        elements: vec![c0, c1],
    })
}

/// Encrypts a plaintext of at most `n` slots, each below `t`; missing
/// slots are zero.
pub fn encrypt(
    m: &[u64],
    pk: &PublicKey,
    params: &SchemeParams,
    seed: u64,
) -> Result<Ciphertext, HeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = sample_ternary(params.ring, &mut rng);
    let e1 = sample_noise(params, &mut rng);
    let e2 = sample_noise(params, &mut rng);
    encrypt_with(m, pk, params, &u, &e1, &e2)
}

/// `round(t * x / q) mod t` per coefficient of `sum_i c_i * s^i`.
pub fn decrypt(c: &Ciphertext, sk: &SecretKey, params: &SchemeParams) -> Result<Vec<u64>, HeError> {
    if c.elements.is_empty() || c.elements.len() > 3 {
        return Err(HeError::DegreeMismatch {
            expected: "at most 2".into(),
            got: c.degree(),
        });
    }
    let mut acc = c.elements[0].clone();
    let mut s_pow = sk.s.clone();
    for (i, ci) in c.elements.iter().enumerate().skip(1) {
        acc = poly_add(&acc, &params.ring_mul(ci, &s_pow)?)?;
        if i + 1 < c.elements.len() {
            s_pow = params.ring_mul(&s_pow, &sk.s)?;
        }
    }
    let q = params.q() as u128;
    let t = params.t as u128;
    Ok(acc
        .coeffs()
        .iter()
        .map(|&x| (((2 * t * x as u128 + q) / (2 * q)) % t) as u64)
        .collect())
}

fn check_pair(c1: &Ciphertext, c2: &Ciphertext) -> Result<(), HeError> {
    if c1.elements.len() != c2.elements.len() {
        return Err(HeError::DegreeMismatch {
            expected: c1.degree().to_string(),
            got: c2.degree(),
        });
    }
    if c1
        .elements
        .iter()
        .zip(&c2.elements)
        .any(|(a, b)| a.params() != b.params())
    {
        return Err(HeError::ParamsMismatch);
    }
    Ok(())
}

pub fn eval_add(c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext, HeError> {
    eval_add_with(c1, c2, &mut HostBackend, &mut HeStats::default())
}

/// Element-wise ciphertext addition; performs no ring multiplications.
pub fn eval_add_with(
    c1: &Ciphertext,
    c2: &Ciphertext,
    backend: &mut dyn PolyBackend,
    stats: &mut HeStats,
) -> Result<Ciphertext, HeError> {
    check_pair(c1, c2)?;
    let elements = c1
        .elements
        .iter()
        .zip(&c2.elements)
        .map(|(a, b)| {
            stats.poly_adds += 1;
            backend.add(a, b)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ciphertext { elements })
}

pub fn eval_mult(
    c1: &Ciphertext,
    c2: &Ciphertext,
    params: &SchemeParams,
) -> Result<Ciphertext, HeError> {
    eval_mult_with(c1, c2, params, &mut HostBackend, &mut HeStats::default())
}

/// Tensor product `(c0 c0', c0 c1' + c1 c0', c1 c1')`, each term rescaled by
/// `t/q` with rounding. The pointwise products in the auxiliary NTT domain go
/// through `backend`.
pub fn eval_mult_with(
    c1: &Ciphertext,
    c2: &Ciphertext,
    params: &SchemeParams,
    backend: &mut dyn PolyBackend,
    stats: &mut HeStats,
) -> Result<Ciphertext, HeError> {
    for c in [c1, c2] {
        if c.elements.len() != 2 {
            return Err(HeError::DegreeMismatch {
                expected: "1".into(),
                got: c.degree(),
            });
        }
        if c.elements.iter().any(|e| e.params() != &params.ring) {
            return Err(HeError::ParamsMismatch);
        }
    }
    let ctx = &params.ctx;
    let n = params.n();
    let k = ctx.aux.len();

    // Forward transforms of the centered lifts, one per auxiliary prime.
    let lift = |p: &Polynomial| -> Vec<Vec<u64>> {
        let centered = p.centered();
        ctx.aux_tables
            .iter()
            .map(|t| {
                let m = t.modulus();
                let mut v: Vec<u64> = centered.iter().map(|&c| m.reduce_i64(c)).collect();
                t.forward_negacyclic_in_place(&mut v);
                v
            })
            .collect()
    };
    let (a0, a1) = (lift(&c1.elements[0]), lift(&c1.elements[1]));
    let (b0, b1) = (lift(&c2.elements[0]), lift(&c2.elements[1]));

    let mut tensor: [Vec<Vec<u64>>; 3] = Default::default();
    for j in 0..k {
        let ring = ctx.aux_rings[j];
        let wrap = |v: &Vec<u64>| Polynomial::from_reduced(v.clone(), ring);
        let d0 = backend.cw_mul(&wrap(&a0[j]), &wrap(&b0[j]))?;
        let x = backend.cw_mul(&wrap(&a0[j]), &wrap(&b1[j]))?;
        let y = backend.cw_mul(&wrap(&a1[j]), &wrap(&b0[j]))?;
        let d1 = backend.add(&x, &y)?;
        let d2 = backend.cw_mul(&wrap(&a1[j]), &wrap(&b1[j]))?;
        for (slot, d) in tensor.iter_mut().zip([d0, d1, d2]) {
            let mut v = d.into_coeffs();
            ctx.aux_tables[j].inverse_negacyclic_in_place(&mut v);
            slot.push(v);
        }
    }
    stats.poly_muls += 4;
    stats.poly_adds += 1;

    let q = BigInt::from(params.q());
    let two_q = &q * 2;
    let t2 = BigInt::from(2 * params.t);
    let big_p = BigInt::from_biguint(Sign::Plus, ctx.aux.big_q().clone());
    let half_p: BigInt = &big_p >> 1;
    let rescale = |residues: &[Vec<u64>]| -> Result<Polynomial, HeError> {
        let mut out = Vec::with_capacity(n);
        let mut digits = vec![0u64; k];
        for i in 0..n {
            for (d, r) in digits.iter_mut().zip(residues) {
                *d = r[i];
            }
            let x: BigUint = ctx.aux.reconstruct_scalar(&digits)?;
            let mut x = BigInt::from_biguint(Sign::Plus, x);
            if x > half_p {
                x -= &big_p;
            }
            // round(t x / q) = floor((2 t x + q) / 2q)
            let r = (&t2 * x + &q).div_floor(&two_q).mod_floor(&q);
            out.push(r.to_u64().unwrap_or_default());
        }
        Ok(Polynomial::from_reduced(out, params.ring))
    };
    let elements = tensor
        .iter()
        .map(|r| rescale(r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ciphertext { elements })
}

/// Base-`2^w` key switching of the `s^2` component back to degree 1.
pub fn relinearize(
    c: &Ciphertext,
    ek: &EvalKey,
    params: &SchemeParams,
) -> Result<Ciphertext, HeError> {
    if c.elements.len() != 3 {
        return Err(HeError::DegreeMismatch {
            expected: "2".into(),
            got: c.degree(),
        });
    }
    let w = params.decomp_base_log;
    let mask = (1u64 << w) - 1;
    let mut c0 = c.elements[0].clone();
    let mut c1 = c.elements[1].clone();
    let c2 = c.elements[2].coeffs();
    for (i, (bi, ai)) in ek.parts.iter().enumerate() {
        let shift = i as u32 * w;
        let digit: Vec<u64> = c2
            .iter()
            .map(|&x| if shift >= 64 { 0 } else { (x >> shift) & mask })
            .collect();
        if digit.iter().all(Zero::is_zero) {
            continue;
        }
        let digit = Polynomial::from_reduced(digit, params.ring);
        c0 = poly_add(&c0, &params.ring_mul(&digit, bi)?)?;
        c1 = poly_add(&c1, &params.ring_mul(&digit, ai)?)?;
    }
    Ok(Ciphertext {
        elements: vec![c0, c1],
    })
}

/// `b + a*s`, which equals `-e` for a well-formed public key.
pub fn public_key_residual(
    pk: &PublicKey,
    sk: &SecretKey,
    params: &SchemeParams,
) -> Result<Polynomial, HeError> {
    Ok(poly_add(&pk.b, &params.ring_mul(&pk.a, &sk.s)?)?)
}

/// Noise left in a ciphertext: `sum_i c_i s^i - delta * m` (centered norm).
pub fn noise_norm(
    c: &Ciphertext,
    sk: &SecretKey,
    m: &[u64],
    params: &SchemeParams,
) -> Result<u64, HeError> {
    let mut acc = c.elements[0].clone();
    let mut s_pow = sk.s.clone();
    for ci in c.elements.iter().skip(1) {
        acc = poly_add(&acc, &params.ring_mul(ci, &s_pow)?)?;
        s_pow = params.ring_mul(&s_pow, &sk.s)?;
    }
    Ok(poly_sub(&acc, &encode(m, params)?)?.infinity_norm())
}
