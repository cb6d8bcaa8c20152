//! Polynomials over `Z_q[x]` reduced modulo `x^n + 1` or `x^n - 1`.
//!
//! Coefficients are stored by ascending degree: index `k` holds the
//! coefficient of `x^k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::modmath::Modulus;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RingError {
    #[error("ring dimension {0} must be a power of two and at least 2")]
    InvalidDimension(usize),
    #[error("expected {expected} coefficients, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("coefficient {value} at index {index} is not reduced modulo {modulus}")]
    CoefficientOutOfRange {
        index: usize,
        value: u64,
        modulus: u64,
    },
    #[error("operands belong to different rings")]
    ParamsMismatch,
    #[error("operation requires {expected:?} reduction, ring uses {got:?}")]
    WrongReduction { expected: Reduction, got: Reduction },
}

/// Which quotient polynomial defines the ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reduction {
    /// `x^n = -1`
    NegacyclicXnPlus1,
    /// `x^n = 1`
    CyclicXnMinus1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RingParams {
    n: usize,
    modulus: Modulus,
    reduction: Reduction,
}

impl RingParams {
    pub fn new(n: usize, modulus: Modulus, reduction: Reduction) -> Result<Self, RingError> {
        if n < 2 || !n.is_power_of_two() {
            return Err(RingError::InvalidDimension(n));
        }
        Ok(Self {
            n,
            modulus,
            reduction,
        })
    }

    pub fn negacyclic(n: usize, modulus: Modulus) -> Result<Self, RingError> {
        Self::new(n, modulus, Reduction::NegacyclicXnPlus1)
    }

    pub fn cyclic(n: usize, modulus: Modulus) -> Result<Self, RingError> {
        Self::new(n, modulus, Reduction::CyclicXnMinus1)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn modulus(&self) -> Modulus {
        self.modulus
    }

    #[inline]
    pub fn reduction(&self) -> Reduction {
        self.reduction
    }
}

/// A ring element: exactly `n` coefficients, each in `[0, q)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polynomial {
    coeffs: Vec<u64>,
    params: RingParams,
}

impl Polynomial {
    pub fn new(coeffs: Vec<u64>, params: RingParams) -> Result<Self, RingError> {
        if coeffs.len() != params.n {
            return Err(RingError::LengthMismatch {
                expected: params.n,
                got: coeffs.len(),
            });
        }
        let q = params.modulus.value();
        if let Some((index, &value)) = coeffs.iter().enumerate().find(|(_, &c)| c >= q) {
            return Err(RingError::CoefficientOutOfRange {
                index,
                value,
                modulus: q,
            });
        }
        Ok(Self { coeffs, params })
    }

    /// Wraps coefficients already known to be reduced.
    pub(crate) fn from_reduced(coeffs: Vec<u64>, params: RingParams) -> Self {
        debug_assert_eq!(coeffs.len(), params.n);
        debug_assert!(coeffs.iter().all(|&c| c < params.modulus.value()));
        Self { coeffs, params }
    }

    pub fn zero(params: RingParams) -> Self {
        Self::from_reduced(vec![0; params.n], params)
    }

    /// The multiplicative identity `[1, 0, ..., 0]`.
    pub fn one(params: RingParams) -> Self {
        let mut p = Self::zero(params);
        p.coeffs[0] = 1;
        p
    }

    /// Maps signed integers to their residues modulo `q`.
    pub fn from_signed(values: &[i64], params: RingParams) -> Result<Self, RingError> {
        if values.len() != params.n {
            return Err(RingError::LengthMismatch {
                expected: params.n,
                got: values.len(),
            });
        }
        let m = params.modulus;
        Ok(Self::from_reduced(
            values.iter().map(|&v| m.reduce_i64(v)).collect(),
            params,
        ))
    }

    #[inline]
    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    #[inline]
    pub fn params(&self) -> &RingParams {
        &self.params
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.params.n
    }

    #[inline]
    pub fn modulus(&self) -> Modulus {
        self.params.modulus
    }

    pub fn into_coeffs(self) -> Vec<u64> {
        self.coeffs
    }

    /// Coefficients lifted to the centered range `(-q/2, q/2]`.
    pub fn centered(&self) -> Vec<i64> {
        let q = self.params.modulus.value();
        self.coeffs
            .iter()
            .map(|&c| {
                if c > q / 2 {
                    c as i64 - q as i64
                } else {
                    c as i64
                }
            })
            .collect()
    }

    /// Largest absolute centered coefficient.
    pub fn infinity_norm(&self) -> u64 {
        self.centered()
            .into_iter()
            .map(|c| c.unsigned_abs())
            .max()
            .unwrap_or(0)
    }
}

/// Full-length product `c_0 .. c_{2n-2}` before quotient reduction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvolutionResult {
    coeffs: Vec<u64>,
    modulus: Modulus,
}

impl ConvolutionResult {
    pub fn new(coeffs: Vec<u64>, modulus: Modulus) -> Result<Self, RingError> {
        let q = modulus.value();
        if let Some((index, &value)) = coeffs.iter().enumerate().find(|(_, &c)| c >= q) {
            return Err(RingError::CoefficientOutOfRange {
                index,
                value,
                modulus: q,
            });
        }
        Ok(Self { coeffs, modulus })
    }

    #[inline]
    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    #[inline]
    pub fn modulus(&self) -> Modulus {
        self.modulus
    }

    pub fn into_coeffs(self) -> Vec<u64> {
        self.coeffs
    }
}

/// Modular operations performed by an instrumented kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub muls: u64,
    pub adds: u64,
}

fn check_same(p1: &Polynomial, p2: &Polynomial) -> Result<(), RingError> {
    if p1.params != p2.params {
        return Err(RingError::ParamsMismatch);
    }
    Ok(())
}

fn zip_with(
    p1: &Polynomial,
    p2: &Polynomial,
    f: impl Fn(&Modulus, u64, u64) -> u64,
) -> Result<Polynomial, RingError> {
    check_same(p1, p2)?;
    let m = p1.params.modulus;
    let coeffs = p1
        .coeffs
        .iter()
        .zip(&p2.coeffs)
        .map(|(&a, &b)| f(&m, a, b))
        .collect();
    Ok(Polynomial::from_reduced(coeffs, p1.params))
}

/// Coefficient-wise modular addition: `n` modular additions.
pub fn poly_add(p1: &Polynomial, p2: &Polynomial) -> Result<Polynomial, RingError> {
    zip_with(p1, p2, Modulus::add)
}

pub fn poly_sub(p1: &Polynomial, p2: &Polynomial) -> Result<Polynomial, RingError> {
    zip_with(p1, p2, Modulus::sub)
}

pub fn poly_neg(p: &Polynomial) -> Polynomial {
    let m = p.params.modulus;
    Polynomial::from_reduced(p.coeffs.iter().map(|&c| m.neg(c)).collect(), p.params)
}

pub fn scalar_mul(p: &Polynomial, scalar: u64) -> Polynomial {
    let m = p.params.modulus;
    let s = m.reduce(scalar);
    Polynomial::from_reduced(p.coeffs.iter().map(|&c| m.mul(c, s)).collect(), p.params)
}

/// Coefficient-wise (Hadamard) product: `n` modular multiplications.
pub fn cw_mul(p1: &Polynomial, p2: &Polynomial) -> Result<Polynomial, RingError> {
    zip_with(p1, p2, Modulus::mul)
}

/// Textbook `O(n^2)` product of two polynomials, without quotient reduction.
pub fn schoolbook_convolution(
    p1: &Polynomial,
    p2: &Polynomial,
) -> Result<ConvolutionResult, RingError> {
    schoolbook_convolution_counted(p1, p2).map(|(c, _)| c)
}

/// As [`schoolbook_convolution`], also reporting the modular operations used.
///
/// Each output `c_k` is a sum of `m_k` products and costs `m_k - 1`
/// additions, so a length-`n` product uses `n^2` multiplications and
/// `(n - 1)^2` additions.
pub fn schoolbook_convolution_counted(
    p1: &Polynomial,
    p2: &Polynomial,
) -> Result<(ConvolutionResult, OpCounts), RingError> {
    check_same(p1, p2)?;
    let m = p1.params.modulus;
    let (coeffs, counts) = convolve_slices(&p1.coeffs, &p2.coeffs, &m);
    Ok((ConvolutionResult { coeffs, modulus: m }, counts))
}

/// Linear convolution of two residue slices of arbitrary lengths.
pub(crate) fn convolve_slices(a: &[u64], b: &[u64], m: &Modulus) -> (Vec<u64>, OpCounts) {
    let mut counts = OpCounts::default();
    if a.is_empty() || b.is_empty() {
        return (Vec::new(), counts);
    }
    let out_len = a.len() + b.len() - 1;
    let mut out = Vec::with_capacity(out_len);
    for k in 0..out_len {
        let lo = k.saturating_sub(b.len() - 1);
        let hi = k.min(a.len() - 1);
        let mut acc = m.mul(a[lo], b[k - lo]);
        counts.muls += 1;
        for i in lo + 1..=hi {
            acc = m.add(acc, m.mul(a[i], b[k - i]));
            counts.muls += 1;
            counts.adds += 1;
        }
        out.push(acc);
    }
    (out, counts)
}

fn fold(
    c: &ConvolutionResult,
    params: &RingParams,
    expected: Reduction,
) -> Result<Polynomial, RingError> {
    if params.reduction != expected {
        return Err(RingError::WrongReduction {
            expected,
            got: params.reduction,
        });
    }
    if c.modulus != params.modulus {
        return Err(RingError::ParamsMismatch);
    }
    let n = params.n;
    if c.coeffs.len() > 2 * n - 1 {
        return Err(RingError::LengthMismatch {
            expected: 2 * n - 1,
            got: c.coeffs.len(),
        });
    }
    let m = params.modulus;
    let mut out = vec![0u64; n];
    for (k, &v) in c.coeffs.iter().enumerate() {
        let slot = &mut out[k % n];
        *slot = if k < n || expected == Reduction::CyclicXnMinus1 {
            m.add(*slot, v)
        } else {
            m.sub(*slot, v)
        };
    }
    Ok(Polynomial::from_reduced(out, *params))
}

/// Applies `x^n = -1`: `r_k = c_k - c_{k+n}`.
pub fn reduce_negacyclic(
    c: &ConvolutionResult,
    params: &RingParams,
) -> Result<Polynomial, RingError> {
    fold(c, params, Reduction::NegacyclicXnPlus1)
}

/// Applies `x^n = 1`: `r_k = c_k + c_{k+n}`.
pub fn reduce_cyclic(c: &ConvolutionResult, params: &RingParams) -> Result<Polynomial, RingError> {
    fold(c, params, Reduction::CyclicXnMinus1)
}

/// Schoolbook product reduced in the operands' own ring.
pub fn schoolbook_ring_mul(p1: &Polynomial, p2: &Polynomial) -> Result<Polynomial, RingError> {
    let c = schoolbook_convolution(p1, p2)?;
    match p1.params.reduction {
        Reduction::NegacyclicXnPlus1 => reduce_negacyclic(&c, &p1.params),
        Reduction::CyclicXnMinus1 => reduce_cyclic(&c, &p1.params),
    }
}

/// Coefficients i.i.d. uniform in `[0, q)` from a ChaCha8 stream seeded by `seed`.
pub fn random_poly(params: RingParams, seed: u64) -> Polynomial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_poly_from(params, &mut rng)
}

pub fn random_poly_from<R: Rng + ?Sized>(params: RingParams, rng: &mut R) -> Polynomial {
    let q = params.modulus.value();
    let coeffs = (0..params.n).map(|_| rng.gen_range(0..q)).collect();
    Polynomial::from_reduced(coeffs, params)
}
