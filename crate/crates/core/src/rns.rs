//! Residue number system over word-size NTT primes and the double-CRT
//! polynomial representation built on it.
//!
//! A large modulus `Q = q_0 * ... * q_{k-1}` is handled as `k` independent
//! towers; every tower-wise operation runs on its own rayon task and produces
//! the same result as a sequential loop.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::modmath::{generate_ntt_primes, ModMathError, Modulus};
use crate::ntt::{fast_negacyclic_mul, NttError, TwiddleTable};
use crate::polyring::{poly_add, Polynomial, RingError, RingParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RnsError {
    #[error("an RNS basis needs at least one tower")]
    EmptyBasis,
    #[error("modulus {0} appears more than once in the basis")]
    DuplicateModulus(u64),
    #[error("coefficient at index {index} is not below the basis product")]
    CoefficientOutOfRange { index: usize },
    #[error("operand towers do not match the basis")]
    BasisMismatch,
    #[error("expected {expected} twiddle tables, got {got}")]
    TableCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Math(#[from] ModMathError),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Ntt(#[from] NttError),
}

/// Pairwise-distinct prime towers with precomputed Garner constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnsBasis {
    towers: Vec<Modulus>,
    big_q: BigUint,
    /// `q_0 * ... * q_{i-1}` as a big integer (1 for `i = 0`).
    radix: Vec<BigUint>,
    /// Row `i`: `q_0 * ... * q_{j-1} mod q_i` for `j < i`.
    radix_mod: Vec<Vec<u64>>,
    /// `(q_0 * ... * q_{i-1})^-1 mod q_i`.
    radix_inv: Vec<u64>,
}

impl RnsBasis {
    pub fn new(towers: Vec<Modulus>) -> Result<Self, RnsError> {
        if towers.is_empty() {
            return Err(RnsError::EmptyBasis);
        }
        for (i, q) in towers.iter().enumerate() {
            if towers[..i].contains(q) {
                return Err(RnsError::DuplicateModulus(q.value()));
            }
        }
        let mut radix = Vec::with_capacity(towers.len());
        let mut acc = BigUint::from(1u32);
        for q in &towers {
            radix.push(acc.clone());
            acc *= q.value();
        }
        let mut radix_mod = Vec::with_capacity(towers.len());
        let mut radix_inv = Vec::with_capacity(towers.len());
        for (i, qi) in towers.iter().enumerate() {
            let mut row = Vec::with_capacity(i);
            let mut prod = 1 % qi.value();
            for qj in &towers[..i] {
                row.push(prod);
                prod = qi.mul(prod, qi.reduce(qj.value()));
            }
            radix_inv.push(if i == 0 {
                1 % qi.value()
            } else {
                qi.inv(prod)?
            });
            radix_mod.push(row);
        }
        Ok(Self {
            towers,
            big_q: acc,
            radix,
            radix_mod,
            radix_inv,
        })
    }

    #[inline]
    pub fn towers(&self) -> &[Modulus] {
        &self.towers
    }

    /// Number of towers `k`.
    #[inline]
    pub fn len(&self) -> usize {
        self.towers.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.towers.is_empty()
    }

    /// `Q`, the product of all towers.
    #[inline]
    pub fn big_q(&self) -> &BigUint {
        &self.big_q
    }

    /// True when every tower supports a length-`n` negacyclic NTT.
    pub fn is_ntt_friendly(&self, n: usize) -> bool {
        self.towers
            .iter()
            .all(|q| (q.value() - 1) % (2 * n as u64) == 0)
    }

    /// Residues of `x` in every tower.
    pub fn decompose_scalar(&self, x: &BigUint) -> Result<Vec<u64>, RnsError> {
        if x >= &self.big_q {
            return Err(RnsError::CoefficientOutOfRange { index: 0 });
        }
        Ok(self.residues(x))
    }

    fn residues(&self, x: &BigUint) -> Vec<u64> {
        self.towers
            .iter()
            .map(|q| (x % q.value()).to_u64().expect("residue fits a word"))
            .collect()
    }

    /// Garner's mixed-radix reconstruction of the unique `x < Q`.
    pub fn reconstruct_scalar(&self, residues: &[u64]) -> Result<BigUint, RnsError> {
        if residues.len() != self.len() {
            return Err(RnsError::BasisMismatch);
        }
        let mut digits = Vec::with_capacity(self.len());
        for (i, (qi, &r)) in self.towers.iter().zip(residues).enumerate() {
            if r >= qi.value() {
                return Err(RnsError::BasisMismatch);
            }
            let partial = digits
                .iter()
                .zip(&self.radix_mod[i])
                .fold(0u64, |acc, (&v, &w): (&u64, &u64)| {
                    qi.add(acc, qi.mul(qi.reduce(v), w))
                });
            digits.push(qi.mul(qi.sub(r, partial), self.radix_inv[i]));
        }
        Ok(digits
            .iter()
            .zip(&self.radix)
            .fold(BigUint::zero(), |acc, (&v, w)| acc + w * v))
    }
}

/// `k` distinct `bit_width`-bit primes `q_i = 1 mod 2n`, chosen from `seed`.
pub fn build_basis(k: usize, bit_width: u32, n: usize, seed: u64) -> Result<RnsBasis, RnsError> {
    if k == 0 {
        return Err(RnsError::EmptyBasis);
    }
    RnsBasis::new(generate_ntt_primes(bit_width, n, k, seed)?)
}

/// A polynomial modulo `Q` stored as one negacyclic polynomial per tower.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DcrtPolynomial {
    towers: Vec<Polynomial>,
}

impl DcrtPolynomial {
    pub fn from_towers(towers: Vec<Polynomial>) -> Result<Self, RnsError> {
        let first = towers.first().ok_or(RnsError::EmptyBasis)?;
        if towers.iter().any(|t| t.n() != first.n()) {
            return Err(RnsError::BasisMismatch);
        }
        Ok(Self { towers })
    }

    pub fn zero(n: usize, basis: &RnsBasis) -> Result<Self, RnsError> {
        let towers = basis
            .towers()
            .iter()
            .map(|&q| Ok(Polynomial::zero(RingParams::negacyclic(n, q)?)))
            .collect::<Result<Vec<_>, RnsError>>()?;
        Ok(Self { towers })
    }

    #[inline]
    pub fn towers(&self) -> &[Polynomial] {
        &self.towers
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.towers[0].n()
    }

    fn matches(&self, basis: &RnsBasis) -> bool {
        self.towers.len() == basis.len()
            && self
                .towers
                .iter()
                .zip(basis.towers())
                .all(|(t, q)| t.modulus() == *q)
    }
}

/// Splits big-integer coefficients `< Q` into per-tower residues.
pub fn decompose(coeffs: &[BigUint], basis: &RnsBasis) -> Result<DcrtPolynomial, RnsError> {
    if let Some(index) = coeffs.iter().position(|c| c >= basis.big_q()) {
        return Err(RnsError::CoefficientOutOfRange { index });
    }
    let n = coeffs.len();
    let per_coeff: Vec<Vec<u64>> = coeffs.par_iter().map(|c| basis.residues(c)).collect();
    let towers = basis
        .towers()
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let params = RingParams::negacyclic(n, q)?;
            Ok(Polynomial::from_reduced(
                per_coeff.iter().map(|r| r[i]).collect(),
                params,
            ))
        })
        .collect::<Result<Vec<_>, RnsError>>()?;
    Ok(DcrtPolynomial { towers })
}

/// Inverse of [`decompose`].
pub fn reconstruct(p: &DcrtPolynomial, basis: &RnsBasis) -> Result<Vec<BigUint>, RnsError> {
    if !p.matches(basis) {
        return Err(RnsError::BasisMismatch);
    }
    (0..p.n())
        .into_par_iter()
        .map(|j| {
            let residues: Vec<u64> = p.towers.iter().map(|t| t.coeffs()[j]).collect();
            basis.reconstruct_scalar(&residues)
        })
        .collect()
}

fn check_pair(p1: &DcrtPolynomial, p2: &DcrtPolynomial) -> Result<(), RnsError> {
    if p1.towers.len() != p2.towers.len()
        || p1
            .towers
            .iter()
            .zip(&p2.towers)
            .any(|(a, b)| a.params() != b.params())
    {
        return Err(RnsError::BasisMismatch);
    }
    Ok(())
}

/// Tower-wise addition modulo `Q`.
pub fn dcrt_add(p1: &DcrtPolynomial, p2: &DcrtPolynomial) -> Result<DcrtPolynomial, RnsError> {
    check_pair(p1, p2)?;
    let towers = p1
        .towers
        .par_iter()
        .zip(&p2.towers)
        .map(|(a, b)| poly_add(a, b).map_err(RnsError::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DcrtPolynomial { towers })
}

/// Tower-wise negacyclic product; `tables[i]` must belong to tower `i`.
pub fn dcrt_mul(
    p1: &DcrtPolynomial,
    p2: &DcrtPolynomial,
    tables: &[TwiddleTable],
) -> Result<DcrtPolynomial, RnsError> {
    check_pair(p1, p2)?;
    if tables.len() != p1.towers.len() {
        return Err(RnsError::TableCountMismatch {
            expected: p1.towers.len(),
            got: tables.len(),
        });
    }
    let towers = p1
        .towers
        .par_iter()
        .zip(&p2.towers)
        .zip(tables)
        .map(|((a, b), t)| fast_negacyclic_mul(a, b, t).map_err(RnsError::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DcrtPolynomial { towers })
}

/// One twiddle table per tower for ring dimension `n`.
pub fn tower_tables(basis: &RnsBasis, n: usize) -> Result<Vec<TwiddleTable>, RnsError> {
    basis
        .towers()
        .par_iter()
        .map(|&q| TwiddleTable::new(n, q).map_err(RnsError::from))
        .collect()
}
