//! Number theoretic transforms over `Z_q`.
//!
//! Forward transforms use Cooley-Tukey butterflies on natural-order input and
//! leave the spectrum in bit-reversed order; inverse transforms use
//! Gentleman-Sande butterflies on bit-reversed input and return natural order.
//! Ring multiplication therefore never needs an explicit permutation. The
//! public `ntt_*` functions apply one so their outputs match the textbook
//! sums index for index.

use thiserror::Error;

use crate::modmath::{find_roots, ModMathError, Modulus, RootSet};
use crate::polyring::{cw_mul, Polynomial, Reduction, RingError};

type InPlace = fn(&TwiddleTable, &mut [u64]);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NttError {
    #[error("dimension mismatch: table has n = {expected}, operand has n = {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operand modulus differs from the twiddle table modulus")]
    ModulusMismatch,
    #[error("stage {stage} out of range for {stages} stages")]
    StageOutOfRange { stage: usize, stages: usize },
    #[error(transparent)]
    Math(#[from] ModMathError),
    #[error(transparent)]
    Ring(#[from] RingError),
}

/// Reverses the low `bits` bits of `i`.
#[inline]
pub fn bit_reverse(i: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        i.reverse_bits() >> (usize::BITS - bits)
    }
}

/// In-place bit-reversal permutation of a power-of-two length slice.
pub fn bit_reverse_permute<T>(a: &mut [T]) {
    let bits = a.len().trailing_zeros();
    for i in 0..a.len() {
        let j = bit_reverse(i, bits);
        if i < j {
            a.swap(i, j);
        }
    }
}

/// Cooley-Tukey butterfly: `(u + w*v, u - w*v)`.
#[inline]
pub fn butterfly_ct(u: u64, v: u64, w: u64, m: &Modulus) -> (u64, u64) {
    let wv = m.mul(w, v);
    (m.add(u, wv), m.sub(u, wv))
}

/// Gentleman-Sande butterfly: `(u + v, (u - v)*w)`.
#[inline]
pub fn butterfly_gs(u: u64, v: u64, w: u64, m: &Modulus) -> (u64, u64) {
    (m.add(u, v), m.mul(m.sub(u, v), w))
}

/// Precomputed powers of the roots of unity for one `(n, q)` pair.
///
/// Negacyclic tables hold `psi^brv(k)` and `psi^-brv(k)`; cyclic tables hold,
/// at index `m + i` for stage width `m`, the power of `omega` that splits
/// group `i` of that stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwiddleTable {
    roots: RootSet,
    log_n: u32,
    forward: Vec<u64>,
    inverse: Vec<u64>,
    cyclic_forward: Vec<u64>,
    cyclic_inverse: Vec<u64>,
}

impl TwiddleTable {
    pub fn new(n: usize, modulus: Modulus) -> Result<Self, NttError> {
        let roots = find_roots(n, &modulus)?;
        Ok(Self::from_roots(roots))
    }

    pub fn from_roots(roots: RootSet) -> Self {
        let n = roots.n;
        let m = roots.modulus;
        let log_n = n.trailing_zeros();
        let powers = |base: u64| {
            let mut p = Vec::with_capacity(n);
            let mut acc = 1u64;
            for _ in 0..n {
                p.push(acc);
                acc = m.mul(acc, base);
            }
            p
        };
        let psi_pow = powers(roots.psi);
        let psi_inv_pow = powers(roots.psi_inv);
        let forward = (0..n).map(|k| psi_pow[bit_reverse(k, log_n)]).collect();
        let inverse = (0..n).map(|k| psi_inv_pow[bit_reverse(k, log_n)]).collect();

        // omega^((n / 2m) * brv_s(i)) = psi^((n / m) * brv_s(i)) for m = 2^s.
        let mut cyclic_forward = vec![1u64; n];
        let mut cyclic_inverse = vec![1u64; n];
        let mut width = 1usize;
        let mut s = 0u32;
        while width < n {
            for i in 0..width {
                let e = (n / width) * bit_reverse(i, s);
                cyclic_forward[width + i] = psi_pow[e];
                cyclic_inverse[width + i] = psi_inv_pow[e];
            }
            width *= 2;
            s += 1;
        }
        Self {
            roots,
            log_n,
            forward,
            inverse,
            cyclic_forward,
            cyclic_inverse,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.roots.n
    }

    #[inline]
    pub fn log_n(&self) -> u32 {
        self.log_n
    }

    #[inline]
    pub fn modulus(&self) -> Modulus {
        self.roots.modulus
    }

    #[inline]
    pub fn roots(&self) -> &RootSet {
        &self.roots
    }

    /// `psi^brv(k)`; entry 0 is 1.
    pub fn forward_twiddles(&self) -> &[u64] {
        &self.forward
    }

    /// `psi^-brv(k)`.
    pub fn inverse_twiddles(&self) -> &[u64] {
        &self.inverse
    }

    fn check(&self, p: &Polynomial) -> Result<(), NttError> {
        if p.n() != self.n() {
            return Err(NttError::DimensionMismatch {
                expected: self.n(),
                got: p.n(),
            });
        }
        if p.modulus() != self.modulus() {
            return Err(NttError::ModulusMismatch);
        }
        Ok(())
    }

    fn ct_pass(&self, a: &mut [u64], table: &[u64]) {
        debug_assert_eq!(a.len(), self.n());
        let m = self.modulus();
        let n = a.len();
        let mut groups = 1;
        let mut half = n;
        while groups < n {
            half /= 2;
            for i in 0..groups {
                let w = table[groups + i];
                let base = 2 * i * half;
                for j in base..base + half {
                    let (x, y) = butterfly_ct(a[j], a[j + half], w, &m);
                    a[j] = x;
                    a[j + half] = y;
                }
            }
            groups *= 2;
        }
    }

    fn gs_pass(&self, a: &mut [u64], table: &[u64]) {
        debug_assert_eq!(a.len(), self.n());
        let m = self.modulus();
        let n = a.len();
        let n_inv = self.roots.n_inv;
        let mut half = 1;
        let mut groups = n / 2;
        while groups >= 1 {
            let last = groups == 1;
            for i in 0..groups {
                let mut w = table[groups + i];
                if last {
                    w = m.mul(w, n_inv);
                }
                let base = 2 * i * half;
                for j in base..base + half {
                    let (x, y) = butterfly_gs(a[j], a[j + half], w, &m);
                    a[j] = if last { m.mul(x, n_inv) } else { x };
                    a[j + half] = y;
                }
            }
            half *= 2;
            groups /= 2;
        }
    }

    /// Negacyclic forward transform, natural order in, bit-reversed out.
    pub fn forward_negacyclic_in_place(&self, a: &mut [u64]) {
        self.ct_pass(a, &self.forward);
    }

    /// Negacyclic inverse transform, bit-reversed in, natural order out.
    pub fn inverse_negacyclic_in_place(&self, a: &mut [u64]) {
        self.gs_pass(a, &self.inverse);
    }

    pub fn forward_cyclic_in_place(&self, a: &mut [u64]) {
        self.ct_pass(a, &self.cyclic_forward);
    }

    pub fn inverse_cyclic_in_place(&self, a: &mut [u64]) {
        self.gs_pass(a, &self.cyclic_inverse);
    }

    /// Butterfly `b` of negacyclic stage `stage`: `(top, bottom, twiddle)`.
    ///
    /// Stage `s` has `2^s` groups of `n / 2^(s+1)` butterflies each; the
    /// partner distance halves from one stage to the next.
    #[inline]
    pub fn stage_butterfly(&self, stage: u32, b: usize) -> (usize, usize, u64) {
        let groups = 1usize << stage;
        let half = self.n() >> (stage + 1);
        let group = b / half;
        let top = 2 * group * half + b % half;
        (top, top + half, self.forward[groups + group])
    }

    /// Runs one negacyclic Cooley-Tukey stage in place and returns the
    /// number of butterflies performed.
    pub fn ct_stage_in_place(&self, a: &mut [u64], stage: u32) -> Result<usize, NttError> {
        if a.len() != self.n() {
            return Err(NttError::DimensionMismatch {
                expected: self.n(),
                got: a.len(),
            });
        }
        if stage >= self.log_n {
            return Err(NttError::StageOutOfRange {
                stage: stage as usize,
                stages: self.log_n as usize,
            });
        }
        let m = self.modulus();
        let count = self.n() / 2;
        for b in 0..count {
            let (top, bottom, w) = self.stage_butterfly(stage, b);
            let (x, y) = butterfly_ct(a[top], a[bottom], w, &m);
            a[top] = x;
            a[bottom] = y;
        }
        Ok(count)
    }
}

fn transformed(
    a: &Polynomial,
    t: &TwiddleTable,
    f: impl FnOnce(&TwiddleTable, &mut [u64]),
) -> Result<Polynomial, NttError> {
    t.check(a)?;
    let mut c = a.coeffs().to_vec();
    f(t, &mut c);
    Ok(Polynomial::from_reduced(c, *a.params()))
}

/// `a_hat_j = sum_i omega^(ij) a_i`, natural order.
pub fn ntt_forward(a: &Polynomial, t: &TwiddleTable) -> Result<Polynomial, NttError> {
    transformed(a, t, |t, c| {
        t.forward_cyclic_in_place(c);
        bit_reverse_permute(c);
    })
}

/// `a_i = n^-1 sum_j omega^(-ij) a_hat_j`.
pub fn ntt_inverse(a_hat: &Polynomial, t: &TwiddleTable) -> Result<Polynomial, NttError> {
    transformed(a_hat, t, |t, c| {
        bit_reverse_permute(c);
        t.inverse_cyclic_in_place(c);
    })
}

/// `a_hat_j = sum_i psi^(2ij + i) a_i`, natural order.
pub fn ntt_forward_nwc(a: &Polynomial, t: &TwiddleTable) -> Result<Polynomial, NttError> {
    transformed(a, t, |t, c| {
        t.forward_negacyclic_in_place(c);
        bit_reverse_permute(c);
    })
}

/// `a_i = n^-1 sum_j psi^-(2ij + i) a_hat_j`.
pub fn ntt_inverse_nwc(a_hat: &Polynomial, t: &TwiddleTable) -> Result<Polynomial, NttError> {
    transformed(a_hat, t, |t, c| {
        bit_reverse_permute(c);
        t.inverse_negacyclic_in_place(c);
    })
}

/// Applies negacyclic Cooley-Tukey stage `stage` (`n / 2` butterflies).
///
/// Running stages `0..log2(n)` on natural-order input yields the negacyclic
/// spectrum in bit-reversed order.
pub fn ct_iteration(
    state: &Polynomial,
    stage: usize,
    t: &TwiddleTable,
) -> Result<Polynomial, NttError> {
    t.check(state)?;
    let stage = u32::try_from(stage).map_err(|_| NttError::StageOutOfRange {
        stage,
        stages: t.log_n as usize,
    })?;
    let mut c = state.coeffs().to_vec();
    t.ct_stage_in_place(&mut c, stage)?;
    Ok(Polynomial::from_reduced(c, *state.params()))
}

fn fast_mul(
    p1: &Polynomial,
    p2: &Polynomial,
    t: &TwiddleTable,
    reduction: Reduction,
) -> Result<Polynomial, NttError> {
    if p1.params() != p2.params() {
        return Err(RingError::ParamsMismatch.into());
    }
    if p1.params().reduction() != reduction {
        return Err(RingError::WrongReduction {
            expected: reduction,
            got: p1.params().reduction(),
        }
        .into());
    }
    t.check(p1)?;
    let (fwd, inv): (InPlace, InPlace) = match reduction {
        Reduction::NegacyclicXnPlus1 => (
            TwiddleTable::forward_negacyclic_in_place,
            TwiddleTable::inverse_negacyclic_in_place,
        ),
        Reduction::CyclicXnMinus1 => (
            TwiddleTable::forward_cyclic_in_place,
            TwiddleTable::inverse_cyclic_in_place,
        ),
    };
    let mut a = p1.coeffs().to_vec();
    let mut b = p2.coeffs().to_vec();
    fwd(t, &mut a);
    fwd(t, &mut b);
    let params = *p1.params();
    let mut c = cw_mul(
        &Polynomial::from_reduced(a, params),
        &Polynomial::from_reduced(b, params),
    )?
    .into_coeffs();
    inv(t, &mut c);
    Ok(Polynomial::from_reduced(c, params))
}

/// Product in `Z_q[x]/(x^n + 1)` via `INTT(NTT(a) ⊙ NTT(b))`.
pub fn fast_negacyclic_mul(
    p1: &Polynomial,
    p2: &Polynomial,
    t: &TwiddleTable,
) -> Result<Polynomial, NttError> {
    fast_mul(p1, p2, t, Reduction::NegacyclicXnPlus1)
}

/// Product in `Z_q[x]/(x^n - 1)`.
pub fn fast_cyclic_mul(
    p1: &Polynomial,
    p2: &Polynomial,
    t: &TwiddleTable,
) -> Result<Polynomial, NttError> {
    fast_mul(p1, p2, t, Reduction::CyclicXnMinus1)
}
