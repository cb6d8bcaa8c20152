//! Polynomial-arithmetic and homomorphic-encryption kernels, a functional
//! simulator of a UPMEM-style processing-in-memory system, and an analytic
//! model of CPU versus in-memory offload cost.
//!
//! Layering, bottom up:
//!
//! - [`modmath`]: word-size modular arithmetic (Barrett), primes, roots of unity.
//! - [`polyring`]: polynomials over `Z_q[x]/(x^n ± 1)` and the schoolbook baseline.
//! - [`ntt`]: cyclic and negacyclic number theoretic transforms.
//! - [`rns`]: residue-number-system towers and double-CRT polynomials.
//! - [`hekernels`]: a small BFV-style scheme built on the layers above.
//! - [`pimsim`]: DPUs with MRAM/WRAM, tasklets and host scatter/launch/gather.
//! - [`costmodel`]: closed-form CPU and PIM time estimates and the α ratio.
//! - [`bench`]: the CSV benchmark harness behind the `pimhe` binary.

pub mod bench;
pub mod costmodel;
pub mod hekernels;
pub mod modmath;
pub mod ntt;
pub mod pimsim;
pub mod polyring;
pub mod rns;

pub use modmath::{Modulus, RootSet};
pub use ntt::TwiddleTable;
pub use polyring::{ConvolutionResult, Polynomial, Reduction, RingParams};
