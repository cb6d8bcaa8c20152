//! Analytic CPU-versus-PIM cost prediction.
//!
//! DPU-side terms use the same partitioning and timing formulas as
//! [`crate::pimsim`] but derive byte and cycle counts in closed form, so
//! [`validate_against_sim`] catches drift between the two. CPU time is
//! `max(ops * cycles / (freq * threads), bytes / dram_bandwidth)`.
//! All constants are calibration knobs, not measurements.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modmath::{generate_ntt_prime, Modulus};
use crate::ntt::TwiddleTable;
use crate::pimsim::{
    dpu_cycles, kernel_time, plan_partition, run_workflow, transfer_time, DpuKernel,
    DpuSystemConfig, PimError, WORD_BYTES,
};

/// Range searched by [`crossover_n`]: `2^4 ..= 2^24`.
pub const CROSSOVER_LOG_RANGE: std::ops::RangeInclusive<u32> = 4..=24;
pub const MAX_VALIDATION_ERROR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("operation {0} has no defined alpha ratio")]
    UnknownOp(String),
    #[error("invalid polynomial size {0}")]
    InvalidSize(usize),
    #[error("no sizes to validate")]
    EmptySizes,
    #[error(transparent)]
    Pim(#[from] PimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Addition,
    CwMul,
    Convolution,
    /// One negacyclic Cooley-Tukey stage (`n / 2` butterflies).
    NttStage,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [
        OpKind::Addition,
        OpKind::CwMul,
        OpKind::Convolution,
        OpKind::NttStage,
    ];
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Addition => "add",
            OpKind::CwMul => "cwmul",
            OpKind::Convolution => "conv",
            OpKind::NttStage => "ntt-stage",
        })
    }
}

impl FromStr for OpKind {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "add" | "addition" => Ok(OpKind::Addition),
            "cwmul" => Ok(OpKind::CwMul),
            "conv" | "convolution" => Ok(OpKind::Convolution),
            "ntt-stage" => Ok(OpKind::NttStage),
            other => Err(CostError::UnknownOp(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub cpu_freq_hz: f64,
    pub cpu_threads: u32,
    pub cpu_cycles_per_add: u64,
    pub cpu_cycles_per_mul: u64,
    pub dram_bandwidth_bytes_per_s: f64,
    #[serde(skip)]
    pub dpu: DpuSystemConfig,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            cpu_freq_hz: 2.4e9,
            cpu_threads: 16,
            cpu_cycles_per_add: 1,
            cpu_cycles_per_mul: 4,
            dram_bandwidth_bytes_per_s: 20e9,
            dpu: DpuSystemConfig::default().with_dpus(1024),
        }
    }
}

impl CostParams {
    pub fn with_dpus(mut self, num_dpus: usize) -> Self {
        self.dpu.num_dpus = num_dpus;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.cpu_freq_hz > 0.0 && self.dram_bandwidth_bytes_per_s > 0.0) {
            return Err("cpu rates must be positive".into());
        }
        if self.cpu_threads == 0 || self.cpu_cycles_per_add == 0 || self.cpu_cycles_per_mul == 0 {
            return Err("cpu thread and cycle counts must be positive".into());
        }
        Ok(())
    }

    fn cpu_time(&self, adds: u128, muls: u128, bytes: u128) -> f64 {
        let cycles =
            adds * self.cpu_cycles_per_add as u128 + muls * self.cpu_cycles_per_mul as u128;
        let compute = cycles as f64 / (self.cpu_freq_hz * self.cpu_threads as f64);
        let memory = if self.dram_bandwidth_bytes_per_s > 0.0 {
            bytes as f64 / self.dram_bandwidth_bytes_per_s
        } else {
            f64::INFINITY
        };
        compute.max(memory)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    Cpu,
    Pim,
}

impl fmt::Display for Winner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Winner::Cpu => "cpu",
            Winner::Pim => "pim",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub cpu_time_s: f64,
    pub dpu_kernel_time_s: f64,
    pub host_dpu_time_s: f64,
    pub dpu_host_time_s: f64,
    /// Launch overhead included in `dpu_kernel_time_s`.
    pub launch_time_s: f64,
    pub alpha: f64,
    pub host_dpu_bytes: u64,
    pub dpu_host_bytes: u64,
}

impl CostEstimate {
    pub fn copy_time(&self) -> f64 {
        self.host_dpu_time_s + self.dpu_host_time_s
    }

    /// Kernel plus both copies.
    pub fn dpu_total(&self) -> f64 {
        self.dpu_kernel_time_s + self.copy_time()
    }

    pub fn winner(&self) -> Winner {
        if self.dpu_total() < self.cpu_time_s {
            Winner::Pim
        } else {
            Winner::Cpu
        }
    }
}

/// On-DPU modular operations per element copied, as an exact fraction.
pub fn alpha_ratio(op: OpKind, n: usize) -> Result<Ratio<u128>, CostError> {
    if n == 0 {
        return Err(CostError::InvalidSize(n));
    }
    let n = n as u128;
    match op {
        OpKind::Addition | OpKind::CwMul => Ok(Ratio::new(1, 3)),
        OpKind::Convolution => Ok(Ratio::new(n * n + (n - 1) * (n - 1), 3 * n)),
        OpKind::NttStage => Err(CostError::UnknownOp(op.to_string())),
    }
}

/// `(adds, muls)` of the host reference implementation.
fn op_counts(op: OpKind, n: u128) -> (u128, u128) {
    match op {
        OpKind::Addition => (n, 0),
        OpKind::CwMul => (0, n),
        OpKind::Convolution => ((n - 1) * (n - 1), n * n),
        OpKind::NttStage => (n, n / 2),
    }
}

pub fn estimate(op: OpKind, n: usize, params: &CostParams) -> Result<CostEstimate, CostError> {
    if n == 0 || (op == OpKind::NttStage && (n < 2 || !n.is_power_of_two())) {
        return Err(CostError::InvalidSize(n));
    }
    let cfg = &params.dpu;
    let w = WORD_BYTES as u64;
    let (total, element_bytes) = match op {
        OpKind::NttStage => (n / 2, 3 * WORD_BYTES),
        _ => (n, WORD_BYTES),
    };
    let plan = plan_partition(total, cfg, element_bytes)?;
    let dpus = plan.num_dpus as u64;
    let nd = plan.per_dpu as u64;
    let nt = plan.per_tasklet as u64;
    let t = plan.tasklets as u64;
    let m = n as u64;
    let (add, mul) = (cfg.add_cycles, cfg.mul_cycles);

    // (words up per DPU, words down per DPU, cycles per tasklet, serial cycles)
    let (up, down, tasklet, serial) = match op {
        OpKind::Addition => (2 * nd, nd, nt * add, 0),
        OpKind::CwMul => (2 * nd, nd, nt * mul, 0),
        OpKind::Convolution => (
            nd + m,
            nd + m - 1,
            nt * m * mul + (nt - 1) * (m - 1) * add,
            (t - 1) * (m - 1) * add,
        ),
        OpKind::NttStage => (3 * nd, 2 * nd, nt * (mul + 2 * add), 0),
    };
    let cycles = dpu_cycles(cfg, &vec![tasklet; plan.tasklets], serial);

    let (adds, muls) = op_counts(op, n as u128);
    let host_bytes = 3 * n as u128 * WORD_BYTES as u128;
    let alpha = match alpha_ratio(op, n) {
        Ok(r) => r.to_f64().unwrap_or(f64::NAN),
        Err(_) => (adds + muls) as f64 / (1.5 * n as f64 + n as f64),
    };
    Ok(CostEstimate {
        cpu_time_s: params.cpu_time(adds, muls, host_bytes),
        dpu_kernel_time_s: kernel_time(cfg, plan.num_dpus, cycles),
        host_dpu_time_s: transfer_time(cfg, plan.num_dpus, up * w),
        dpu_host_time_s: transfer_time(cfg, plan.num_dpus, down * w),
        launch_time_s: cfg.launch_overhead_s * plan.num_dpus as f64,
        alpha,
        host_dpu_bytes: dpus * up * w,
        dpu_host_bytes: dpus * down * w,
    })
}

/// Smallest power-of-two `n` in `2^4 ..= 2^24` at which PIM (with copies)
/// beats the CPU. Sizes the system cannot hold count as CPU wins.
pub fn crossover_n(op: OpKind, params: &CostParams) -> Option<usize> {
    CROSSOVER_LOG_RANGE
        .map(|k| 1usize << k)
        .find(|&n| matches!(estimate(op, n, params), Ok(e) if e.winner() == Winner::Pim))
}

/// Estimates for each DPU count with everything else fixed.
pub fn scaling_sweep(
    op: OpKind,
    n: usize,
    dpus: &[usize],
    params: &CostParams,
) -> Result<Vec<(usize, CostEstimate)>, CostError> {
    dpus.iter()
        .map(|&d| Ok((d, estimate(op, n, &params.clone().with_dpus(d))?)))
        .collect()
}

/// Copy time of a fused offloaded product: both operands up, product down,
/// one round.
pub fn single_shot_copy_time(n: usize, params: &CostParams) -> Result<f64, CostError> {
    Ok(estimate(OpKind::Addition, n, params)?.copy_time())
}

/// Copy time of a forward NTT run as one host round trip per stage.
pub fn staged_ntt_copy_time(n: usize, params: &CostParams) -> Result<f64, CostError> {
    let stage = estimate(OpKind::NttStage, n, params)?;
    Ok(stage.copy_time() * n.trailing_zeros() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub n: usize,
    pub model: CostEstimate,
    pub sim_kernel_time: f64,
    pub sim_host_dpu_time: f64,
    pub sim_dpu_host_time: f64,
    pub bytes_match: bool,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub op: OpKind,
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.max_rel_error() <= MAX_VALIDATION_ERROR && self.rows.iter().all(|r| r.bytes_match)
    }
}

fn rel_error(model: f64, sim: f64) -> f64 {
    if model == sim {
        0.0
    } else {
        (model - sim).abs() / model.abs().max(sim.abs())
    }
}

/// Runs the simulator on random data for each size and compares its ledger
/// with [`estimate`].
pub fn validate_against_sim(
    op: OpKind,
    sizes: &[usize],
    params: &CostParams,
) -> Result<ValidationReport, CostError> {
    if sizes.is_empty() {
        return Err(CostError::EmptySizes);
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let model = estimate(op, n, params)?;
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let (modulus, table) = if op == OpKind::NttStage {
            let q = generate_ntt_prime(30, n, n as u64).map_err(PimError::from)?;
            (q, Some(TwiddleTable::new(n, q).map_err(PimError::Ntt)?))
        } else {
            (Modulus::new((1 << 61) - 1).expect("Mersenne prime"), None)
        };
        let mut draw =
            || -> Vec<u64> { (0..n).map(|_| rng.gen_range(0..modulus.value())).collect() };
        let (a, b) = (draw(), draw());
        let kernel = match op {
            OpKind::Addition => DpuKernel::PolyAdd { modulus },
            OpKind::CwMul => DpuKernel::CwMul { modulus },
            OpKind::Convolution => DpuKernel::Convolution { modulus, n },
            OpKind::NttStage => DpuKernel::butterfly_stage(table.as_ref().expect("ntt table"), 0)?,
        };
        let inputs: Vec<&[u64]> = match op {
            OpKind::NttStage => vec![&a],
            _ => vec![&a, &b],
        };
        let (_, ledger) = run_workflow(&kernel, &inputs, &params.dpu)?;
        let max_rel_error = [
            rel_error(model.dpu_kernel_time_s, ledger.kernel_time),
            rel_error(model.host_dpu_time_s, ledger.host_dpu_time),
            rel_error(model.dpu_host_time_s, ledger.dpu_host_time),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        rows.push(ValidationRow {
            n,
            model,
            sim_kernel_time: ledger.kernel_time,
            sim_host_dpu_time: ledger.host_dpu_time,
            sim_dpu_host_time: ledger.dpu_host_time,
            bytes_match: ledger.host_dpu_bytes == model.host_dpu_bytes
                && ledger.dpu_host_bytes == model.dpu_host_bytes,
            max_rel_error,
        });
    }
    Ok(ValidationReport { op, rows })
}

/// Human-readable breakdown of the model for one operation and size.
pub fn explain(op: OpKind, n: usize, params: &CostParams) -> Result<String, CostError> {
    let e = estimate(op, n, params)?;
    let mut s = String::new();
    let alpha = match alpha_ratio(op, n) {
        Ok(r) => format!("{r} (~{:.4})", e.alpha),
        Err(_) => format!("{:.4}", e.alpha),
    };
    let _ = writeln!(s, "op: {op}");
    let _ = writeln!(s, "n: {n}");
    let _ = writeln!(s, "dpus: {}", params.dpu.num_dpus);
    let _ = writeln!(s, "tasklets: {}", params.dpu.tasklets_per_dpu);
    let _ = writeln!(s, "alpha: {alpha}");
    let _ = writeln!(s, "cpu_time: {:.6e} s", e.cpu_time_s);
    let _ = writeln!(s, "dpu_kernel_time: {:.6e} s", e.dpu_kernel_time_s);
    let _ = writeln!(s, "  launch_overhead: {:.6e} s", e.launch_time_s);
    let _ = writeln!(
        s,
        "host_dpu_time: {:.6e} s ({} bytes)",
        e.host_dpu_time_s, e.host_dpu_bytes
    );
    let _ = writeln!(
        s,
        "dpu_host_time: {:.6e} s ({} bytes)",
        e.dpu_host_time_s, e.dpu_host_bytes
    );
    let _ = writeln!(s, "dpu_total: {:.6e} s", e.dpu_total());
    let _ = writeln!(s, "winner: {}", e.winner());
    let _ = match crossover_n(op, params) {
        Some(c) => writeln!(s, "crossover_n: {c}"),
        None => writeln!(s, "crossover_n: none"),
    };
    Ok(s)
}
