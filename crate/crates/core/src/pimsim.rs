//! Functional and cost-accounting model of a UPMEM-style PIM system.
//!
//! The host partitions data across DPUs, copies it into each DPU's MRAM,
//! launches an SPMD kernel on every DPU and copies results back. Kernels
//! compute real values so results can be compared bit-for-bit with the
//! host reference, while a [`TransferLedger`] accumulates modeled times:
//!
//! * transfers: `latency * transfers + max_per_dpu_bytes / bandwidth`
//! * kernels: `launch_overhead * launched_dpus + max_per_dpu_cycles / freq`
//!
//! Per-DPU cycles are `max(sum of tasklet cycles, depth * max tasklet
//! cycles)` plus `depth` cycles per instruction of any single-tasklet phase:
//! tasklets share one pipeline of `pipeline_depth` stages and a single
//! tasklet issues at most once per pass.

use std::ops::RangeInclusive;

use num_integer::Integer;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hekernels::{HeError, PolyBackend};
use crate::modmath::{ModMathError, Modulus};
use crate::ntt::{butterfly_ct, NttError, TwiddleTable};
use crate::polyring::{Polynomial, RingError};

pub const WORD_BYTES: usize = 8;
pub const MAX_TASKLETS: usize = 24;
pub const RECOMMENDED_MIN_TASKLETS: usize = 11;

type ElementOp = fn(&Modulus, u64, u64) -> u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PimError {
    #[error("invalid system configuration: {0}")]
    InvalidConfig(String),
    #[error("nothing to partition")]
    EmptyInput,
    #[error("{total} elements do not split evenly over {num_dpus} DPUs x {tasklets} tasklets")]
    IndivisibleError {
        total: usize,
        num_dpus: usize,
        tasklets: usize,
    },
    #[error("transfer at byte offset {offset} of length {len} is not 8-byte aligned")]
    AlignmentError { offset: usize, len: usize },
    #[error("DPU {dpu} needs {required} bytes of MRAM, capacity is {capacity}")]
    MramOverflow {
        dpu: usize,
        required: u64,
        capacity: u64,
    },
    #[error("tasklet working set of {required} bytes exceeds its WRAM share of {available}")]
    KernelPanic { required: u64, available: u64 },
    #[error("DPU {dpu} holds no data for this step")]
    UnloadedData { dpu: usize },
    #[error("DPU index {dpu} out of range for {num_dpus} DPUs")]
    NoSuchDpu { dpu: usize, num_dpus: usize },
    #[error("expected {expected} buffers, got {got}")]
    BufferCountMismatch { expected: usize, got: usize },
    #[error("invalid kernel input: {0}")]
    InputMismatch(String),
    #[error(transparent)]
    Math(#[from] ModMathError),
    #[error(transparent)]
    Ntt(#[from] NttError),
}

/// Hardware and timing parameters of the simulated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpuSystemConfig {
    pub num_dpus: usize,
    pub tasklets_per_dpu: usize,
    pub mram_bytes: u64,
    pub wram_bytes: u64,
    pub dpu_freq_hz: f64,
    pub per_dpu_bandwidth_bytes_per_s: f64,
    pub per_transfer_latency_s: f64,
    /// Charged once per DPU taking part in a launch.
    pub launch_overhead_s: f64,
    pub add_cycles: u64,
    /// Wide multiplies are emulated in software on the DPU.
    pub mul_cycles: u64,
    pub pipeline_depth: u64,
    /// Zero-pad inputs that do not split evenly instead of rejecting them.
    pub padding: bool,
}

impl Default for DpuSystemConfig {
    fn default() -> Self {
        Self {
            num_dpus: 64,
            tasklets_per_dpu: 16,
            mram_bytes: 64 << 20,
            wram_bytes: 64 << 10,
            dpu_freq_hz: 350e6,
            per_dpu_bandwidth_bytes_per_s: 1e9,
            per_transfer_latency_s: 5e-6,
            launch_overhead_s: 20e-9,
            add_cycles: 1,
            mul_cycles: 8,
            pipeline_depth: 11,
            padding: true,
        }
    }
}

impl DpuSystemConfig {
    pub fn with_dpus(mut self, num_dpus: usize) -> Self {
        self.num_dpus = num_dpus;
        self
    }

    pub fn with_tasklets(mut self, tasklets: usize) -> Self {
        self.tasklets_per_dpu = tasklets;
        self
    }

    pub fn with_padding(mut self, padding: bool) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<(), PimError> {
        let bad = |m: &str| Err(PimError::InvalidConfig(m.to_string()));
        if self.num_dpus == 0 {
            return bad("num_dpus must be positive");
        }
        if !(1..=MAX_TASKLETS).contains(&self.tasklets_per_dpu) {
            return bad("tasklets_per_dpu must be in 1..=24");
        }
        if self.mram_bytes == 0 || self.wram_bytes == 0 {
            return bad("memory capacities must be positive");
        }
        if !(self.dpu_freq_hz.is_finite() && self.dpu_freq_hz > 0.0) {
            return bad("dpu_freq_hz must be positive");
        }
        if self.per_dpu_bandwidth_bytes_per_s.is_nan() || self.per_dpu_bandwidth_bytes_per_s <= 0.0
        {
            return bad("per_dpu_bandwidth_bytes_per_s must be positive");
        }
        if !(self.per_transfer_latency_s >= 0.0 && self.launch_overhead_s >= 0.0) {
            return bad("latencies must be non-negative");
        }
        if self.add_cycles == 0 || self.mul_cycles == 0 || self.pipeline_depth == 0 {
            return bad("cycle costs must be positive");
        }
        Ok(())
    }

    /// Advisory findings that do not prevent simulation.
    pub fn lint(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.tasklets_per_dpu < RECOMMENDED_MIN_TASKLETS {
            out.push(format!(
                "{} tasklets cannot keep the {}-stage pipeline full; use at least {}",
                self.tasklets_per_dpu, self.pipeline_depth, RECOMMENDED_MIN_TASKLETS
            ));
        }
        out
    }
}

/// `latency * transfers + max_bytes / bandwidth`; infinite for zero bandwidth.
pub fn transfer_time(cfg: &DpuSystemConfig, transfers: usize, max_bytes: u64) -> f64 {
    let stream = if max_bytes == 0 {
        0.0
    } else if cfg.per_dpu_bandwidth_bytes_per_s > 0.0 {
        max_bytes as f64 / cfg.per_dpu_bandwidth_bytes_per_s
    } else {
        f64::INFINITY
    };
    cfg.per_transfer_latency_s * transfers as f64 + stream
}

/// `launch_overhead * launched + max_cycles / freq`.
pub fn kernel_time(cfg: &DpuSystemConfig, launched: usize, max_cycles: u64) -> f64 {
    cfg.launch_overhead_s * launched as f64 + max_cycles as f64 / cfg.dpu_freq_hz
}

/// Cycles of one DPU given per-tasklet cycle counts of the parallel phase
/// and the cycle count of a trailing single-tasklet phase.
pub fn dpu_cycles(cfg: &DpuSystemConfig, tasklet_cycles: &[u64], serial_cycles: u64) -> u64 {
    let sum: u64 = tasklet_cycles.iter().sum();
    let max = tasklet_cycles.iter().copied().max().unwrap_or(0);
    sum.max(cfg.pipeline_depth * max) + cfg.pipeline_depth * serial_cycles
}

/// Split of `total` elements: `N_D` per DPU, `N_T` per tasklet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionPlan {
    pub total_elements: usize,
    /// `total_elements` rounded up by padding; equal to it otherwise.
    pub padded_elements: usize,
    pub num_dpus: usize,
    pub tasklets: usize,
    pub per_dpu: usize,
    pub per_tasklet: usize,
    pub element_bytes: usize,
}

impl PartitionPlan {
    /// `[i*N_D, (i+1)*N_D - 1]`.
    pub fn dpu_range(&self, i: usize) -> RangeInclusive<usize> {
        let start = i * self.per_dpu;
        start..=start + self.per_dpu - 1
    }

    /// `[i*N_D + j*N_T, i*N_D + (j+1)*N_T - 1]`.
    pub fn tasklet_range(&self, i: usize, j: usize) -> RangeInclusive<usize> {
        let start = i * self.per_dpu + j * self.per_tasklet;
        start..=start + self.per_tasklet - 1
    }

    /// Every `(dpu, tasklet, range)` in index order.
    pub fn ranges(&self) -> impl Iterator<Item = (usize, usize, RangeInclusive<usize>)> + '_ {
        (0..self.num_dpus)
            .flat_map(move |i| (0..self.tasklets).map(move |j| (i, j, self.tasklet_range(i, j))))
    }

    pub fn is_padded(&self) -> bool {
        self.padded_elements != self.total_elements
    }
}

pub fn plan_partition(
    total: usize,
    cfg: &DpuSystemConfig,
    element_bytes: usize,
) -> Result<PartitionPlan, PimError> {
    cfg.validate()?;
    if total == 0 {
        return Err(PimError::EmptyInput);
    }
    if element_bytes == 0 {
        return Err(PimError::InvalidConfig(
            "element_bytes must be positive".into(),
        ));
    }
    let (n, t) = (cfg.num_dpus, cfg.tasklets_per_dpu);
    let units = n * t;
    // Each tasklet extent N_T * element_bytes must be a multiple of 8.
    let align = WORD_BYTES / element_bytes.gcd(&WORD_BYTES);
    let padded = if !total.is_multiple_of(units) || !(total / units).is_multiple_of(align) {
        if !cfg.padding {
            if !total.is_multiple_of(units) {
                return Err(PimError::IndivisibleError {
                    total,
                    num_dpus: n,
                    tasklets: t,
                });
            }
            return Err(PimError::AlignmentError {
                offset: 0,
                len: total / units * element_bytes,
            });
        }
        total.next_multiple_of(units * align)
    } else {
        total
    };
    let per_dpu = padded / n;
    let required = (per_dpu * element_bytes) as u64;
    if required > cfg.mram_bytes {
        return Err(PimError::MramOverflow {
            dpu: 0,
            required,
            capacity: cfg.mram_bytes,
        });
    }
    Ok(PartitionPlan {
        total_elements: total,
        padded_elements: padded,
        num_dpus: n,
        tasklets: t,
        per_dpu,
        per_tasklet: per_dpu / t,
        element_bytes,
    })
}

/// Modeled traffic and time of a session.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TransferLedger {
    pub host_dpu_bytes: u64,
    pub dpu_host_bytes: u64,
    pub host_dpu_time: f64,
    pub dpu_host_time: f64,
    pub kernel_time: f64,
    /// Portion of `kernel_time` spent on launch overhead.
    pub launch_time: f64,
    pub launches: u64,
    pub scatters: u64,
    pub gathers: u64,
}

impl TransferLedger {
    pub fn copy_time(&self) -> f64 {
        self.host_dpu_time + self.dpu_host_time
    }

    pub fn total_time(&self) -> f64 {
        self.copy_time() + self.kernel_time
    }

    pub fn absorb(&mut self, other: &TransferLedger) {
        self.host_dpu_bytes += other.host_dpu_bytes;
        self.dpu_host_bytes += other.dpu_host_bytes;
        self.host_dpu_time += other.host_dpu_time;
        self.dpu_host_time += other.dpu_host_time;
        self.kernel_time += other.kernel_time;
        self.launch_time += other.launch_time;
        self.launches += other.launches;
        self.scatters += other.scatters;
        self.gathers += other.gathers;
    }
}

/// Program run by every DPU on its own partition.
///
/// MRAM layouts, in 8-byte words from offset 0:
/// * `PolyAdd`, `CwMul`: `[a_i; N_D] [b_i; N_D]`, result `N_D`.
/// * `Convolution`: `[a_i; N_D] [b; n]`, result `N_D + n - 1` partial sums.
/// * `ButterflyStage`: `N_D` triples `(u, v, w)`, result `N_D` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DpuKernel {
    PolyAdd {
        modulus: Modulus,
    },
    CwMul {
        modulus: Modulus,
    },
    Convolution {
        modulus: Modulus,
        n: usize,
    },
    /// Negacyclic Cooley-Tukey stage; `twiddles[g]` serves butterfly group `g`.
    ButterflyStage {
        modulus: Modulus,
        stage: u32,
        twiddles: Vec<u64>,
    },
}

impl DpuKernel {
    pub fn butterfly_stage(table: &TwiddleTable, stage: u32) -> Result<Self, PimError> {
        if stage >= table.log_n() {
            return Err(NttError::StageOutOfRange {
                stage: stage as usize,
                stages: table.log_n() as usize,
            }
            .into());
        }
        let groups = 1usize << stage;
        Ok(DpuKernel::ButterflyStage {
            modulus: table.modulus(),
            stage,
            twiddles: table.forward_twiddles()[groups..2 * groups].to_vec(),
        })
    }

    pub fn modulus(&self) -> Modulus {
        match self {
            DpuKernel::PolyAdd { modulus }
            | DpuKernel::CwMul { modulus }
            | DpuKernel::Convolution { modulus, .. }
            | DpuKernel::ButterflyStage { modulus, .. } => *modulus,
        }
    }

    /// Bytes of one partitioned element.
    pub fn element_bytes(&self) -> usize {
        match self {
            DpuKernel::ButterflyStage { .. } => 3 * WORD_BYTES,
            _ => WORD_BYTES,
        }
    }

    /// Smallest WRAM chunk a tasklet must stage to make progress.
    pub fn working_set_bytes(&self) -> u64 {
        match self {
            DpuKernel::ButterflyStage { .. } => 5 * WORD_BYTES as u64,
            _ => 3 * WORD_BYTES as u64,
        }
    }

    fn input_words(&self, per_dpu: usize) -> usize {
        match self {
            DpuKernel::PolyAdd { .. } | DpuKernel::CwMul { .. } => 2 * per_dpu,
            DpuKernel::Convolution { n, .. } => per_dpu + n,
            DpuKernel::ButterflyStage { .. } => 3 * per_dpu,
        }
    }

    fn output_words(&self, per_dpu: usize) -> usize {
        match self {
            DpuKernel::PolyAdd { .. } | DpuKernel::CwMul { .. } => per_dpu,
            DpuKernel::Convolution { n, .. } => per_dpu + n - 1,
            DpuKernel::ButterflyStage { .. } => 2 * per_dpu,
        }
    }
}

pub fn encode_residues(words: &[u64]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

/// Little-endian 8-byte words; rejects lengths that are not a multiple of 8.
pub fn decode_residues(bytes: &[u8]) -> Result<Vec<u64>, PimError> {
    if !bytes.len().is_multiple_of(WORD_BYTES) {
        return Err(PimError::AlignmentError {
            offset: 0,
            len: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(WORD_BYTES)
        .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn check_aligned(offset: usize, len: usize) -> Result<(), PimError> {
    if !offset.is_multiple_of(WORD_BYTES) || !len.is_multiple_of(WORD_BYTES) {
        return Err(PimError::AlignmentError { offset, len });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpuState {
    Idle,
    Loaded,
    Executed,
}

#[derive(Debug, Clone)]
struct Dpu {
    mram: Vec<u8>,
    state: DpuState,
    /// Byte offset and length of the last kernel result.
    output: (usize, usize),
}

struct DpuRun {
    output: Vec<u64>,
    cycles: u64,
}

/// A set of DPUs with private MRAM and a ledger of modeled costs.
#[derive(Debug, Clone)]
pub struct PimSystem {
    cfg: DpuSystemConfig,
    dpus: Vec<Dpu>,
    ledger: TransferLedger,
    parallel: bool,
}

impl PimSystem {
    pub fn new(cfg: DpuSystemConfig) -> Result<Self, PimError> {
        cfg.validate()?;
        let dpus = vec![
            Dpu {
                mram: Vec::new(),
                state: DpuState::Idle,
                output: (0, 0),
            };
            cfg.num_dpus
        ];
        Ok(Self {
            cfg,
            dpus,
            ledger: TransferLedger::default(),
            parallel: true,
        })
    }

    pub fn config(&self) -> &DpuSystemConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &TransferLedger {
        &self.ledger
    }

    /// Run DPU programs on the rayon pool (default) or one after another.
    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn dpu_state(&self, dpu: usize) -> Result<DpuState, PimError> {
        Ok(self.dpu(dpu)?.state)
    }

    fn dpu(&self, dpu: usize) -> Result<&Dpu, PimError> {
        self.dpus.get(dpu).ok_or(PimError::NoSuchDpu {
            dpu,
            num_dpus: self.cfg.num_dpus,
        })
    }

    /// One host-to-DPU transfer per DPU; `buffers[i]` replaces DPU `i`'s MRAM.
    pub fn scatter(&mut self, buffers: &[Vec<u64>]) -> Result<(), PimError> {
        if buffers.len() != self.dpus.len() {
            return Err(PimError::BufferCountMismatch {
                expected: self.dpus.len(),
                got: buffers.len(),
            });
        }
        for (i, b) in buffers.iter().enumerate() {
            let required = (b.len() * WORD_BYTES) as u64;
            if required > self.cfg.mram_bytes {
                return Err(PimError::MramOverflow {
                    dpu: i,
                    required,
                    capacity: self.cfg.mram_bytes,
                });
            }
        }
        let mut total = 0u64;
        let mut max = 0u64;
        for (dpu, b) in self.dpus.iter_mut().zip(buffers) {
            dpu.mram = encode_residues(b);
            dpu.state = DpuState::Loaded;
            dpu.output = (0, 0);
            total += dpu.mram.len() as u64;
            max = max.max(dpu.mram.len() as u64);
        }
        self.ledger.host_dpu_bytes += total;
        self.ledger.host_dpu_time += transfer_time(&self.cfg, buffers.len(), max);
        self.ledger.scatters += 1;
        Ok(())
    }

    /// A single host-to-DPU transfer of raw bytes at `offset`.
    pub fn scatter_at(&mut self, dpu: usize, offset: usize, bytes: &[u8]) -> Result<(), PimError> {
        self.dpu(dpu)?;
        check_aligned(offset, bytes.len())?;
        let end = offset + bytes.len();
        if end as u64 > self.cfg.mram_bytes {
            return Err(PimError::MramOverflow {
                dpu,
                required: end as u64,
                capacity: self.cfg.mram_bytes,
            });
        }
        let d = &mut self.dpus[dpu];
        if d.mram.len() < end {
            d.mram.resize(end, 0);
        }
        d.mram[offset..end].copy_from_slice(bytes);
        d.state = DpuState::Loaded;
        self.ledger.host_dpu_bytes += bytes.len() as u64;
        self.ledger.host_dpu_time += transfer_time(&self.cfg, 1, bytes.len() as u64);
        self.ledger.scatters += 1;
        Ok(())
    }

    /// Inspects MRAM without modeled cost; never-written bytes read as zero.
    pub fn read_mram(&self, dpu: usize, offset: usize, len: usize) -> Result<Vec<u8>, PimError> {
        let d = self.dpu(dpu)?;
        check_aligned(offset, len)?;
        if (offset + len) as u64 > self.cfg.mram_bytes {
            return Err(PimError::MramOverflow {
                dpu,
                required: (offset + len) as u64,
                capacity: self.cfg.mram_bytes,
            });
        }
        let mut out = vec![0u8; len];
        if offset < d.mram.len() {
            let end = d.mram.len().min(offset + len);
            out[..end - offset].copy_from_slice(&d.mram[offset..end]);
        }
        Ok(out)
    }

    /// Runs `kernel` on every DPU over the partitions described by `plan`.
    pub fn launch(&mut self, kernel: &DpuKernel, plan: &PartitionPlan) -> Result<(), PimError> {
        if plan.num_dpus != self.cfg.num_dpus || plan.tasklets != self.cfg.tasklets_per_dpu {
            return Err(PimError::InputMismatch(
                "plan was made for a different system".into(),
            ));
        }
        if plan.element_bytes != kernel.element_bytes() {
            return Err(PimError::InputMismatch(format!(
                "kernel expects {}-byte elements, plan has {}",
                kernel.element_bytes(),
                plan.element_bytes
            )));
        }
        let available = self.cfg.wram_bytes / self.cfg.tasklets_per_dpu as u64;
        let required = kernel.working_set_bytes();
        if available < required {
            return Err(PimError::KernelPanic {
                required,
                available,
            });
        }
        let in_words = kernel.input_words(plan.per_dpu);
        for (i, d) in self.dpus.iter().enumerate() {
            if d.state == DpuState::Idle || d.mram.len() < in_words * WORD_BYTES {
                return Err(PimError::UnloadedData { dpu: i });
            }
        }
        let out_bytes = kernel.output_words(plan.per_dpu) * WORD_BYTES;
        let required = (in_words * WORD_BYTES + out_bytes) as u64;
        if required > self.cfg.mram_bytes {
            return Err(PimError::MramOverflow {
                dpu: 0,
                required,
                capacity: self.cfg.mram_bytes,
            });
        }

        let cfg = &self.cfg;
        let run = |d: &Dpu| -> Result<DpuRun, PimError> {
            let input = decode_residues(&d.mram[..in_words * WORD_BYTES])?;
            execute(kernel, plan, &input, cfg)
        };
        let runs: Vec<DpuRun> = if self.parallel {
            self.dpus.par_iter().map(run).collect::<Result<_, _>>()?
        } else {
            self.dpus.iter().map(run).collect::<Result<_, _>>()?
        };

        let mut max_cycles = 0;
        for (d, r) in self.dpus.iter_mut().zip(runs) {
            let offset = in_words * WORD_BYTES;
            d.mram.truncate(offset);
            d.mram.extend(encode_residues(&r.output));
            d.output = (offset, out_bytes);
            d.state = DpuState::Executed;
            max_cycles = max_cycles.max(r.cycles);
        }
        let launched = self.dpus.len();
        self.ledger.kernel_time += kernel_time(cfg, launched, max_cycles);
        self.ledger.launch_time += cfg.launch_overhead_s * launched as f64;
        self.ledger.launches += 1;
        Ok(())
    }

    /// One DPU-to-host transfer per DPU of its last kernel result.
    pub fn gather(&mut self) -> Result<Vec<Vec<u64>>, PimError> {
        let mut out = Vec::with_capacity(self.dpus.len());
        for (i, d) in self.dpus.iter().enumerate() {
            if d.state != DpuState::Executed {
                return Err(PimError::UnloadedData { dpu: i });
            }
            let (offset, len) = d.output;
            check_aligned(offset, len)?;
            out.push(decode_residues(&d.mram[offset..offset + len])?);
        }
        let total: u64 = out.iter().map(|b| (b.len() * WORD_BYTES) as u64).sum();
        let max = out
            .iter()
            .map(|b| (b.len() * WORD_BYTES) as u64)
            .max()
            .unwrap_or(0);
        self.ledger.dpu_host_bytes += total;
        self.ledger.dpu_host_time += transfer_time(&self.cfg, out.len(), max);
        self.ledger.gathers += 1;
        Ok(out)
    }
}

/// One DPU's program: per-tasklet work, then an optional tasklet-0 merge.
fn execute(
    kernel: &DpuKernel,
    plan: &PartitionPlan,
    input: &[u64],
    cfg: &DpuSystemConfig,
) -> Result<DpuRun, PimError> {
    let nd = plan.per_dpu;
    let nt = plan.per_tasklet;
    let t = plan.tasklets;
    let m = kernel.modulus();
    let mut tasklet_cycles = vec![0u64; t];
    let mut serial = 0u64;
    let output = match kernel {
        DpuKernel::PolyAdd { .. } | DpuKernel::CwMul { .. } => {
            let (a, b) = input.split_at(nd);
            let (op, cost): (ElementOp, u64) = match kernel {
                DpuKernel::PolyAdd { .. } => (Modulus::add, cfg.add_cycles),
                _ => (Modulus::mul, cfg.mul_cycles),
            };
            let mut out = vec![0u64; nd];
            for (j, cycles) in tasklet_cycles.iter_mut().enumerate() {
                for k in j * nt..(j + 1) * nt {
                    out[k] = op(&m, a[k], b[k]);
                    *cycles += cost;
                }
            }
            out
        }
        DpuKernel::Convolution { n, .. } => {
            let (a, b) = input.split_at(nd);
            let width = nt + n - 1;
            let mut partials = Vec::with_capacity(t);
            for (j, cycles) in tasklet_cycles.iter_mut().enumerate() {
                let mut acc = vec![0u64; width];
                let mut touched = vec![false; width];
                for (r, &ar) in a[j * nt..(j + 1) * nt].iter().enumerate() {
                    for (c, &bc) in b.iter().enumerate() {
                        let p = m.mul(ar, bc);
                        *cycles += cfg.mul_cycles;
                        let s = r + c;
                        if touched[s] {
                            acc[s] = m.add(acc[s], p);
                            *cycles += cfg.add_cycles;
                        } else {
                            acc[s] = p;
                            touched[s] = true;
                        }
                    }
                }
                partials.push((acc, touched));
            }
            let mut out = vec![0u64; nd + n - 1];
            let mut touched = vec![false; nd + n - 1];
            for (j, (acc, seen)) in partials.into_iter().enumerate() {
                for (s, (v, hit)) in acc.into_iter().zip(seen).enumerate() {
                    if !hit {
                        continue;
                    }
                    let k = j * nt + s;
                    if touched[k] {
                        out[k] = m.add(out[k], v);
                        serial += cfg.add_cycles;
                    } else {
                        out[k] = v;
                        touched[k] = true;
                    }
                }
            }
            out
        }
        DpuKernel::ButterflyStage { .. } => {
            let mut out = vec![0u64; 2 * nd];
            for (j, cycles) in tasklet_cycles.iter_mut().enumerate() {
                for k in j * nt..(j + 1) * nt {
                    let (u, v, w) = (input[3 * k], input[3 * k + 1], input[3 * k + 2]);
                    let (x, y) = butterfly_ct(u, v, w, &m);
                    out[2 * k] = x;
                    out[2 * k + 1] = y;
                    *cycles += cfg.mul_cycles + 2 * cfg.add_cycles;
                }
            }
            out
        }
    };
    Ok(DpuRun {
        output,
        cycles: dpu_cycles(cfg, &tasklet_cycles, serial),
    })
}

fn check_residues(name: &str, v: &[u64], m: &Modulus) -> Result<(), PimError> {
    if let Some(i) = v.iter().position(|&x| x >= m.value()) {
        return Err(PimError::InputMismatch(format!(
            "{name}[{i}] is not reduced mod {}",
            m.value()
        )));
    }
    Ok(())
}

fn padded_slice(v: &[u64], range: RangeInclusive<usize>) -> Vec<u64> {
    let (start, end) = (*range.start(), *range.end() + 1);
    let mut out = vec![0u64; end - start];
    if start < v.len() {
        let hi = end.min(v.len());
        out[..hi - start].copy_from_slice(&v[start..hi]);
    }
    out
}

/// Partition, scatter, launch, gather and host-side aggregation.
///
/// Inputs per kernel: `[a, b]` of equal length for `PolyAdd` and `CwMul`;
/// `[a, b]` of length `n` for `Convolution` (result has `2n - 1` terms);
/// `[state]` for `ButterflyStage` (result is the state after the stage).
pub fn run_workflow(
    kernel: &DpuKernel,
    inputs: &[&[u64]],
    cfg: &DpuSystemConfig,
) -> Result<(Vec<u64>, TransferLedger), PimError> {
    let mut sys = PimSystem::new(cfg.clone())?;
    let out = run_on(&mut sys, kernel, inputs)?;
    Ok((out, *sys.ledger()))
}

/// As [`run_workflow`] on an existing system, accumulating into its ledger.
pub fn run_on(
    sys: &mut PimSystem,
    kernel: &DpuKernel,
    inputs: &[&[u64]],
) -> Result<Vec<u64>, PimError> {
    let m = kernel.modulus();
    let cfg = sys.config().clone();
    let arity = match kernel {
        DpuKernel::ButterflyStage { .. } => 1,
        _ => 2,
    };
    if inputs.len() != arity {
        return Err(PimError::BufferCountMismatch {
            expected: arity,
            got: inputs.len(),
        });
    }
    for (i, v) in inputs.iter().enumerate() {
        check_residues(&format!("input{i}"), v, &m)?;
    }
    match kernel {
        DpuKernel::PolyAdd { .. } | DpuKernel::CwMul { .. } => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.len() != b.len() {
                return Err(PimError::InputMismatch(format!(
                    "operand lengths {} and {} differ",
                    a.len(),
                    b.len()
                )));
            }
            let plan = plan_partition(a.len(), &cfg, WORD_BYTES)?;
            let buffers: Vec<Vec<u64>> = (0..plan.num_dpus)
                .map(|i| {
                    let mut buf = padded_slice(a, plan.dpu_range(i));
                    buf.extend(padded_slice(b, plan.dpu_range(i)));
                    buf
                })
                .collect();
            sys.scatter(&buffers)?;
            sys.launch(kernel, &plan)?;
            let mut out: Vec<u64> = sys.gather()?.concat();
            out.truncate(a.len());
            Ok(out)
        }
        DpuKernel::Convolution { n, .. } => {
            let (a, b) = (inputs[0], inputs[1]);
            if *n == 0 || a.len() != *n || b.len() != *n {
                return Err(PimError::InputMismatch(format!(
                    "convolution kernel expects two operands of length {n}"
                )));
            }
            let plan = plan_partition(*n, &cfg, WORD_BYTES)?;
            let buffers: Vec<Vec<u64>> = (0..plan.num_dpus)
                .map(|i| {
                    let mut buf = padded_slice(a, plan.dpu_range(i));
                    buf.extend_from_slice(b);
                    buf
                })
                .collect();
            sys.scatter(&buffers)?;
            sys.launch(kernel, &plan)?;
            let partials = sys.gather()?;
            let mut out = vec![0u64; plan.padded_elements + n - 1];
            for (i, p) in partials.iter().enumerate() {
                let base = i * plan.per_dpu;
                for (k, &v) in p.iter().enumerate() {
                    out[base + k] = m.add(out[base + k], v);
                }
            }
            out.truncate(2 * n - 1);
            Ok(out)
        }
        DpuKernel::ButterflyStage {
            stage, twiddles, ..
        } => {
            let state = inputs[0];
            let len = state.len();
            if len < 2 || !len.is_power_of_two() {
                return Err(PimError::InputMismatch(format!(
                    "state length {len} is not a power of two >= 2"
                )));
            }
            let stages = len.trailing_zeros();
            if *stage >= stages {
                return Err(NttError::StageOutOfRange {
                    stage: *stage as usize,
                    stages: stages as usize,
                }
                .into());
            }
            let groups = 1usize << stage;
            if twiddles.len() != groups {
                return Err(PimError::InputMismatch(format!(
                    "stage {stage} needs {groups} twiddles, kernel has {}",
                    twiddles.len()
                )));
            }
            check_residues("twiddles", twiddles, &m)?;
            let half = len >> (stage + 1);
            let position = |b: usize| {
                let g = b / half;
                let top = 2 * g * half + b % half;
                (top, top + half, twiddles[g])
            };
            let count = len / 2;
            let plan = plan_partition(count, &cfg, kernel.element_bytes())?;
            let buffers: Vec<Vec<u64>> = (0..plan.num_dpus)
                .map(|i| {
                    let mut buf = Vec::with_capacity(3 * plan.per_dpu);
                    for b in plan.dpu_range(i) {
                        if b < count {
                            let (top, bot, w) = position(b);
                            buf.extend([state[top], state[bot], w]);
                        } else {
                            buf.extend([0, 0, 0]);
                        }
                    }
                    buf
                })
                .collect();
            sys.scatter(&buffers)?;
            sys.launch(kernel, &plan)?;
            let pairs = sys.gather()?.concat();
            let mut out = state.to_vec();
            for b in 0..count {
                let (top, bot, _) = position(b);
                out[top] = pairs[2 * b];
                out[bot] = pairs[2 * b + 1];
            }
            Ok(out)
        }
    }
}

/// Forward negacyclic NTT by one `ButterflyStage` launch per stage, with a
/// host round trip in between. Output is in bit-reversed order.
pub fn run_staged_ntt(
    coeffs: &[u64],
    table: &TwiddleTable,
    cfg: &DpuSystemConfig,
) -> Result<(Vec<u64>, TransferLedger), PimError> {
    if coeffs.len() != table.n() {
        return Err(NttError::DimensionMismatch {
            expected: table.n(),
            got: coeffs.len(),
        }
        .into());
    }
    let mut sys = PimSystem::new(cfg.clone())?;
    let mut state = coeffs.to_vec();
    for stage in 0..table.log_n() {
        let kernel = DpuKernel::butterfly_stage(table, stage)?;
        state = run_on(&mut sys, &kernel, &[&state])?;
    }
    Ok((state, *sys.ledger()))
}

/// Offloads homomorphic ring additions and pointwise products.
#[derive(Debug, Clone)]
pub struct PimBackend {
    pub cfg: DpuSystemConfig,
    pub ledger: TransferLedger,
}

impl PimBackend {
    pub fn new(cfg: DpuSystemConfig) -> Self {
        Self {
            cfg,
            ledger: TransferLedger::default(),
        }
    }

    fn run(
        &mut self,
        kernel: DpuKernel,
        a: &Polynomial,
        b: &Polynomial,
    ) -> Result<Polynomial, HeError> {
        if a.params() != b.params() {
            return Err(RingError::ParamsMismatch.into());
        }
        let (out, ledger) = run_workflow(&kernel, &[a.coeffs(), b.coeffs()], &self.cfg)
            .map_err(|e| HeError::Backend(Box::new(e)))?;
        self.ledger.absorb(&ledger);
        Ok(Polynomial::new(out, *a.params())?)
    }
}

impl PolyBackend for PimBackend {
    fn add(&mut self, a: &Polynomial, b: &Polynomial) -> Result<Polynomial, HeError> {
        self.run(
            DpuKernel::PolyAdd {
                modulus: a.modulus(),
            },
            a,
            b,
        )
    }

    fn cw_mul(&mut self, a: &Polynomial, b: &Polynomial) -> Result<Polynomial, HeError> {
        self.run(
            DpuKernel::CwMul {
                modulus: a.modulus(),
            },
            a,
            b,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modmath::generate_ntt_prime;
    use crate::ntt::ct_iteration;
    use crate::polyring::{random_poly, schoolbook_convolution, RingParams};

    fn cfg(n: usize, t: usize) -> DpuSystemConfig {
        DpuSystemConfig::default().with_dpus(n).with_tasklets(t)
    }

    #[test]
    fn plan_matches_index_formulas() {
        let plan = plan_partition(1024, &cfg(4, 16), 8).unwrap();
        assert_eq!((plan.per_dpu, plan.per_tasklet), (256, 16));
        assert_eq!(plan.dpu_range(1), 256..=511);
        assert_eq!(plan.tasklet_range(1, 2), 288..=303);
        let mut seen = vec![0u8; 1024];
        for (_, _, r) in plan.ranges() {
            for k in r {
                seen[k] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn plan_capacity_and_divisibility() {
        assert!(plan_partition(1 << 20, &cfg(1, 16), 8).is_ok());
        assert!(matches!(
            plan_partition(1 << 24, &cfg(1, 16), 8),
            Err(PimError::MramOverflow { required, .. }) if required == 128 << 20
        ));
        let strict = cfg(4, 16).with_padding(false);
        assert!(matches!(
            plan_partition(10, &strict, 8),
            Err(PimError::IndivisibleError { .. })
        ));
        let padded = plan_partition(10, &cfg(4, 16), 8).unwrap();
        assert_eq!(padded.padded_elements, 64);
        assert!(padded.is_padded());
        // 4-byte elements with an odd tasklet share break 8-byte alignment.
        let c = cfg(1, 1).with_padding(false);
        assert!(matches!(
            plan_partition(3, &c, 4),
            Err(PimError::AlignmentError { .. })
        ));
        assert_eq!(plan_partition(3, &cfg(1, 1), 4).unwrap().padded_elements, 4);
        assert_eq!(plan_partition(0, &cfg(1, 1), 8), Err(PimError::EmptyInput));
    }

    #[test]
    fn config_validation_and_lint() {
        assert!(DpuSystemConfig::default().validate().is_ok());
        assert!(DpuSystemConfig::default().lint().is_empty());
        assert_eq!(cfg(1, 8).lint().len(), 1);
        assert!(cfg(1, 25).validate().is_err());
        assert!(cfg(1, 0).validate().is_err());
        assert!(cfg(0, 1).validate().is_err());
    }

    #[test]
    fn poly_add_example() {
        let m = Modulus::new(17).unwrap();
        let (out, ledger) = run_workflow(
            &DpuKernel::PolyAdd { modulus: m },
            &[&[1, 2, 3, 4], &[4, 3, 2, 1]],
            &cfg(2, 2),
        )
        .unwrap();
        assert_eq!(out, vec![5, 5, 5, 5]);
        assert_eq!(ledger.host_dpu_bytes, 2 * 4 * 8);
        assert_eq!(ledger.dpu_host_bytes, 4 * 8);
        assert_eq!(ledger.launches, 1);
    }

    #[test]
    fn degenerate_single_unit_timing() {
        let m = Modulus::new(17).unwrap();
        let c = cfg(1, 1);
        let (_, ledger) =
            run_workflow(&DpuKernel::CwMul { modulus: m }, &[&[1, 2], &[3, 4]], &c).unwrap();
        // One tasklet: every instruction waits a full pipeline pass.
        let cycles = c.pipeline_depth * 2 * c.mul_cycles;
        let want = cycles as f64 / c.dpu_freq_hz + c.launch_overhead_s;
        assert!((ledger.kernel_time - want).abs() < 1e-15);
    }

    #[test]
    fn convolution_matches_schoolbook() {
        let q = generate_ntt_prime(40, 64, 1).unwrap();
        let ring = RingParams::negacyclic(64, q).unwrap();
        let a = random_poly(ring, 1);
        let b = random_poly(ring, 2);
        let want = schoolbook_convolution(&a, &b).unwrap();
        for (n, t) in [(1, 1), (4, 1), (4, 4), (2, 16), (8, 8), (3, 5)] {
            let (out, ledger) = run_workflow(
                &DpuKernel::Convolution { modulus: q, n: 64 },
                &[a.coeffs(), b.coeffs()],
                &cfg(n, t),
            )
            .unwrap();
            assert_eq!(out, want.coeffs(), "N={n} T={t}");
            let plan = plan_partition(64, &cfg(n, t), 8).unwrap();
            assert_eq!(
                ledger.host_dpu_bytes,
                8 * (plan.padded_elements + n * 64) as u64
            );
            assert_eq!(ledger.dpu_host_bytes, 8 * (n * (plan.per_dpu + 63)) as u64);
        }
    }

    #[test]
    fn convolution_add_count_is_exact() {
        // Tasklet adds, merge adds and host adds together give (n-1)^2.
        let m = Modulus::new(97).unwrap();
        let n = 32;
        let c = cfg(4, 4);
        let plan = plan_partition(n, &c, 8).unwrap();
        let a: Vec<u64> = (1..=n as u64).collect();
        let kernel = DpuKernel::Convolution { modulus: m, n };
        let mut input = a[..plan.per_dpu].to_vec();
        input.extend(&a);
        let unit = DpuSystemConfig {
            mul_cycles: 0,
            pipeline_depth: 1,
            ..c.clone()
        };
        // With a free multiply and depth 1 the cycle count is the add count.
        let run = execute(&kernel, &plan, &input, &unit).unwrap();
        let per_dpu = run.cycles as usize;
        let host = (c.num_dpus - 1) * (n - 1);
        assert_eq!(c.num_dpus * per_dpu + host, (n - 1) * (n - 1));
    }

    #[test]
    fn butterfly_stage_matches_ct_iteration() {
        let q = Modulus::new(17).unwrap();
        let table = TwiddleTable::new(8, q).unwrap();
        let ring = RingParams::negacyclic(8, q).unwrap();
        let mut state = random_poly(ring, 3);
        for stage in 0..3 {
            let kernel = DpuKernel::butterfly_stage(&table, stage).unwrap();
            let (out, ledger) = run_workflow(&kernel, &[state.coeffs()], &cfg(2, 2)).unwrap();
            let want = ct_iteration(&state, stage as usize, &table).unwrap();
            assert_eq!(out, want.coeffs());
            assert_eq!(ledger.host_dpu_bytes, 4 * 24);
            assert_eq!(ledger.dpu_host_bytes, 4 * 16);
            state = want;
        }
    }

    #[test]
    fn staged_ntt_round_trips() {
        let q = generate_ntt_prime(30, 64, 4).unwrap();
        let table = TwiddleTable::new(64, q).unwrap();
        let ring = RingParams::negacyclic(64, q).unwrap();
        let a = random_poly(ring, 5);
        let (out, ledger) = run_staged_ntt(a.coeffs(), &table, &cfg(4, 8)).unwrap();
        let mut want = a.coeffs().to_vec();
        table.forward_negacyclic_in_place(&mut want);
        assert_eq!(out, want);
        assert_eq!(
            (ledger.launches, ledger.scatters, ledger.gathers),
            (6, 6, 6)
        );
    }

    #[test]
    fn protocol_errors() {
        let m = Modulus::new(17).unwrap();
        let c = cfg(2, 1);
        let mut sys = PimSystem::new(c.clone()).unwrap();
        assert_eq!(sys.gather(), Err(PimError::UnloadedData { dpu: 0 }));
        let plan = plan_partition(2, &c, 8).unwrap();
        let k = DpuKernel::PolyAdd { modulus: m };
        assert_eq!(
            sys.launch(&k, &plan),
            Err(PimError::UnloadedData { dpu: 0 })
        );
        sys.scatter(&[vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(sys.dpu_state(1), Ok(DpuState::Loaded));
        assert_eq!(sys.gather(), Err(PimError::UnloadedData { dpu: 0 }));
        sys.launch(&k, &plan).unwrap();
        let first = sys.gather().unwrap();
        let bytes = sys.ledger().dpu_host_bytes;
        assert_eq!(first, vec![vec![3], vec![7]]);
        assert_eq!(sys.gather().unwrap(), first);
        assert_eq!(sys.ledger().dpu_host_bytes, 2 * bytes);
        assert!(matches!(
            sys.scatter(&[vec![1]]),
            Err(PimError::BufferCountMismatch { .. })
        ));
    }

    #[test]
    fn wram_shortfall_panics() {
        let m = Modulus::new(17).unwrap();
        let c = DpuSystemConfig {
            wram_bytes: 64,
            ..cfg(1, 4)
        };
        let r = run_workflow(&DpuKernel::PolyAdd { modulus: m }, &[&[1; 4], &[2; 4]], &c);
        assert!(matches!(
            r,
            Err(PimError::KernelPanic { available: 16, .. })
        ));
    }

    #[test]
    fn misaligned_transfers_are_rejected() {
        let mut sys = PimSystem::new(cfg(1, 1)).unwrap();
        for off in 1..8 {
            assert!(matches!(
                sys.scatter_at(0, off, &[0u8; 8]),
                Err(PimError::AlignmentError { .. })
            ));
            assert!(matches!(
                sys.scatter_at(0, 0, &vec![0u8; 8 + off]),
                Err(PimError::AlignmentError { .. })
            ));
            assert!(sys.read_mram(0, off, 8).is_err());
            assert!(decode_residues(&vec![0u8; off]).is_err());
        }
        let data: Vec<u8> = (0..32).collect();
        sys.scatter_at(0, 16, &data).unwrap();
        assert_eq!(sys.read_mram(0, 16, 32).unwrap(), data);
        assert_eq!(sys.read_mram(0, 0, 16).unwrap(), vec![0; 16]);
        assert_eq!(sys.read_mram(0, 48, 8).unwrap(), vec![0; 8]);
    }

    #[test]
    fn copy_time_grows_with_dpu_count() {
        let m = Modulus::new(17).unwrap();
        let a = vec![1u64; 1 << 12];
        let k = DpuKernel::PolyAdd { modulus: m };
        let (_, l64) = run_workflow(&k, &[&a, &a], &cfg(64, 16)).unwrap();
        let (_, l128) = run_workflow(&k, &[&a, &a], &cfg(128, 16)).unwrap();
        assert_eq!(l64.host_dpu_bytes, l128.host_dpu_bytes);
        assert!(l128.host_dpu_time > l64.host_dpu_time);
        assert!(l128.launch_time > l64.launch_time);
    }
}
