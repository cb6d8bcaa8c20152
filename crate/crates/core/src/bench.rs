//! Benchmark sweeps behind the `pimhe` binary.
//!
//! CPU rows hold measured wall-clock medians of the host reference. PIM
//! rows run the simulator once per configuration (its modeled times are
//! deterministic) and compare the result bit-for-bit with the reference.
//! Model rows come from [`crate::costmodel`] without touching data.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use clap::ValueEnum;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::{alpha_ratio, estimate, CostError, CostParams, OpKind};
use crate::hekernels::{
    decrypt, encrypt, eval_add_with, eval_mult_with, keygen, relinearize, Ciphertext, HeError,
    HeStats, HostBackend, KeyMaterial, SchemeParams,
};
use crate::modmath::{generate_ntt_prime, ModMathError};
use crate::ntt::{ct_iteration, NttError, TwiddleTable};
use crate::pimsim::{
    run_staged_ntt, run_workflow, DpuKernel, DpuSystemConfig, PimBackend, PimError, TransferLedger,
};
use crate::polyring::{
    cw_mul, poly_add, random_poly, schoolbook_convolution, Polynomial, RingError, RingParams,
};

pub const MAX_LOG_N: u32 = 26;
pub const HE_PLAINTEXT_MODULUS: u64 = 65537;
const PRIME_BITS: u32 = 60;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error("pim result differs from the cpu reference for {op} at n = {n} with {dpus} DPUs")]
    Mismatch { op: BenchOp, n: usize, dpus: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Math(#[from] ModMathError),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error(transparent)]
    Ntt(#[from] NttError),
    #[error(transparent)]
    Pim(#[from] PimError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    He(#[from] HeError),
}

impl BenchError {
    /// Process exit status: 2 for bad input, 3 for a correctness failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) | BenchError::Config(_) | BenchError::Cost(_) => 2,
            BenchError::Mismatch { .. } => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchOp {
    Add,
    Cwmul,
    Conv,
    Ntt,
    NttStage,
    HeAdd,
    HeMult,
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(
            self.to_possible_value()
                .expect("no skipped variants")
                .get_name(),
        )
    }
}

impl BenchOp {
    /// Largest `log2 n` run by default on a desk machine.
    pub fn desk_cap(self) -> u32 {
        match self {
            BenchOp::Conv => 13,
            BenchOp::HeAdd | BenchOp::HeMult => 14,
            _ => 20,
        }
    }

    fn cost_kind(self) -> Option<OpKind> {
        match self {
            BenchOp::Add => Some(OpKind::Addition),
            BenchOp::Cwmul => Some(OpKind::CwMul),
            BenchOp::Conv => Some(OpKind::Convolution),
            BenchOp::NttStage | BenchOp::Ntt => Some(OpKind::NttStage),
            BenchOp::HeAdd | BenchOp::HeMult => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Cpu,
    Pim,
    Both,
    Model,
}

/// `"a..b"` (inclusive), a comma list, or a single value; each in `1..=26`.
pub fn parse_log_n_range(s: &str) -> Result<Vec<u32>, BenchError> {
    let bad = || BenchError::Usage(format!("bad log-n range {s:?}"));
    let one = |t: &str| -> Result<u32, BenchError> {
        let v: u32 = t.trim().parse().map_err(|_| bad())?;
        if (1..=MAX_LOG_N).contains(&v) {
            Ok(v)
        } else {
            Err(BenchError::Usage(format!(
                "log-n {v} outside 1..={MAX_LOG_N}"
            )))
        }
    };
    let out: Vec<u32> = if let Some((lo, hi)) = s.split_once("..") {
        let (lo, hi) = (one(lo)?, one(hi)?);
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).collect()
    } else {
        s.split(',').map(one).collect::<Result<_, _>>()?
    };
    Ok(out)
}

/// Comma-separated positive DPU counts.
pub fn parse_dpu_list(s: &str) -> Result<Vec<usize>, BenchError> {
    s.split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(v) if (1..=1 << 16).contains(&v) => Ok(v),
            _ => Err(BenchError::Usage(format!("bad DPU count {t:?}"))),
        })
        .collect()
}

/// Optional TOML file with `[dpu]` and `[cpu]` tables.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dpu: DpuSystemConfig,
    pub cpu: CostParams,
}

pub fn parse_config(text: &str) -> Result<FileConfig, BenchError> {
    let cfg: FileConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
    cfg.dpu
        .validate()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    cfg.cpu.validate().map_err(BenchError::Config)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<FileConfig, BenchError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub op: BenchOp,
    pub log_n: Vec<u32>,
    pub dpus: Vec<usize>,
    pub tasklets: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub seed: u64,
    pub backend: Backend,
    pub system: FileConfig,
}

impl BenchConfig {
    pub fn new(op: BenchOp, log_n: Vec<u32>) -> Self {
        Self {
            op,
            log_n,
            dpus: vec![64],
            tasklets: 16,
            repetitions: 100,
            warmup: 20,
            seed: 0,
            backend: Backend::Pim,
            system: FileConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.log_n.is_empty() || self.log_n.iter().any(|&k| k == 0 || k > MAX_LOG_N) {
            return Err(BenchError::Usage(format!(
                "log-n values must be in 1..={MAX_LOG_N}"
            )));
        }
        if self.repetitions == 0 {
            return Err(BenchError::Usage("repetitions must be at least 1".into()));
        }
        if self.dpus.is_empty() {
            return Err(BenchError::Usage("need at least one DPU count".into()));
        }
        for &d in &self.dpus {
            self.dpu_config(d)
                .validate()
                .map_err(|e| BenchError::Usage(e.to_string()))?;
        }
        if matches!(self.op, BenchOp::HeAdd | BenchOp::HeMult) && self.log_n.iter().any(|&k| k < 2)
        {
            return Err(BenchError::Usage("HE ops need log-n >= 2".into()));
        }
        if self.backend == Backend::Model && self.op.cost_kind().is_none() {
            return Err(BenchError::Usage(format!("{} has no cost model", self.op)));
        }
        Ok(())
    }

    fn dpu_config(&self, dpus: usize) -> DpuSystemConfig {
        self.system
            .dpu
            .clone()
            .with_dpus(dpus)
            .with_tasklets(self.tasklets)
    }

    /// Sizes beyond the desk-scale defaults, which still run but slowly.
    pub fn oversized(&self) -> Vec<u32> {
        if self.backend == Backend::Model {
            return Vec::new();
        }
        let cap = self.op.desk_cap();
        self.log_n.iter().copied().filter(|&k| k > cap).collect()
    }
}

/// One CSV record; `None` fields are written empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub op: BenchOp,
    pub n: usize,
    pub backend: &'static str,
    pub dpus: Option<usize>,
    pub tasklets: Option<usize>,
    pub cpu_time: Option<f64>,
    pub dpu_time: Option<f64>,
    pub host_dpu: Option<f64>,
    pub dpu_host: Option<f64>,
    pub alpha: Option<f64>,
    pub correct: Option<bool>,
}

impl BenchRow {
    fn new(op: BenchOp, n: usize, backend: &'static str) -> Self {
        Self {
            op,
            n,
            backend,
            dpus: None,
            tasklets: None,
            cpu_time: None,
            dpu_time: None,
            host_dpu: None,
            dpu_host: None,
            alpha: None,
            correct: None,
        }
    }

    fn with_ledger(mut self, dpus: usize, tasklets: usize, l: &TransferLedger) -> Self {
        self.dpus = Some(dpus);
        self.tasklets = Some(tasklets);
        self.dpu_time = Some(l.kernel_time);
        self.host_dpu = Some(l.host_dpu_time);
        self.dpu_host = Some(l.dpu_host_time);
        self
    }
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "op", "n", "backend", "dpus", "tasklets", "cpu_time", "dpu_time", "host_dpu",
            "dpu_host", "alpha", "correct",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn time_median<T>(warmup: usize, reps: usize, mut f: impl FnMut() -> T) -> f64 {
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let samples = (0..reps)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(f());
            start.elapsed().as_secs_f64()
        })
        .collect();
    median(samples)
}

/// Inputs shared by every backend for one `(op, n)`.
struct Case {
    n: usize,
    ring: RingParams,
    a: Polynomial,
    b: Polynomial,
    table: Option<TwiddleTable>,
    he: Option<HeCase>,
}

struct HeCase {
    params: SchemeParams,
    keys: KeyMaterial,
    c1: Ciphertext,
    c2: Ciphertext,
    expected: Vec<u64>,
}

fn plain_negacyclic(a: &[u64], b: &[u64], t: u64) -> Vec<u64> {
    let n = a.len();
    let mut acc = vec![0i128; n];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            let p = (x * y % t) as i128;
            if i + j < n {
                acc[i + j] += p;
            } else {
                acc[i + j - n] -= p;
            }
        }
    }
    acc.into_iter()
        .map(|v| v.rem_euclid(t as i128) as u64)
        .collect()
}

fn build_case(op: BenchOp, log_n: u32, seed: u64) -> Result<Case, BenchError> {
    let n = 1usize << log_n;
    let case_seed = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(log_n as u64);
    let q = generate_ntt_prime(PRIME_BITS, n, case_seed)?;
    let ring = RingParams::negacyclic(n, q)?;
    let a = random_poly(ring, case_seed);
    let b = random_poly(ring, case_seed ^ 1);
    let table = match op {
        BenchOp::Ntt | BenchOp::NttStage if n >= 2 => Some(TwiddleTable::new(n, q)?),
        _ => None,
    };
    let he = match op {
        BenchOp::HeAdd | BenchOp::HeMult => {
            let t = HE_PLAINTEXT_MODULUS;
            let params = SchemeParams::generate(n, PRIME_BITS, t, case_seed)?;
            let keys = keygen(&params, case_seed)?;
            let m1: Vec<u64> = a.coeffs().iter().map(|c| c % t).collect();
            let m2: Vec<u64> = b.coeffs().iter().map(|c| c % t).collect();
            let c1 = encrypt(&m1, &keys.pk, &params, case_seed ^ 2)?;
            let c2 = encrypt(&m2, &keys.pk, &params, case_seed ^ 3)?;
            let expected = if op == BenchOp::HeAdd {
                m1.iter().zip(&m2).map(|(x, y)| (x + y) % t).collect()
            } else {
                plain_negacyclic(&m1, &m2, t)
            };
            Some(HeCase {
                params,
                keys,
                c1,
                c2,
                expected,
            })
        }
        _ => None,
    };
    Ok(Case {
        n,
        ring,
        a,
        b,
        table,
        he,
    })
}

fn alpha_of(op: BenchOp, n: usize) -> Option<f64> {
    op.cost_kind()
        .and_then(|k| alpha_ratio(k, n).ok())
        .and_then(|r| r.to_f64())
}

fn cpu_row(cfg: &BenchConfig, case: &Case) -> Result<BenchRow, BenchError> {
    let (w, r) = (cfg.warmup, cfg.repetitions);
    let mut row = BenchRow::new(cfg.op, case.n, "cpu");
    let (a, b) = (&case.a, &case.b);
    let time = match cfg.op {
        BenchOp::Add => time_median(w, r, || poly_add(a, b)),
        BenchOp::Cwmul => time_median(w, r, || cw_mul(a, b)),
        BenchOp::Conv => time_median(w, r, || schoolbook_convolution(a, b)),
        BenchOp::Ntt | BenchOp::NttStage => {
            let table = case
                .table
                .as_ref()
                .ok_or_else(|| BenchError::Usage("NTT ops need log-n >= 1".into()))?;
            if cfg.op == BenchOp::Ntt {
                time_median(w, r, || {
                    let mut v = a.coeffs().to_vec();
                    table.forward_negacyclic_in_place(&mut v);
                    v
                })
            } else {
                time_median(w, r, || ct_iteration(a, 0, table))
            }
        }
        BenchOp::HeAdd | BenchOp::HeMult => {
            let he = case.he.as_ref().expect("he case");
            let p = &he.params;
            let run = || -> Result<Vec<u64>, HeError> {
                let mut stats = HeStats::default();
                let c = if cfg.op == BenchOp::HeAdd {
                    eval_add_with(&he.c1, &he.c2, &mut HostBackend, &mut stats)?
                } else {
                    let c3 = eval_mult_with(&he.c1, &he.c2, p, &mut HostBackend, &mut stats)?;
                    relinearize(&c3, &he.keys.ek, p)?
                };
                decrypt(&c, &he.keys.sk, p)
            };
            row.correct = Some(run()? == he.expected);
            time_median(w, r, run)
        }
    };
    row.cpu_time = Some(time);
    row.alpha = alpha_of(cfg.op, case.n);
    Ok(row)
}

fn pim_row(cfg: &BenchConfig, case: &Case, dpus: usize) -> Result<BenchRow, BenchError> {
    let sys = cfg.dpu_config(dpus);
    let (a, b) = (case.a.coeffs(), case.b.coeffs());
    let q = case.ring.modulus();
    let (correct, ledger) = match cfg.op {
        BenchOp::Add | BenchOp::Cwmul => {
            let (kernel, want) = if cfg.op == BenchOp::Add {
                (
                    DpuKernel::PolyAdd { modulus: q },
                    poly_add(&case.a, &case.b)?,
                )
            } else {
                (DpuKernel::CwMul { modulus: q }, cw_mul(&case.a, &case.b)?)
            };
            let (out, ledger) = run_workflow(&kernel, &[a, b], &sys)?;
            (out == want.coeffs(), ledger)
        }
        BenchOp::Conv => {
            let kernel = DpuKernel::Convolution {
                modulus: q,
                n: case.n,
            };
            let (out, ledger) = run_workflow(&kernel, &[a, b], &sys)?;
            let want = schoolbook_convolution(&case.a, &case.b)?;
            (out == want.coeffs(), ledger)
        }
        BenchOp::Ntt => {
            let table = case.table.as_ref().expect("ntt table");
            let (out, ledger) = run_staged_ntt(a, table, &sys)?;
            let mut want = a.to_vec();
            table.forward_negacyclic_in_place(&mut want);
            (out == want, ledger)
        }
        BenchOp::NttStage => {
            let table = case.table.as_ref().expect("ntt table");
            let kernel = DpuKernel::butterfly_stage(table, 0)?;
            let (out, ledger) = run_workflow(&kernel, &[a], &sys)?;
            let want = ct_iteration(&case.a, 0, table)?;
            (out == want.coeffs(), ledger)
        }
        BenchOp::HeAdd | BenchOp::HeMult => {
            let he = case.he.as_ref().expect("he case");
            let p = &he.params;
            let mut backend = PimBackend::new(sys.clone());
            let mut stats = HeStats::default();
            let c = if cfg.op == BenchOp::HeAdd {
                eval_add_with(&he.c1, &he.c2, &mut backend, &mut stats)?
            } else {
                let c3 = eval_mult_with(&he.c1, &he.c2, p, &mut backend, &mut stats)?;
                relinearize(&c3, &he.keys.ek, p)?
            };
            let got = decrypt(&c, &he.keys.sk, p)?;
            (got == he.expected, backend.ledger)
        }
    };
    let mut row = BenchRow::new(cfg.op, case.n, "pim").with_ledger(dpus, cfg.tasklets, &ledger);
    row.alpha = alpha_of(cfg.op, case.n);
    row.correct = Some(correct);
    Ok(row)
}

fn model_row(cfg: &BenchConfig, log_n: u32, dpus: usize) -> Result<BenchRow, BenchError> {
    let n = 1usize << log_n;
    let kind = cfg
        .op
        .cost_kind()
        .ok_or_else(|| BenchError::Usage(format!("{} has no cost model", cfg.op)))?;
    let mut params = cfg.system.cpu.clone();
    params.dpu = cfg.dpu_config(dpus);
    let e = estimate(kind, n, &params)?;
    let stages = if cfg.op == BenchOp::Ntt {
        log_n as f64
    } else {
        1.0
    };
    let mut row = BenchRow::new(cfg.op, n, "model");
    row.dpus = Some(dpus);
    row.tasklets = Some(cfg.tasklets);
    row.cpu_time = Some(e.cpu_time_s * stages);
    row.dpu_time = Some(e.dpu_kernel_time_s * stages);
    row.host_dpu = Some(e.host_dpu_time_s * stages);
    row.dpu_host = Some(e.dpu_host_time_s * stages);
    row.alpha = alpha_of(cfg.op, n);
    Ok(row)
}

/// Rows for every `(n, backend, dpus)`; a PIM mismatch is reported after
/// all rows are produced so the caller can still emit them.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    cfg.validate()?;
    for k in cfg.oversized() {
        log::warn!(
            "{} at log-n {k} exceeds the desk-scale cap of {}; expect a long run",
            cfg.op,
            cfg.op.desk_cap()
        );
    }
    for w in cfg.dpu_config(cfg.dpus[0]).lint() {
        log::warn!("{w}");
    }
    let mut rows = Vec::new();
    for &log_n in &cfg.log_n {
        if cfg.backend == Backend::Model {
            for &d in &cfg.dpus {
                rows.push(model_row(cfg, log_n, d)?);
            }
            continue;
        }
        let case = build_case(cfg.op, log_n, cfg.seed)?;
        if matches!(cfg.backend, Backend::Cpu | Backend::Both) {
            rows.push(cpu_row(cfg, &case)?);
        }
        if matches!(cfg.backend, Backend::Pim | Backend::Both) {
            for &d in &cfg.dpus {
                rows.push(pim_row(cfg, &case, d)?);
            }
        }
    }
    Ok(rows)
}

/// First PIM row whose result disagreed with the reference.
pub fn first_mismatch(rows: &[BenchRow]) -> Option<BenchError> {
    rows.iter()
        .find(|r| r.backend == "pim" && r.correct == Some(false))
        .map(|r| BenchError::Mismatch {
            op: r.op,
            n: r.n,
            dpus: r.dpus.unwrap_or(0),
        })
}

/// Sweep over `cfg.dpus` at a single size.
pub fn run_scaling(cfg: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    if cfg.log_n.len() != 1 {
        return Err(BenchError::Usage("scaling takes a single log-n".into()));
    }
    run_bench(cfg)
}

impl FromStr for Backend {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Backend as ValueEnum>::from_str(s, true).map_err(BenchError::Usage)
    }
}
