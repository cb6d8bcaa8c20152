use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pimhe::bench::{
    first_mismatch, load_config, parse_dpu_list, parse_log_n_range, run_bench, run_scaling,
    write_csv, Backend, BenchConfig, BenchError, BenchOp, FileConfig,
};
use pimhe::costmodel::{explain, OpKind};

/// Environment variable naming a default TOML config file.
const CONFIG_ENV: &str = "PIMHE_CONFIG";

#[derive(Parser)]
#[command(
    name = "pimhe",
    version,
    about = "CPU vs simulated-PIM polynomial and HE benchmarks"
)]
struct Cli {
    /// TOML file with [dpu] and [cpu] tables (default: $PIMHE_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep polynomial sizes and emit CSV.
    Bench(SweepArgs),
    /// Sweep DPU counts at one size and emit CSV.
    Scaling(ScalingArgs),
    /// Print the cost-model breakdown for one operation.
    Explain(ExplainArgs),
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    op: BenchOp,
    /// `lo..hi` (inclusive), a comma list, or one value.
    #[arg(long, value_parser = log_n_arg, required = true)]
    log_n: Vec<Vec<u32>>,
    #[arg(long, value_parser = dpu_arg, default_value = "64")]
    dpus: Vec<Vec<usize>>,
    #[arg(long, default_value_t = 16)]
    tasklets: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 20)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Backend::Pim)]
    backend: Backend,
    /// CSV destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, value_enum)]
    op: BenchOp,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=26))]
    log_n: u32,
    #[arg(long, value_parser = dpu_arg, default_value = "64,128,256,512,1024")]
    dpus: Vec<Vec<usize>>,
    #[arg(long, default_value_t = 16)]
    tasklets: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 20)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Backend::Model)]
    backend: Backend,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    /// add, cwmul, conv or ntt-stage.
    #[arg(long, value_parser = op_kind_arg)]
    op: OpKind,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=26))]
    log_n: u32,
    #[arg(long, default_value_t = 1024)]
    dpus: usize,
    #[arg(long)]
    tasklets: Option<usize>,
}

fn log_n_arg(s: &str) -> Result<Vec<u32>, String> {
    parse_log_n_range(s).map_err(|e| e.to_string())
}

fn dpu_arg(s: &str) -> Result<Vec<usize>, String> {
    parse_dpu_list(s).map_err(|e| e.to_string())
}

fn op_kind_arg(s: &str) -> Result<OpKind, String> {
    s.parse()
        .map_err(|e: pimhe::costmodel::CostError| e.to_string())
}

fn system_config(path: Option<PathBuf>) -> Result<FileConfig, BenchError> {
    match path.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
        Some(p) => load_config(&p),
        None => Ok(FileConfig::default()),
    }
}

fn emit(rows: &[pimhe::bench::BenchRow], out: Option<PathBuf>) -> Result<(), BenchError> {
    match out {
        Some(p) => write_csv(rows, BufWriter::new(File::create(p)?)),
        None => write_csv(rows, io::stdout().lock()),
    }
}

#[allow(clippy::too_many_arguments)]
fn bench_config(
    op: BenchOp,
    log_n: Vec<u32>,
    dpus: Vec<usize>,
    tasklets: usize,
    reps: usize,
    warmup: usize,
    seed: u64,
    backend: Backend,
    system: FileConfig,
) -> BenchConfig {
    BenchConfig {
        op,
        log_n,
        dpus,
        tasklets,
        repetitions: reps,
        warmup,
        seed,
        backend,
        system,
    }
}

fn run(cli: Cli) -> Result<(), BenchError> {
    let system = system_config(cli.config)?;
    match cli.command {
        Command::Bench(a) => {
            let cfg = bench_config(
                a.op,
                a.log_n.concat(),
                a.dpus.concat(),
                a.tasklets,
                a.reps,
                a.warmup,
                a.seed,
                a.backend,
                system,
            );
            let rows = run_bench(&cfg)?;
            emit(&rows, a.out)?;
            first_mismatch(&rows).map_or(Ok(()), Err)
        }
        Command::Scaling(a) => {
            let cfg = bench_config(
                a.op,
                vec![a.log_n],
                a.dpus.concat(),
                a.tasklets,
                a.reps,
                a.warmup,
                a.seed,
                a.backend,
                system,
            );
            let rows = run_scaling(&cfg)?;
            emit(&rows, a.out)?;
            first_mismatch(&rows).map_or(Ok(()), Err)
        }
        Command::Explain(a) => {
            let mut params = system.cpu;
            params.dpu = system.dpu;
            params.dpu.num_dpus = a.dpus;
            if let Some(t) = a.tasklets {
                params.dpu.tasklets_per_dpu = t;
            }
            let text = explain(a.op, 1usize << a.log_n, &params)?;
            io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
