use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kernel_operator::experiment::selfcheck::{analytic_derivative, run_selfcheck, FdSuite};
use kernel_operator::experiment::{
    benchmark_header, benchmark_row, run_benchmark, run_convergence, write_benchmark_outputs,
    write_convergence_outputs, write_resolved_config, ConfigMap, ExperimentConfig,
};
use kernel_operator::problems::ProblemName;
use kernel_operator::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;
const EXIT_IO: u8 = 1;

/// Kernel-based PDE solution operators: benchmarks, convergence studies and self-checks.
#[derive(Parser, Debug)]
#[command(name = "kop", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config entry (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory for CSV artifacts.
    #[arg(long, global = true, default_value = "kop-out")]
    out: PathBuf,
    /// Master seed; all random streams derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one benchmark problem and score it on its test family.
    Benchmark {
        /// darcy-a1, darcy-a2, darcy-a3, helmholtz-20, helmholtz-200, schrodinger, heat or poisson3d.
        problem: ProblemName,
    },
    /// Low-rank convergence study over several sample sizes.
    Convergence,
    /// Run the built-in consistency checks.
    Selfcheck,
    /// Compare kernel derivatives against finite differences.
    KernelCheck,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Shape(_) | Error::Capability(_) => EXIT_USAGE,
        Error::Numerical(_) | Error::UndefinedMetric(_) => EXIT_NUMERICAL,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_IO,
    }
}

fn resolve(common: &Common, problem: Option<&str>, fallback: &str) -> Result<ExperimentConfig, Error> {
    let mut map = match &common.config {
        Some(path) => ConfigMap::from_file(path)?,
        None => ConfigMap::new(),
    };
    if let Some(p) = problem {
        map.set("problem", p)?;
    }
    for pair in &common.set {
        map.set_pair(pair)?;
    }
    if let Some(seed) = common.seed {
        map.set("seed", &seed.to_string())?;
    }
    ExperimentConfig::resolve(&map, fallback)
}

fn benchmark(common: &Common, problem: &ProblemName) -> Result<u8, Error> {
    let cfg = resolve(common, Some(&problem.0), &problem.0)?;
    write_resolved_config(&common.out, &cfg)?;
    let out = run_benchmark(&cfg)?;
    write_benchmark_outputs(&common.out, &cfg, &out)?;
    println!("{}", benchmark_header());
    println!("{}", benchmark_row(&cfg.problem, &out));
    println!("time = fit + evaluation wall clock; outputs in {}", common.out.display());
    Ok(0)
}

fn convergence(common: &Common) -> Result<u8, Error> {
    let cfg = resolve(common, None, "poisson3d")?;
    write_resolved_config(&common.out, &cfg)?;
    let study = run_convergence(&cfg, |r| {
        eprintln!(
            "N={:>7} trial={:>2} rel_l2={:.4e} rel_linf={:.4e} time={:.2}s",
            r.n, r.trial, r.report.mean_l2, r.report.mean_linf, r.report.wall_time_seconds
        )
    })?;
    write_convergence_outputs(&common.out, &study)?;
    println!("{:>8} {:>7} {:>12} {:>10} {:>12} {:>10}", "N", "trials", "mean rel L2", "se", "mean Linf", "se");
    for s in &study.summaries {
        let se = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"));
        println!(
            "{:>8} {:>7} {:>12.4e} {:>10} {:>12.4e} {:>10}",
            s.n,
            s.trials,
            s.mean_l2,
            se(s.se_l2),
            s.mean_linf,
            se(s.se_linf)
        );
    }
    match (study.slope_l2, study.slope_linf) {
        (Some(l2), Some(linf)) => println!(
            "fitted rate: beta_l2 = {:.4} (r^2 {:.4}), beta_linf = {:.4} (r^2 {:.4})",
            l2.beta, l2.r_squared, linf.beta, linf.r_squared
        ),
        _ => println!("fewer than three sample sizes; no rate fitted"),
    }
    Ok(0)
}

fn selfcheck() -> Result<u8, Error> {
    let checks = run_selfcheck(&analytic_derivative)?;
    let mut failed = false;
    for c in &checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed |= !c.passed;
    }
    Ok(if failed { EXIT_CHECK_FAILED } else { 0 })
}

fn kernel_check() -> Result<u8, Error> {
    let suite = FdSuite::default();
    let groups = suite.run(&analytic_derivative)?;
    println!("{:>3} {:>6} {:>11} {:>8} {:>18}", "d", "eta", "comparisons", "failures", "worst err/tol");
    for g in &groups {
        println!(
            "{:>3} {:>6} {:>11} {:>8} {:>18.4}",
            g.dimension, g.bandwidth, g.comparisons, g.failures, g.worst_ratio
        );
    }
    let failed = groups.iter().any(|g| g.failures > 0);
    Ok(if failed { EXIT_CHECK_FAILED } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match &cli.command {
        Command::Benchmark { problem } => benchmark(&cli.common, problem),
        Command::Convergence => convergence(&cli.common),
        Command::Selfcheck => selfcheck(),
        Command::KernelCheck => kernel_check(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
