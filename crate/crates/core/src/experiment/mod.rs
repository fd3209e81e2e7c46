//! Experiment runners shared by the command-line tool and the acceptance suite.
//!
//! Seeds: every random stream of a run derives from the single configured seed
//! through [`derive_seed`], so a run is reproduced exactly by its resolved
//! config. Stream 0 seeds benchmark samples, 3 the test family and 4 the
//! evaluation grid; convergence trials use stream `16 + 1000 N + trial`.

pub mod config;
pub mod selfcheck;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use faer::Mat;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{BasisChoice, ConfigMap, ExperimentConfig};

use crate::error::{Error, Result};
use crate::kernel::GaussianKernel;
use crate::lowrank::{select_centers, BasisMode, BubbleWindow, CenterRule, LowRankModel};
use crate::metrics::{aggregate_trials, relative_errors, ConvergenceStudy, ErrorReport, TrialRecord};
use crate::operators::DifferentiableFunction;
use crate::problems::{forcing_from_solution, PdeProblem};
use crate::sampling::{merge, sample_boundary, sample_initial, sample_interior, LabeledSampleSet, Points};
use crate::solver::{assemble_gram, fit, SolverConfig};

const SAMPLE_STREAM: u64 = 0;
const FAMILY_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

/// First output of `ChaCha8Rng::seed_from_u64(seed)` on `stream`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Which estimator produced a result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Dense,
    LowRank,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dense => "dense",
            Method::LowRank => "low-rank",
        }
    }
}

/// Sizes and regularization of one fit.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_initial: usize,
    pub eta: f64,
    pub lambda: f64,
    pub family_size: usize,
    pub centers: Option<usize>,
    pub batch: usize,
    pub basis: BasisChoice,
    pub sample_seed: u64,
    pub family_seed: u64,
    pub eval_seed: u64,
}

impl RunSpec {
    /// Benchmark settings from a resolved config.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(RunSpec {
            n_interior: cfg.n_interior,
            n_boundary: cfg.n_boundary,
            n_initial: cfg.n_initial,
            eta: cfg.eta,
            lambda: cfg.regularization.lambda(cfg.n_interior + cfg.n_boundary + cfg.n_initial)?,
            family_size: cfg.family_size,
            centers: cfg.centers,
            batch: cfg.batch,
            basis: cfg.basis,
            sample_seed: derive_seed(cfg.seed, SAMPLE_STREAM),
            family_seed: derive_seed(cfg.seed, FAMILY_STREAM),
            eval_seed: derive_seed(cfg.seed, EVAL_STREAM),
        })
    }

    pub fn n_total(&self) -> usize {
        self.n_interior + self.n_boundary + self.n_initial
    }
}

/// Outcome of one fit over a test family.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub method: Method,
    pub n: usize,
    pub report: ErrorReport,
    /// Diagonal jitter the factorization needed.
    pub jitter: f64,
}

/// Labeled samples of a problem: interior, boundary, then initial blocks.
pub fn draw_samples(problem: &PdeProblem, spec: &RunSpec) -> Result<LabeledSampleSet> {
    let dom = &problem.domain;
    let mut sets = vec![
        sample_interior(dom, spec.n_interior, derive_seed(spec.sample_seed, 0)),
        sample_boundary(dom, spec.n_boundary, derive_seed(spec.sample_seed, 1)),
    ];
    if spec.n_initial > 0 {
        sets.push(sample_initial(dom, spec.n_initial, derive_seed(spec.sample_seed, 2))?);
    }
    merge(&sets)
}

fn column(m: &Mat<f64>, k: usize) -> Vec<f64> {
    m.col(k).iter().copied().collect()
}

/// Data `h(X_i)` for every member, `N x M`.
pub fn forcing_matrix(
    problem: &PdeProblem,
    members: &[Arc<dyn DifferentiableFunction>],
    samples: &LabeledSampleSet,
) -> Result<Mat<f64>> {
    let cols: Vec<Vec<f64>> =
        members.par_iter().map(|u| forcing_from_solution(problem, u.as_ref(), samples)).collect::<Result<_>>()?;
    Ok(Mat::from_fn(samples.len(), members.len(), |i, k| cols[k][i]))
}

/// Member values at the evaluation points, `Q x M`.
pub fn truth_matrix(members: &[Arc<dyn DifferentiableFunction>], points: &Points) -> Mat<f64> {
    let cols: Vec<Vec<f64>> = members.par_iter().map(|u| points.rows().map(|x| u.value(x)).collect()).collect();
    Mat::from_fn(points.len(), members.len(), |q, k| cols[k][q])
}

/// Sample, fit (dense, or low-rank when `centers` is set), evaluate every
/// family member and score it. Wall time covers fitting and evaluation, not
/// data generation.
pub fn run_fit(problem: &PdeProblem, spec: &RunSpec) -> Result<RunOutcome> {
    let method = if spec.centers.is_some() { Method::LowRank } else { Method::Dense };
    let n = spec.n_total();
    if spec.family_size == 0 {
        return Ok(RunOutcome { method, n, report: ErrorReport::new(Vec::new(), 0.0), jitter: 0.0 });
    }
    let samples = draw_samples(problem, spec)?;
    let members: Vec<_> = (0..spec.family_size).map(|k| problem.family.member(k, spec.family_seed)).collect();
    let h = forcing_matrix(problem, &members, &samples)?;
    let eval = problem.evaluation_points(spec.eval_seed);
    let truth = truth_matrix(&members, &eval);
    let kernel = GaussianKernel::new(spec.eta, problem.dimension())?;
    let op = &problem.operator;

    let start = Instant::now();
    let (pred, jitter) = match spec.centers {
        None => {
            let gram = assemble_gram(&kernel, op, &samples)?;
            let sol = fit(&gram, &samples, SolverConfig::new(spec.lambda), &kernel, op)?;
            let mut c = h;
            sol.factor().solve_in_place(c.as_mut());
            (sol.evaluate_many(c.as_ref(), &eval)?, sol.jitter())
        }
        Some(l) => {
            let mode = match spec.basis {
                BasisChoice::OperatorApplied => BasisMode::OperatorApplied,
                BasisChoice::Windowed => {
                    BasisMode::windowed(Arc::new(BubbleWindow::new(&problem.domain)), &problem.domain)?
                }
            };
            let centers = select_centers(&samples, l, &CenterRule::FirstInterior, &problem.domain)?;
            let mut model = LowRankModel::new(&kernel, op, centers, mode, spec.lambda, members.len(), false)?;
            for s in (0..samples.len()).step_by(spec.batch) {
                let e = (s + spec.batch).min(samples.len());
                model.accumulate_targets(&samples.slice(s, e), h.as_ref().subrows(s, e - s))?;
            }
            let coeffs = model.finalize()?;
            (model.evaluate_many(coeffs.as_ref(), &eval)?, model.finalize_jitter()?)
        }
    };
    let wall = start.elapsed().as_secs_f64();

    let per_function = (0..members.len())
        .map(|k| relative_errors(&column(&pred, k), &column(&truth, k)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutcome { method, n, report: ErrorReport::new(per_function, wall), jitter })
}

/// Benchmark one problem per its resolved config.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    run_fit(&cfg.problem()?, &RunSpec::from_config(cfg)?)
}

/// Convergence study over `cfg.sizes`, `cfg.trials` independent sample sets
/// per size, interior samples only. The family and evaluation grid are shared
/// by all runs.
pub fn run_convergence(cfg: &ExperimentConfig, mut progress: impl FnMut(&TrialRecord)) -> Result<ConvergenceStudy> {
    if cfg.sizes.is_empty() {
        return Err(Error::Config("convergence needs at least one sample size".into()));
    }
    let problem = cfg.problem()?;
    let mut records = Vec::new();
    for &n in &cfg.sizes {
        let lambda = cfg.regularization.lambda(n)?;
        for trial in 0..cfg.trials {
            let report = if cfg.planted_rate {
                let e = (n as f64).powf(-0.5);
                ErrorReport::new(vec![(e, e); cfg.family_size.max(1)], 0.0)
            } else {
                let spec = RunSpec {
                    n_interior: n,
                    n_boundary: 0,
                    n_initial: 0,
                    lambda,
                    sample_seed: derive_seed(cfg.seed, 16 + 1000 * n as u64 + trial as u64),
                    ..RunSpec::from_config(cfg)?
                };
                run_fit(&problem, &spec)?.report
            };
            let record = TrialRecord { n, trial, report };
            progress(&record);
            records.push(record);
        }
    }
    aggregate_trials(records, Some(cfg.regularization))
}

fn create_file(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

/// `resolved-config.txt` in `dir`.
pub fn write_resolved_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = create_file(dir, "resolved-config.txt")?;
    f.write_all(cfg.to_text().as_bytes())?;
    f.flush()?;
    Ok(())
}

/// `errors.csv` (member, rel_l2, rel_linf) and `summary.csv` (one row).
pub fn write_benchmark_outputs(dir: &Path, cfg: &ExperimentConfig, out: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w =
        csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create_file(dir, "errors.csv")?);
    w.write_record(["member", "rel_l2", "rel_linf"])?;
    for (k, (l2, linf)) in out.report.per_function.iter().enumerate() {
        w.write_record([k.to_string(), format!("{l2:e}"), format!("{linf:e}")])?;
    }
    w.flush()?;
    let mut w =
        csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create_file(dir, "summary.csv")?);
    w.write_record(["problem", "method", "N", "M", "mean_l2", "mean_linf", "wall_time", "jitter"])?;
    w.write_record([
        cfg.problem.clone(),
        out.method.as_str().to_string(),
        out.n.to_string(),
        out.report.per_function.len().to_string(),
        format!("{:e}", out.report.mean_l2),
        format!("{:e}", out.report.mean_linf),
        format!("{:.6}", out.report.wall_time_seconds),
        format!("{:e}", out.jitter),
    ])?;
    w.flush()?;
    Ok(())
}

/// `errors.csv`, `summary.csv` and `slopes.json` for a convergence study.
pub fn write_convergence_outputs(dir: &Path, study: &ConvergenceStudy) -> Result<()> {
    fs::create_dir_all(dir)?;
    study.write_trials_csv(create_file(dir, "errors.csv")?)?;
    study.write_summary_csv(create_file(dir, "summary.csv")?)?;
    let mut f = create_file(dir, "slopes.json")?;
    writeln!(f, "{}", study.slopes_json()?)?;
    f.flush()?;
    Ok(())
}

/// Table header matching [`benchmark_row`].
pub fn benchmark_header() -> String {
    format!(
        "{:<14} {:>9} {:>7} {:>5} {:>13} {:>13} {:>10}",
        "problem", "method", "N", "M", "mean rel L2", "mean rel Linf", "time (s)"
    )
}

/// One table row; time is fit plus evaluation.
pub fn benchmark_row(problem: &str, out: &RunOutcome) -> String {
    format!(
        "{:<14} {:>9} {:>7} {:>5} {:>13.3e} {:>13.3e} {:>10.2}",
        problem,
        out.method.as_str(),
        out.n,
        out.report.per_function.len(),
        out.report.mean_l2,
        out.report.mean_linf,
        out.report.wall_time_seconds
    )
}
