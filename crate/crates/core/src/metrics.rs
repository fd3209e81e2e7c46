//! Error metrics, trial aggregation, regularization schedules and rate fits.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// `(||pred - truth||_2 / ||truth||_2, ||pred - truth||_inf / ||truth||_inf)` over
/// grid values.
pub fn relative_errors(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} reference values", pred.len(), truth.len())));
    }
    let (mut d2, mut t2, mut dinf, mut tinf) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (p, t) in pred.iter().zip(truth) {
        let d = p - t;
        d2 += d * d;
        t2 += t * t;
        dinf = dinf.max(d.abs());
        tinf = tinf.max(t.abs());
    }
    if t2 == 0.0 {
        return Err(Error::UndefinedMetric("reference values have zero norm".into()));
    }
    Ok(((d2 / t2).sqrt(), dinf / tinf))
}

/// `lambda = c N^{-alpha}` with `alpha` in `(0, 1/2)`.
pub fn lambda_schedule(alpha: f64, c: f64, n: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Config(format!("schedule exponent must lie in (0, 1/2), got {alpha}")));
    }
    if !(c > 0.0) {
        return Err(Error::Config(format!("schedule constant must be positive, got {c}")));
    }
    if n == 0 {
        return Err(Error::Config("schedule needs N >= 1".into()));
    }
    Ok(c * (n as f64).powf(-alpha))
}

/// Least-squares fit of `log(error)` on `log(N)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    /// Decay exponent: `error ~ N^{-beta}`.
    pub beta: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_rate(sample_sizes: &[f64], mean_errors: &[f64]) -> Result<RateFit> {
    if sample_sizes.len() != mean_errors.len() {
        return Err(Error::Shape("sample sizes and errors differ in length".into()));
    }
    if sample_sizes.len() < 3 {
        return Err(Error::Config(format!("rate fit needs at least 3 points, got {}", sample_sizes.len())));
    }
    if let Some(bad) = sample_sizes.iter().chain(mean_errors).find(|&&v| !(v > 0.0)) {
        return Err(Error::Config(format!("rate fit needs positive inputs, got {bad}")));
    }
    let xs: Vec<f64> = sample_sizes.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = mean_errors.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("rate fit needs at least two distinct sample sizes".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared =
        if ss_tot <= f64::EPSILON * ys.iter().map(|y| y * y).sum::<f64>() { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFit { beta: -slope, intercept, r_squared })
}

/// Errors of one fitted model over a test family.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub per_function: Vec<(f64, f64)>,
    pub mean_l2: f64,
    pub mean_linf: f64,
    /// Fit plus evaluation time.
    pub wall_time_seconds: f64,
}

impl ErrorReport {
    /// Means of the per-function entries; both are 0 for an empty family.
    pub fn new(per_function: Vec<(f64, f64)>, wall_time_seconds: f64) -> Self {
        let m = per_function.len();
        let (mean_l2, mean_linf) = if m == 0 {
            (0.0, 0.0)
        } else {
            let (a, b) = per_function.iter().fold((0.0, 0.0), |(a, b), e| (a + e.0, b + e.1));
            (a / m as f64, b / m as f64)
        };
        ErrorReport { per_function, mean_l2, mean_linf, wall_time_seconds }
    }
}

/// One trial at one sample size.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    pub report: ErrorReport,
}

/// Mean and standard error across trials at one sample size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeSummary {
    pub n: usize,
    pub trials: usize,
    pub mean_l2: f64,
    /// Absent for a single trial.
    pub se_l2: Option<f64>,
    pub mean_linf: f64,
    pub se_linf: Option<f64>,
}

/// Regularization used in a convergence study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Fixed { lambda: f64 },
    Power { alpha: f64, c: f64 },
}

impl Schedule {
    pub fn lambda(&self, n: usize) -> Result<f64> {
        match *self {
            Schedule::Fixed { lambda } => Ok(lambda),
            Schedule::Power { alpha, c } => lambda_schedule(alpha, c, n),
        }
    }
}

/// Per-size summaries and rate fits for a convergence run.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStudy {
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<SizeSummary>,
    pub slope_l2: Option<RateFit>,
    pub slope_linf: Option<RateFit>,
    pub schedule: Option<Schedule>,
}

fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Group trial reports by sample size (ascending), compute means and standard
/// errors, and fit rates on the per-size means when at least three sizes are
/// present.
pub fn aggregate_trials(records: Vec<TrialRecord>, schedule: Option<Schedule>) -> Result<ConvergenceStudy> {
    let mut sizes: Vec<usize> = records.iter().map(|r| r.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut summaries = Vec::with_capacity(sizes.len());
    for &n in &sizes {
        let mut trials: Vec<&TrialRecord> = records.iter().filter(|r| r.n == n).collect();
        trials.sort_by_key(|r| r.trial);
        let l2: Vec<f64> = trials.iter().map(|r| r.report.mean_l2).collect();
        let linf: Vec<f64> = trials.iter().map(|r| r.report.mean_linf).collect();
        let (mean_l2, se_l2) = mean_se(&l2);
        let (mean_linf, se_linf) = mean_se(&linf);
        summaries.push(SizeSummary { n, trials: trials.len(), mean_l2, se_l2, mean_linf, se_linf });
    }
    let (slope_l2, slope_linf) = if summaries.len() >= 3 {
        let ns: Vec<f64> = summaries.iter().map(|s| s.n as f64).collect();
        let l2: Vec<f64> = summaries.iter().map(|s| s.mean_l2).collect();
        let linf: Vec<f64> = summaries.iter().map(|s| s.mean_linf).collect();
        (Some(fit_rate(&ns, &l2)?), Some(fit_rate(&ns, &linf)?))
    } else {
        (None, None)
    };
    Ok(ConvergenceStudy { records, summaries, slope_l2, slope_linf, schedule })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl ConvergenceStudy {
    /// Columns `N,trial,rel_l2,rel_linf,wall_time`.
    pub fn write_trials_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv_writer(w);
        w.write_record(["N", "trial", "rel_l2", "rel_linf", "wall_time"])?;
        for r in &self.records {
            w.write_record([
                r.n.to_string(),
                r.trial.to_string(),
                format!("{:e}", r.report.mean_l2),
                format!("{:e}", r.report.mean_linf),
                format!("{:.6}", r.report.wall_time_seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Columns `N,mean_l2,se_l2,mean_linf,se_linf`; absent standard errors are empty.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv_writer(w);
        w.write_record(["N", "mean_l2", "se_l2", "mean_linf", "se_linf"])?;
        for s in &self.summaries {
            w.write_record([
                s.n.to_string(),
                format!("{:e}", s.mean_l2),
                fmt_opt(s.se_l2),
                format!("{:e}", s.mean_linf),
                fmt_opt(s.se_linf),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fitted slopes as one line of JSON.
    pub fn slopes_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Slopes<'a> {
            beta_l2: Option<f64>,
            beta_linf: Option<f64>,
            r_squared_l2: Option<f64>,
            r_squared_linf: Option<f64>,
            schedule: &'a Option<Schedule>,
        }
        Ok(serde_json::to_string(&Slopes {
            beta_l2: self.slope_l2.map(|f| f.beta),
            beta_linf: self.slope_linf.map(|f| f.beta),
            r_squared_l2: self.slope_l2.map(|f| f.r_squared),
            r_squared_linf: self.slope_linf.map(|f| f.r_squared),
            schedule: &self.schedule,
        })?)
    }
}
