//! Flat `key=value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::Schedule;
use crate::problems::{by_name, PdeProblem};

/// Keys accepted in config files and `--set` overrides.
pub const KEYS: [&str; 16] = [
    "problem",
    "n_interior",
    "n_boundary",
    "n_initial",
    "eta",
    "lambda",
    "alpha",
    "c",
    "family_size",
    "seed",
    "trials",
    "centers",
    "batch",
    "basis",
    "sizes",
    "planted_rate",
];

/// Raw key/value pairs, later entries overriding earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap(BTreeMap<String, String>);

impl ConfigMap {
    pub fn new() -> Self {
        ConfigMap::default()
    }

    /// Parse `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            map.set_pair(line).map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(map)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Apply one `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?}; known keys: {}", KEYS.join(", "))));
        }
        self.0.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None | Some("") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Config(format!("invalid value {v:?} for {key}"))),
        }
    }
}

/// Basis for low-rank runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisChoice {
    OperatorApplied,
    Windowed,
}

impl FromStr for BasisChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "operator" => Ok(BasisChoice::OperatorApplied),
            "windowed" => Ok(BasisChoice::Windowed),
            _ => Err(Error::Config(format!("basis must be operator or windowed, got {s:?}"))),
        }
    }
}

impl BasisChoice {
    fn as_str(&self) -> &'static str {
        match self {
            BasisChoice::OperatorApplied => "operator",
            BasisChoice::Windowed => "windowed",
        }
    }
}

/// Fully resolved experiment settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: String,
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_initial: usize,
    pub eta: f64,
    pub regularization: Schedule,
    pub family_size: usize,
    pub seed: u64,
    pub trials: usize,
    /// Low-rank centers `L`; `None` selects the dense solver.
    pub centers: Option<usize>,
    pub batch: usize,
    pub basis: BasisChoice,
    /// Sample sizes of a convergence study.
    pub sizes: Vec<usize>,
    /// Replace every fitted error by `N^{-1/2}` (harness self-test).
    pub planted_rate: bool,
}

const DEFAULT_SIZES: [usize; 4] = [10_000, 20_000, 40_000, 80_000];
const DEFAULT_TRIALS: usize = 5;

impl ExperimentConfig {
    /// Fill unspecified fields from the named problem's defaults. `fallback_problem`
    /// is used when the map has no `problem` key.
    pub fn resolve(map: &ConfigMap, fallback_problem: &str) -> Result<Self> {
        let problem_name = map.get("problem").unwrap_or(fallback_problem).to_string();
        let problem = by_name(&problem_name)?;
        let d = &problem.defaults;

        let lambda: Option<f64> = map.parsed("lambda")?;
        let alpha: Option<f64> = map.parsed("alpha")?;
        let c: Option<f64> = map.parsed("c")?;
        let regularization = match (lambda, alpha, c) {
            (l, None, None) => {
                let lambda = l.unwrap_or(d.lambda);
                if !(lambda > 0.0) {
                    return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
                }
                Schedule::Fixed { lambda }
            }
            (None, Some(alpha), Some(c)) => {
                // validates the exponent range
                crate::metrics::lambda_schedule(alpha, c, 1)?;
                Schedule::Power { alpha, c }
            }
            _ => return Err(Error::Config("set either lambda, or both alpha and c".into())),
        };

        let eta = map.parsed("eta")?.unwrap_or(d.eta);
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        let sizes = match map.get("sizes") {
            None | Some("") => DEFAULT_SIZES.to_vec(),
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("invalid size {s:?} in sizes"))))
                .collect::<Result<Vec<_>>>()?,
        };
        let trials = map.parsed("trials")?.unwrap_or(DEFAULT_TRIALS);
        if trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let centers = map.parsed("centers")?.or(d.centers);
        let batch = map.parsed("batch")?.or(d.batch).unwrap_or(2000);
        if batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        let n_boundary = map.parsed("n_boundary")?.unwrap_or(d.n_boundary);
        let n_initial = map.parsed("n_initial")?.unwrap_or(d.n_initial);
        let basis = match map.parsed("basis")? {
            Some(b) => b,
            None if n_boundary == 0 && n_initial == 0 => BasisChoice::Windowed,
            None => BasisChoice::OperatorApplied,
        };
        Ok(ExperimentConfig {
            problem: problem_name,
            n_interior: map.parsed("n_interior")?.unwrap_or(d.n_interior),
            n_boundary,
            n_initial,
            eta,
            regularization,
            family_size: map.parsed("family_size")?.unwrap_or(d.family_size),
            seed: map.parsed("seed")?.unwrap_or(0),
            trials,
            centers,
            batch,
            basis,
            sizes,
            planted_rate: map.parsed("planted_rate")?.unwrap_or(false),
        })
    }

    pub fn problem(&self) -> Result<PdeProblem> {
        by_name(&self.problem)
    }

    /// `key=value` lines that reproduce this configuration when parsed back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        line("problem", self.problem.clone());
        line("n_interior", self.n_interior.to_string());
        line("n_boundary", self.n_boundary.to_string());
        line("n_initial", self.n_initial.to_string());
        line("eta", format!("{:e}", self.eta));
        match self.regularization {
            Schedule::Fixed { lambda } => line("lambda", format!("{lambda:e}")),
            Schedule::Power { alpha, c } => {
                line("alpha", format!("{alpha}"));
                line("c", format!("{c:e}"));
            }
        }
        line("family_size", self.family_size.to_string());
        line("seed", self.seed.to_string());
        line("trials", self.trials.to_string());
        if let Some(l) = self.centers {
            line("centers", l.to_string());
        }
        line("batch", self.batch.to_string());
        line("basis", self.basis.as_str().to_string());
        line("sizes", self.sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
        line("planted_rate", self.planted_rate.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ExperimentConfig::resolve(&ConfigMap::new(), "darcy-a1").unwrap();
        assert_eq!(cfg.n_interior + cfg.n_boundary, 4000);
        assert_eq!(cfg.regularization, Schedule::Fixed { lambda: 5e-5 });
        assert_eq!(cfg.centers, None);

        let mut map = ConfigMap::parse("# comment\nproblem = poisson3d\n\nalpha=0.4\nc=1e-7\n").unwrap();
        map.set_pair("trials=2").unwrap();
        let cfg = ExperimentConfig::resolve(&map, "darcy-a1").unwrap();
        assert_eq!(cfg.problem, "poisson3d");
        assert_eq!(cfg.regularization, Schedule::Power { alpha: 0.4, c: 1e-7 });
        assert_eq!(cfg.basis, BasisChoice::Windowed);
        assert_eq!(cfg.centers, Some(1500));
        assert_eq!(cfg.trials, 2);
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut map = ConfigMap::new();
        map.set("sizes", "100,200,400").unwrap();
        map.set("seed", "9").unwrap();
        let cfg = ExperimentConfig::resolve(&map, "heat").unwrap();
        let back = ExperimentConfig::resolve(&ConfigMap::parse(&cfg.to_text()).unwrap(), "darcy-a1").unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(ConfigMap::parse("nonsense").is_err());
        assert!(ConfigMap::parse("colour=blue").is_err());
        let mut map = ConfigMap::new();
        map.set("alpha", "0.7").unwrap();
        map.set("c", "1").unwrap();
        assert!(ExperimentConfig::resolve(&map, "poisson3d").is_err());
        let mut map = ConfigMap::new();
        map.set("lambda", "1e-3").unwrap();
        map.set("alpha", "0.3").unwrap();
        assert!(ExperimentConfig::resolve(&map, "poisson3d").is_err());
        assert!(ExperimentConfig::resolve(&ConfigMap::new(), "burgers").is_err());
        let mut map = ConfigMap::new();
        map.set("eta", "abc").unwrap();
        assert!(ExperimentConfig::resolve(&map, "heat").is_err());
    }
}
