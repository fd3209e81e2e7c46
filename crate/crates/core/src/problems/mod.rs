//! Benchmark problems: operator, domain, paper defaults and a manufactured
//! solution family per problem.

pub mod families;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::MultiIndex;
use crate::operators::{DifferentiableFunction, OperatorTerm, PdeOperator};
use crate::sampling::{BoxDomain, LabeledSampleSet, Points};

pub use families::{SeparableSum, TanhNetwork, Univariate};

/// Problems addressable by name.
pub const PROBLEM_NAMES: [&str; 8] =
    ["darcy-a1", "darcy-a2", "darcy-a3", "helmholtz-20", "helmholtz-200", "schrodinger", "heat", "poisson3d"];

const DARCY_UNITS: usize = 16;
const POISSON3D_KMAX: usize = 4;

/// Permeability fields for the Darcy problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Permeability {
    /// `a = 1`.
    A1,
    /// `a = exp(x + y)`.
    A2,
    /// Checkerboard: 1 where `floor(4x) + floor(4y)` is even, 10 otherwise.
    A3,
}

impl Permeability {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Permeability::A1 => 1.0,
            Permeability::A2 => (x[0] + x[1]).exp(),
            Permeability::A3 => {
                let parity = ((4.0 * x[0]).floor() as i64 + (4.0 * x[1]).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    1.0
                } else {
                    10.0
                }
            }
        }
    }

    /// Gradient of `a` away from jump sets.
    pub fn gradient(&self, x: &[f64]) -> [f64; 2] {
        match self {
            Permeability::A2 => {
                let a = self.value(x);
                [a, a]
            }
            _ => [0.0, 0.0],
        }
    }
}

/// Schrodinger potential: `V0` inside the hexagon centred at (0.5, 0.5), 0 outside.
/// Points on the hexagon edge count as inside.
pub fn hexagon_potential(x: &[f64]) -> f64 {
    const V0: f64 = 1000.0;
    let dx = (x[0] - 0.5).abs();
    let dy = (x[1] - 0.5).abs();
    let r = dx.max(0.5 * dx + 0.75f64.sqrt() * dy);
    if r <= 0.2 {
        V0
    } else {
        0.0
    }
}

/// Paper settings for a problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemDefaults {
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_initial: usize,
    pub eta: f64,
    pub lambda: f64,
    pub family_size: usize,
    /// Low-rank centers `L` and batch size `q`, for problems run through the low-rank solver.
    pub centers: Option<usize>,
    pub batch: Option<usize>,
}

/// Which manufactured-solution family a problem uses.
#[derive(Clone, Debug, PartialEq)]
pub enum FamilyKind {
    /// Two-layer tanh networks with standard-normal parameters.
    TanhNetworks { dimension: usize, units: usize },
    /// `-0.1 + 0.2x + x(1-x) sin(omega_k x + phi)`.
    Helmholtz { omega: f64 },
    /// Oscillatory modes times `x(1-x)y(1-y)` indexed by `(i, j)`.
    Schrodinger,
    /// Decaying modes times `x(1-x)` indexed by `(i, j)`.
    Heat,
    /// Laplacian eigenfunctions `prod sin(pi k_l x_l)`, `k in {1..4}^3`.
    SineModes,
}

/// Generator `(k, seed) -> u_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFamily {
    pub kind: FamilyKind,
    pub size: usize,
}

impl TestFamily {
    /// Member `k`. Random families draw from `ChaCha8Rng::seed_from_u64(seed)`
    /// on stream `k`, so members are independent of how many are generated.
    pub fn member(&self, k: usize, seed: u64) -> Arc<dyn DifferentiableFunction> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        match &self.kind {
            FamilyKind::TanhNetworks { dimension, units } => {
                let mut normal = || rng.sample::<f64, _>(StandardNormal);
                let weights = (0..*units).map(|_| normal()).collect();
                let directions = (0..*units).map(|_| (0..*dimension).map(|_| normal()).collect()).collect();
                let biases = (0..*units).map(|_| normal()).collect();
                Arc::new(TanhNetwork::new(weights, directions, biases))
            }
            FamilyKind::Helmholtz { omega } => {
                let phi = 2.0 * PI * rng.random::<f64>();
                let omega_k = omega * (0.7 + 0.6 * rng.random::<f64>());
                Arc::new(helmholtz_member(omega_k, phi))
            }
            FamilyKind::Schrodinger => {
                let (i, j) = (k / 10 % 10, k % 10);
                Arc::new(schrodinger_member(i, j))
            }
            FamilyKind::Heat => {
                let (i, j) = (k / 10 % 10, k % 10);
                Arc::new(heat_member(i, j))
            }
            FamilyKind::SineModes => {
                let modes = poisson3d_modes(seed, self.size.max(1));
                Arc::new(sine_mode(modes[k % modes.len()]))
            }
        }
    }
}

/// `-0.1 + 0.2x + x(1-x) sin(omega x + phi)`.
pub fn helmholtz_member(omega: f64, phi: f64) -> SeparableSum {
    SeparableSum::new(
        1,
        vec![
            (1.0, vec![Univariate::Poly(vec![-0.1, 0.2])]),
            (1.0, vec![Univariate::bubble().times(Univariate::sin(omega, phi))]),
        ],
    )
}

/// `1.5 x(1-x) y(1-y) [sin(2 pi m x + p1) sin(2 pi n y + p2) + 0.5 cos(2 pi (m+n) x + p1)
///  + 0.35 sin(2 pi (m x + n y) + p2)]` with `m = i mod 4 + 1`, `n = j mod 4 + 1`,
/// `p1 = 2 pi i / 10`, `p2 = 2 pi j / 10`.
pub fn schrodinger_member(i: usize, j: usize) -> SeparableSum {
    let m = (i % 4 + 1) as f64;
    let n = (j % 4 + 1) as f64;
    let p1 = 2.0 * PI * i as f64 / 10.0;
    let p2 = 2.0 * PI * j as f64 / 10.0;
    let bx = || Univariate::bubble();
    let w = 2.0 * PI;
    SeparableSum::new(
        2,
        vec![
            (1.5, vec![bx().times(Univariate::sin(w * m, p1)), bx().times(Univariate::sin(w * n, p2))]),
            (0.75, vec![bx().times(Univariate::cos(w * (m + n), p1)), bx()]),
            // sin(a + b) = sin(a) cos(b) + cos(a) sin(b)
            (0.525, vec![bx().times(Univariate::sin(w * m, p2)), bx().times(Univariate::cos(w * n, 0.0))]),
            (0.525, vec![bx().times(Univariate::cos(w * m, p2)), bx().times(Univariate::sin(w * n, 0.0))]),
        ],
    )
}

/// `1.2 x(1-x) (sin(2 pi m x + p1) e^{-r t} + 0.3 sin(2 pi (m+1) x) e^{-(r+1) t})`
/// with `m = i mod 4 + 1`, decay `r = j mod 4 + 1`, `p1 = 2 pi i / 10`.
pub fn heat_member(i: usize, j: usize) -> SeparableSum {
    let m = (i % 4 + 1) as f64;
    let r = (j % 4 + 1) as f64;
    let p1 = 2.0 * PI * i as f64 / 10.0;
    SeparableSum::new(
        2,
        vec![
            (1.2, vec![Univariate::bubble().times(Univariate::sin(2.0 * PI * m, p1)), Univariate::Exp { rate: -r }]),
            (
                0.36,
                vec![
                    Univariate::bubble().times(Univariate::sin(2.0 * PI * (m + 1.0), 0.0)),
                    Univariate::Exp { rate: -(r + 1.0) },
                ],
            ),
        ],
    )
}

/// `prod_l sin(pi k_l x_l)`.
pub fn sine_mode(k: [usize; 3]) -> SeparableSum {
    SeparableSum::new(3, vec![(1.0, k.iter().map(|&kl| Univariate::sin(PI * kl as f64, 0.0)).collect())])
}

/// `sin(pi x)` on (0, 1).
pub fn poisson1d_solution() -> SeparableSum {
    SeparableSum::new(1, vec![(1.0, vec![Univariate::sin(PI, 0.0)])])
}

/// `count` distinct modes from `{1..4}^3` in seeded random order (all 64 cycle
/// if more are requested).
pub fn poisson3d_modes(seed: u64, count: usize) -> Vec<[usize; 3]> {
    let all: Vec<[usize; 3]> = (0..POISSON3D_KMAX.pow(3)).map(|f| [f / 16 + 1, f / 4 % 4 + 1, f % 4 + 1]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = sample(&mut rng, all.len(), all.len()).into_vec();
    (0..count).map(|c| all[order[c % all.len()]]).collect()
}

/// A benchmark PDE with its data-generating family.
#[derive(Clone, Debug)]
pub struct PdeProblem {
    pub name: String,
    pub operator: PdeOperator,
    pub domain: BoxDomain,
    pub defaults: ProblemDefaults,
    pub family: TestFamily,
}

impl PdeProblem {
    pub fn dimension(&self) -> usize {
        self.domain.dimension()
    }

    /// Evaluation points for error metrics: a 101-node grid in 1D, 101 x 101
    /// in 2D, and 20 000 seeded draws from the 41^3 grid in 3D.
    pub fn evaluation_points(&self, seed: u64) -> Points {
        match self.dimension() {
            1 | 2 => self.domain.tensor_grid(101),
            _ => {
                let grid = self.domain.tensor_grid(41);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = sample(&mut rng, grid.len(), 20_000.min(grid.len())).into_vec();
                idx.sort_unstable();
                grid.select(&idx)
            }
        }
    }
}

pub fn make_darcy(permeability: Permeability) -> PdeProblem {
    let p = permeability;
    let mut terms = vec![
        OperatorTerm::new(MultiIndex::new(vec![2, 0]), move |x| -p.value(x)),
        OperatorTerm::new(MultiIndex::new(vec![0, 2]), move |x| -p.value(x)),
    ];
    if p == Permeability::A2 {
        terms.push(OperatorTerm::new(MultiIndex::new(vec![1, 0]), move |x| -p.gradient(x)[0]));
        terms.push(OperatorTerm::new(MultiIndex::new(vec![0, 1]), move |x| -p.gradient(x)[1]));
    }
    let name = match p {
        Permeability::A1 => "darcy-a1",
        Permeability::A2 => "darcy-a2",
        Permeability::A3 => "darcy-a3",
    };
    PdeProblem {
        name: name.into(),
        operator: PdeOperator::new(name, 2, terms).expect("valid Darcy operator"),
        domain: BoxDomain::unit_cube(2),
        defaults: ProblemDefaults {
            n_interior: 2500,
            n_boundary: 1500,
            n_initial: 0,
            eta: 1.0,
            lambda: 5e-5,
            family_size: 50,
            centers: None,
            batch: None,
        },
        family: TestFamily { kind: FamilyKind::TanhNetworks { dimension: 2, units: DARCY_UNITS }, size: 50 },
    }
}

pub fn make_helmholtz(omega: f64) -> Result<PdeProblem> {
    if !(omega > 0.0) {
        return Err(Error::Config(format!("omega must be positive, got {omega}")));
    }
    let name = format!("helmholtz-{omega}");
    let terms = vec![
        OperatorTerm::constant(MultiIndex::new(vec![2]), -1.0),
        OperatorTerm::constant(MultiIndex::new(vec![0]), -omega * omega),
    ];
    Ok(PdeProblem {
        operator: PdeOperator::new(name.clone(), 1, terms)?,
        name,
        domain: BoxDomain::unit_cube(1),
        defaults: ProblemDefaults {
            n_interior: 980,
            n_boundary: 20,
            n_initial: 0,
            // 0.1 at omega = 20 and 0.01 at omega = 200
            eta: 2.0 / omega,
            lambda: 1e-7,
            family_size: 100,
            centers: None,
            batch: None,
        },
        family: TestFamily { kind: FamilyKind::Helmholtz { omega }, size: 100 },
    })
}

pub fn make_schrodinger() -> PdeProblem {
    let terms = vec![
        OperatorTerm::constant(MultiIndex::new(vec![2, 0]), -1.0),
        OperatorTerm::constant(MultiIndex::new(vec![0, 2]), -1.0),
        OperatorTerm::new(MultiIndex::new(vec![0, 0]), hexagon_potential),
    ];
    PdeProblem {
        name: "schrodinger".into(),
        operator: PdeOperator::new("schrodinger", 2, terms).expect("valid Schrodinger operator"),
        domain: BoxDomain::unit_cube(2),
        defaults: ProblemDefaults {
            n_interior: 1200,
            n_boundary: 800,
            n_initial: 0,
            eta: 0.08,
            lambda: 3e-3,
            family_size: 100,
            centers: None,
            batch: None,
        },
        family: TestFamily { kind: FamilyKind::Schrodinger, size: 100 },
    }
}

/// Diffusivity of the heat benchmark.
pub const HEAT_DIFFUSIVITY: f64 = 0.1;

pub fn make_heat() -> PdeProblem {
    let terms = vec![
        OperatorTerm::constant(MultiIndex::new(vec![0, 1]), 1.0),
        OperatorTerm::constant(MultiIndex::new(vec![2, 0]), -HEAT_DIFFUSIVITY),
    ];
    PdeProblem {
        name: "heat".into(),
        operator: PdeOperator::new("heat", 2, terms).expect("valid heat operator"),
        domain: BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0], Some(1)).expect("valid space-time box"),
        defaults: ProblemDefaults {
            n_interior: 1800,
            n_boundary: 1800,
            n_initial: 1400,
            eta: 0.08,
            lambda: 1e-5,
            family_size: 100,
            centers: None,
            batch: None,
        },
        family: TestFamily { kind: FamilyKind::Heat, size: 100 },
    }
}

pub fn make_poisson3d() -> PdeProblem {
    PdeProblem {
        name: "poisson3d".into(),
        operator: PdeOperator::negative_laplacian(3),
        domain: BoxDomain::unit_cube(3),
        defaults: ProblemDefaults {
            n_interior: 20_000,
            n_boundary: 0,
            n_initial: 0,
            eta: 0.2,
            lambda: 1e-8,
            family_size: 50,
            centers: Some(1500),
            batch: Some(2000),
        },
        family: TestFamily { kind: FamilyKind::SineModes, size: 50 },
    }
}

/// Problem by CLI name.
pub fn by_name(name: &str) -> Result<PdeProblem> {
    match name {
        "darcy-a1" => Ok(make_darcy(Permeability::A1)),
        "darcy-a2" => Ok(make_darcy(Permeability::A2)),
        "darcy-a3" => Ok(make_darcy(Permeability::A3)),
        "helmholtz-20" => make_helmholtz(20.0),
        "helmholtz-200" => make_helmholtz(200.0),
        "schrodinger" => Ok(make_schrodinger()),
        "heat" => Ok(make_heat()),
        "poisson3d" => Ok(make_poisson3d()),
        other => Err(Error::Config(format!("unknown problem {other:?}; expected one of {}", PROBLEM_NAMES.join(", ")))),
    }
}

/// Problem names as a parsed value, for argument parsers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProblemName(pub String);

impl FromStr for ProblemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if PROBLEM_NAMES.contains(&s) {
            Ok(ProblemName(s.to_string()))
        } else {
            Err(Error::Config(format!("unknown problem {s:?}")))
        }
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Data vector `h(X_i)`: the operator applied to `u` on interior points and
/// `u` itself on boundary and initial points.
pub fn forcing_from_solution(
    problem: &PdeProblem,
    u: &dyn DifferentiableFunction,
    samples: &LabeledSampleSet,
) -> Result<Vec<f64>> {
    (0..samples.len())
        .map(|i| problem.operator.apply_to_function(u, samples.points.row(i), samples.regions[i]))
        .collect()
}
