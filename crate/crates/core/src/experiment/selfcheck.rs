//! Built-in consistency checks run by the `selfcheck` and `kernel-check` commands.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kernel::{GaussianKernel, MultiIndex};
use crate::linalg::{mat_vec, norm2, symmetric_eigenvalues};
use crate::lowrank::{BasisMode, LowRankModel};
use crate::operators::{PdeOperator, Region};
use crate::problems::{make_darcy, make_heat, make_helmholtz, Permeability};
use crate::sampling::{merge, sample_boundary, sample_initial, sample_interior, BoxDomain, LabeledSampleSet, Points};
use crate::solver::{assemble_gram, fit, SolverConfig};

/// Result of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// `(kernel, alpha, beta, x, y) -> d^alpha_x d^beta_y K(x, y)`.
pub type DerivativeFn = dyn Fn(&GaussianKernel, &MultiIndex, &MultiIndex, &[f64], &[f64]) -> f64 + Sync;

/// The library's analytic derivative.
pub fn analytic_derivative(k: &GaussianKernel, a: &MultiIndex, b: &MultiIndex, x: &[f64], y: &[f64]) -> f64 {
    k.deriv(a, b, x, y).expect("derivative within kernel capability")
}

/// The Gaussian derivative product formula with a caller-supplied Hermite
/// polynomial, for negative controls.
pub fn derivative_with_hermite(
    hermite_fn: fn(u32, f64) -> f64,
    k: &GaussianKernel,
    a: &MultiIndex,
    b: &MultiIndex,
    x: &[f64],
    y: &[f64],
) -> f64 {
    let eta = k.bandwidth();
    let mut v = k.eval(x, y).expect("valid points");
    for i in 0..x.len() {
        let n = a.exponents()[i] + b.exponents()[i];
        v *= (-1.0 / eta).powi(n as i32) * hermite_fn(n, (x[i] - y[i]) / eta);
    }
    if b.order() % 2 == 1 {
        -v
    } else {
        v
    }
}

/// Central weights of accuracy order 8 for the `n`-th derivative on the
/// integer offsets `-r..=r` (Fornberg's recursion).
pub fn central_weights(n: usize) -> Vec<(i32, f64)> {
    let r = n.div_ceil(2) + 3;
    let nodes: Vec<f64> = (-(r as i32)..=r as i32).map(f64::from).collect();
    let m = nodes.len();
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![0.0; n + 1]; m];
    let mut c1 = 1.0;
    let mut c4 = nodes[0];
    c[0][0] = 1.0;
    for i in 1..m {
        let mn = i.min(n);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i];
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] *= c4 / c3;
        }
        c1 = c2;
    }
    nodes.iter().zip(&c).map(|(&z, w)| (z as i32, w[n])).filter(|(_, w)| w.abs() > 1e-13).collect()
}

/// Nested central differences of `f` over the coordinates of `p` with the
/// given per-coordinate orders and step `h`.
pub fn nested_difference(f: &dyn Fn(&[f64]) -> f64, p: &[f64], orders: &[u32], h: f64) -> f64 {
    let max = orders.iter().copied().max().unwrap_or(0) as usize;
    let stencils: Vec<Vec<(i32, f64)>> = (0..=max).map(central_weights).collect();
    fn go(
        f: &dyn Fn(&[f64]) -> f64,
        st: &[Vec<(i32, f64)>],
        p: &mut Vec<f64>,
        orders: &[u32],
        axis: usize,
        h: f64,
    ) -> f64 {
        let Some(off) = orders[axis..].iter().position(|&o| o > 0) else {
            return f(p);
        };
        let ax = axis + off;
        let n = orders[ax] as usize;
        let base = p[ax];
        let mut acc = 0.0;
        for &(k, w) in &st[n] {
            p[ax] = base + f64::from(k) * h;
            acc += w * go(f, st, p, orders, ax + 1, h);
        }
        p[ax] = base;
        acc / h.powi(n as i32)
    }
    go(f, &stencils, &mut p.to_vec(), orders, 0, h)
}

/// Settings of the finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct FdSuite {
    pub dimensions: Vec<usize>,
    pub bandwidths: Vec<f64>,
    pub pairs: usize,
    pub max_total_order: u32,
    /// Step as a fraction of the bandwidth.
    pub step_ratio: f64,
    pub rel_tol: f64,
    /// Absolute tolerance on bandwidth-scaled derivatives `eta^{|a|+|b|} d^a d^b K`.
    pub abs_tol: f64,
    pub seed: u64,
}

impl Default for FdSuite {
    fn default() -> Self {
        FdSuite {
            dimensions: vec![1, 2, 3],
            bandwidths: vec![0.05, 0.1, 1.0],
            pairs: 100,
            max_total_order: 4,
            step_ratio: 0.03,
            rel_tol: 1e-5,
            abs_tol: 1e-10,
            seed: 2024,
        }
    }
}

/// Per `(d, eta)` group statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct FdGroup {
    pub dimension: usize,
    pub bandwidth: f64,
    pub comparisons: usize,
    pub failures: usize,
    /// Largest `|fd - exact| / (rel_tol |exact| + abs_tol)` in scaled units; pass means <= 1.
    pub worst_ratio: f64,
}

impl FdSuite {
    /// Compare `deriv` with nested differences of the kernel value. Pairs are
    /// `x` uniform in the unit cube and `y = x + eta u` with `u` uniform in
    /// `[-2, 2]^d`, so that separations are on the bandwidth scale.
    pub fn run(&self, deriv: &DerivativeFn) -> Result<Vec<FdGroup>> {
        let mut groups = Vec::new();
        for &d in &self.dimensions {
            for &eta in &self.bandwidths {
                let k = GaussianKernel::new(eta, d)?.with_max_order(self.max_total_order);
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (d as u64) << 32 ^ eta.to_bits());
                let indices = MultiIndex::all_up_to(2 * d, self.max_total_order);
                let h = self.step_ratio * eta;
                let mut g = FdGroup { dimension: d, bandwidth: eta, comparisons: 0, failures: 0, worst_ratio: 0.0 };
                for _ in 0..self.pairs {
                    let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                    let y: Vec<f64> = x.iter().map(|xi| xi + eta * (4.0 * rng.random::<f64>() - 2.0)).collect();
                    let p: Vec<f64> = x.iter().chain(&y).copied().collect();
                    let value = |q: &[f64]| k.eval(&q[..d], &q[d..]).expect("valid points");
                    for ab in &indices {
                        let e = ab.exponents();
                        let a = MultiIndex::new(e[..d].to_vec());
                        let b = MultiIndex::new(e[d..].to_vec());
                        let scale = eta.powi(ab.order() as i32);
                        let exact = deriv(&k, &a, &b, &x, &y) * scale;
                        let fd = nested_difference(&value, &p, e, h) * scale;
                        let ratio = (fd - exact).abs() / (self.rel_tol * exact.abs() + self.abs_tol);
                        g.comparisons += 1;
                        if !(ratio <= 1.0) {
                            g.failures += 1;
                        }
                        g.worst_ratio = g.worst_ratio.max(ratio);
                    }
                }
                groups.push(g);
            }
        }
        Ok(groups)
    }
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name: name.to_string(), passed, detail }
}

/// Finite-difference check of kernel derivatives.
pub fn check_kernel_derivatives(suite: &FdSuite, deriv: &DerivativeFn) -> Result<CheckOutcome> {
    let groups = suite.run(deriv)?;
    let failures: usize = groups.iter().map(|g| g.failures).sum();
    let total: usize = groups.iter().map(|g| g.comparisons).sum();
    let worst = groups.iter().fold(0.0f64, |m, g| m.max(g.worst_ratio));
    Ok(outcome(
        "kernel derivatives vs finite differences",
        failures == 0,
        format!("{failures} of {total} comparisons out of tolerance, worst error/tolerance {worst:.3}"),
    ))
}

/// Operator and sample set for a random PSD configuration.
fn psd_case(rng: &mut ChaCha8Rng, n: usize, case: usize) -> Result<(PdeOperator, LabeledSampleSet, f64)> {
    let seed = rng.random::<u64>();
    let eta = 0.05 + 0.95 * rng.random::<f64>();
    let split = |n: usize, dom: &BoxDomain, with_initial: bool| -> Result<LabeledSampleSet> {
        let nb = n / 5;
        let n0 = if with_initial { n / 5 } else { 0 };
        let mut sets = vec![sample_interior(dom, n - nb - n0, seed), sample_boundary(dom, nb, seed + 1)];
        if with_initial {
            sets.push(sample_initial(dom, n0, seed + 2)?);
        }
        merge(&sets)
    };
    Ok(match case % 5 {
        0 => {
            let d = 1 + rng.random_range(0..3);
            let dom = BoxDomain::unit_cube(d);
            (PdeOperator::identity(d), split(n, &dom, false)?, eta)
        }
        1 => {
            let d = 1 + rng.random_range(0..3);
            let dom = BoxDomain::unit_cube(d);
            (PdeOperator::negative_laplacian(d), split(n, &dom, false)?, eta)
        }
        2 => {
            let p = make_helmholtz(20.0)?;
            let s = split(n, &p.domain, false)?;
            (p.operator, s, eta)
        }
        3 => {
            let p = make_darcy(Permeability::A2);
            let s = split(n, &p.domain, false)?;
            (p.operator, s, eta)
        }
        _ => {
            let p = make_heat();
            let s = split(n, &p.domain, true)?;
            (p.operator, s, eta)
        }
    })
}

/// Worst normalized eigenvalue and asymmetry over random Gram configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdSummary {
    pub configurations: usize,
    /// `min_eig / ||G||_2`, minimized over configurations.
    pub worst_min_eig: f64,
    /// `||G - G^T||_max / max|G|`, maximized over configurations.
    pub worst_asymmetry: f64,
}

pub fn gram_psd_summary(configurations: usize, max_n: usize, seed: u64) -> Result<PsdSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = PsdSummary { configurations, worst_min_eig: f64::INFINITY, worst_asymmetry: 0.0 };
    for case in 0..configurations {
        let n = rng.random_range(max_n / 4..=max_n).max(5);
        let (op, samples, eta) = psd_case(&mut rng, n, case)?;
        let k = GaussianKernel::new(eta, op.dimension())?;
        let g = assemble_gram(&k, &op, &samples)?;
        let m = g.matrix();
        let ev = symmetric_eigenvalues(m)?;
        let norm = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut asym = 0.0f64;
        let mut maxabs = 0.0f64;
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
                maxabs = maxabs.max(m[(i, j)].abs());
            }
        }
        s.worst_min_eig = s.worst_min_eig.min(ev[0] / norm);
        s.worst_asymmetry = s.worst_asymmetry.max(asym / maxabs);
    }
    Ok(s)
}

pub fn check_gram_psd(configurations: usize, max_n: usize, seed: u64) -> Result<CheckOutcome> {
    let s = gram_psd_summary(configurations, max_n, seed)?;
    Ok(outcome(
        "generalized Gram matrices are symmetric PSD",
        s.worst_min_eig >= -1e-8 && s.worst_asymmetry <= 1e-10,
        format!(
            "{} configurations, min eig/||G|| = {:.3e}, asymmetry = {:.3e}",
            s.configurations, s.worst_min_eig, s.worst_asymmetry
        ),
    ))
}

/// Identity operator fit against a directly factored `K + lambda N I`.
pub fn check_krr_reduction(datasets: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..datasets {
        let d = 1 + rng.random_range(0..3);
        let n = rng.random_range(10..60);
        let eta = 0.2 + 0.3 * rng.random::<f64>();
        let lambda = 1e-3;
        let pts: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let points = Points::new(d, pts)?;
        let samples = LabeledSampleSet::new(points.clone(), vec![Region::Interior; n], Some(y.clone()), 0)?;
        let k = GaussianKernel::new(eta, d)?;
        let op = PdeOperator::identity(d);
        let sol = fit(&assemble_gram(&k, &op, &samples)?, &samples, SolverConfig::new(lambda), &k, &op)?;
        let c = sol.apply_samples()?;

        let mut a = Mat::from_fn(n, n, |i, j| k.eval(points.row(i), points.row(j)).expect("valid points"));
        for i in 0..n {
            a[(i, i)] += lambda * n as f64;
        }
        let llt = a.llt(Side::Lower).map_err(|e| crate::Error::Numerical(format!("{e:?}")))?;
        let rhs = Mat::from_fn(n, 1, |i, _| y[i]);
        let direct = llt.solve(&rhs);
        let diff: Vec<f64> = (0..n).map(|i| c[i] - direct[(i, 0)]).collect();
        let dn: Vec<f64> = (0..n).map(|i| direct[(i, 0)]).collect();
        worst = worst.max(norm2(&diff) / norm2(&dn));
    }
    Ok(outcome(
        "identity operator reduces to kernel ridge regression",
        worst <= 1e-12,
        format!("{datasets} datasets, worst relative coefficient difference {worst:.3e}"),
    ))
}

/// Dense and low-rank solutions on identical well-separated 1D Poisson data.
#[derive(Clone, Debug, PartialEq)]
pub struct AgreementSummary {
    pub dense_residual: f64,
    pub lowrank_residual: f64,
    pub prediction_difference: f64,
}

/// `n` Poisson samples on an even grid of (0, 1) plus both endpoints,
/// `L = N`, centers equal to the samples, operator-applied basis.
pub fn lowrank_dense_agreement(n: usize, eta: f64, lambda: f64) -> Result<AgreementSummary> {
    let ni = n - 2;
    let mut coords: Vec<f64> = (1..=ni).map(|i| i as f64 / (ni + 1) as f64).collect();
    coords.extend([0.0, 1.0]);
    let mut regions = vec![Region::Interior; ni];
    regions.extend([Region::Boundary; 2]);
    let pi = std::f64::consts::PI;
    let y: Vec<f64> = coords
        .iter()
        .zip(&regions)
        .map(|(x, r)| if *r == Region::Interior { pi * pi * (pi * x).sin() } else { 0.0 })
        .collect();
    let samples = LabeledSampleSet::new(Points::new(1, coords)?, regions, Some(y.clone()), 0)?;
    let k = GaussianKernel::new(eta, 1)?;
    let op = PdeOperator::negative_laplacian(1);

    let gram = assemble_gram(&k, &op, &samples)?;
    let sol = fit(&gram, &samples, SolverConfig::new(lambda), &k, &op)?;
    let c_dense = sol.apply_samples()?;
    let r_dense: Vec<f64> = mat_vec(gram.matrix(), &c_dense).iter().zip(&y).map(|(a, b)| a - b).collect();

    let mut model = LowRankModel::new(&k, &op, samples.clone(), BasisMode::OperatorApplied, lambda, 1, false)?;
    model.accumulate_batch(&samples)?;
    let c_lr: Vec<f64> = model.finalize()?.col(0).iter().copied().collect();
    let design = model.design_block(&samples)?;
    let r_lr: Vec<f64> = mat_vec(design.as_ref(), &c_lr).iter().zip(&y).map(|(a, b)| a - b).collect();

    let grid = BoxDomain::unit_cube(1).tensor_grid(101);
    let u_dense = sol.evaluate(&c_dense, &grid)?;
    let u_lr = model.evaluate(&c_lr, &grid)?;
    let du: Vec<f64> = u_dense.iter().zip(&u_lr).map(|(a, b)| a - b).collect();
    Ok(AgreementSummary {
        dense_residual: norm2(&r_dense) / norm2(&y),
        lowrank_residual: norm2(&r_lr) / norm2(&y),
        prediction_difference: norm2(&du) / norm2(&u_dense),
    })
}

pub fn check_lowrank_dense(n: usize, eta: f64, lambda: f64) -> Result<CheckOutcome> {
    let s = lowrank_dense_agreement(n, eta, lambda)?;
    Ok(outcome(
        "low-rank solution matches dense solution",
        s.dense_residual <= 1e-6 && s.lowrank_residual <= 1e-6 && s.prediction_difference <= 1e-4,
        format!(
            "residuals {:.3e} (dense) {:.3e} (low-rank), prediction difference {:.3e}",
            s.dense_residual, s.lowrank_residual, s.prediction_difference
        ),
    ))
}

/// Settings of the low-rank/dense comparison.
pub const AGREEMENT_N: usize = 100;
pub const AGREEMENT_ETA: f64 = 0.01;
pub const AGREEMENT_LAMBDA: f64 = 1e-12;

/// The `selfcheck` battery at reduced sizes. Deterministic: the same build
/// produces the same report.
pub fn run_selfcheck(deriv: &DerivativeFn) -> Result<Vec<CheckOutcome>> {
    let fd = FdSuite { pairs: 20, ..FdSuite::default() };
    Ok(vec![
        check_kernel_derivatives(&fd, deriv)?,
        check_gram_psd(10, 60, 11)?,
        check_krr_reduction(5, 12)?,
        check_lowrank_dense(AGREEMENT_N, AGREEMENT_ETA, AGREEMENT_LAMBDA)?,
    ])
}

/// Hermite recursion with a wrong recurrence coefficient, for negative controls.
pub fn corrupted_hermite(n: u32, t: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 2.0 * t;
    for k in 1..n {
        let next = 2.0 * t * cur - 2.0 * f64::from(k + 1) * prev;
        prev = cur;
        cur = next;
    }
    cur
}
