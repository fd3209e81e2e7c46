use std::sync::Arc;

use faer::Mat;
use kernel_operator::experiment::selfcheck::nested_difference;
use kernel_operator::linalg::{norm2, symmetric_eigenvalues};
use kernel_operator::lowrank::{BasisMode, BubbleWindow, LowRankModel};
use kernel_operator::metrics::{aggregate_trials, fit_rate, relative_errors, ErrorReport, TrialRecord};
use kernel_operator::operators::leibniz_windowed_partial;
use kernel_operator::problems::{by_name, make_darcy, PdeProblem, Permeability, PROBLEM_NAMES};
use kernel_operator::sampling::{merge, sample_boundary, sample_interior};
use kernel_operator::solver::{assemble_gram, fit, regularized_product, SolverConfig};
use kernel_operator::{
    BoxDomain, DifferentiableFunction, GaussianKernel, LabeledSampleSet, MultiIndex, PdeOperator, Points, Region,
};
use proptest::prelude::*;

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, d)
}

fn index(d: usize, max: u32) -> impl Strategy<Value = MultiIndex> {
    prop::collection::vec(0..=max, d)
        .prop_filter("order within budget", move |e| e.iter().sum::<u32>() <= max)
        .prop_map(MultiIndex::new)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

/// Poisson-style labeled samples in the unit cube.
fn labeled(d: usize, ni: usize, nb: usize, seed: u64) -> LabeledSampleSet {
    let dom = BoxDomain::unit_cube(d);
    merge(&[sample_interior(&dom, ni, seed), sample_boundary(&dom, nb, seed + 1)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_derivatives_are_symmetric(
        d in 1usize..=3, eta in 0.05..1.0f64, seed in any::<u64>(),
        a in index(3, 3), b in index(3, 3),
    ) {
        let k = GaussianKernel::new(eta, d).unwrap().with_max_order(3);
        let a = MultiIndex::new(a.exponents()[..d].to_vec());
        let b = MultiIndex::new(b.exponents()[..d].to_vec());
        let x: Vec<f64> = (0..d).map(|i| ((seed >> (8 * i)) & 0xff) as f64 / 255.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 0.3 * eta).collect();
        let lhs = k.deriv(&a, &b, &x, &y).unwrap();
        let rhs = k.deriv(&b, &a, &y, &x).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn odd_derivatives_vanish_on_the_diagonal(x in point(3), a in index(3, 3), eta in 0.05..1.0f64) {
        let k = GaussianKernel::new(eta, 3).unwrap();
        let v = k.deriv(&a, &MultiIndex::zeros(3), &x, &x).unwrap();
        if a.exponents().iter().any(|e| e % 2 == 1) {
            prop_assert_eq!(v, 0.0);
        }
        prop_assert_eq!(k.deriv(&MultiIndex::zeros(3), &MultiIndex::zeros(3), &x, &x).unwrap(), 1.0);
    }

    #[test]
    fn zero_order_derivative_is_the_value(x in point(2), y in point(2), eta in 0.05..1.0f64) {
        let k = GaussianKernel::new(eta, 2).unwrap();
        prop_assert_eq!(k.deriv(&MultiIndex::zeros(2), &MultiIndex::zeros(2), &x, &y).unwrap(), k.eval(&x, &y).unwrap());
    }

    #[test]
    fn operator_slots_behave(x in point(2), y in point(2), eta in 0.1..1.0f64) {
        let k = GaussianKernel::new(eta, 2).unwrap();
        let op = make_darcy(Permeability::A2).operator;
        let both = op.apply_both(&k, &x, Region::Interior, &y, Region::Boundary).unwrap();
        let first = op.apply_first(&k, &x, Region::Interior, &y).unwrap();
        prop_assert!((both - first).abs() <= 1e-12 * first.abs().max(1.0));
        let ij = op.apply_both(&k, &x, Region::Interior, &y, Region::Interior).unwrap();
        let ji = op.apply_both(&k, &y, Region::Interior, &x, Region::Interior).unwrap();
        // Off-diagonal entries can cancel to far below the terms that form them;
        // measure against the Cauchy-Schwarz bound sqrt(G_xx G_yy).
        let xx = op.apply_both(&k, &x, Region::Interior, &x, Region::Interior).unwrap();
        let yy = op.apply_both(&k, &y, Region::Interior, &y, Region::Interior).unwrap();
        prop_assert!((ij - ji).abs() <= 1e-12 * (xx * yy).sqrt(), "{ij} vs {ji}");
        let id = PdeOperator::identity(2);
        prop_assert_eq!(id.apply_both(&k, &x, Region::Interior, &y, Region::Interior).unwrap(), k.eval(&x, &y).unwrap());
    }

    #[test]
    fn sampling_is_deterministic_and_pins_faces(d in 1usize..=3, n in 0usize..200, seed in any::<u64>()) {
        let dom = BoxDomain::unit_cube(d);
        let b1 = sample_boundary(&dom, n, seed);
        let b2 = sample_boundary(&dom, n, seed);
        prop_assert_eq!(&b1.points, &b2.points);
        for x in b1.points.rows() {
            prop_assert!(x.iter().any(|&v| v == 0.0 || v == 1.0));
            prop_assert!(dom.contains(x));
        }
        let i1 = sample_interior(&dom, n, seed);
        prop_assert!(i1.points.rows().all(|x| x.iter().all(|&v| v > 0.0 && v < 1.0)));
    }

    #[test]
    fn relative_errors_are_scale_invariant(
        truth in prop::collection::vec(-10.0..10.0f64, 1..50),
        noise in prop::collection::vec(-1.0..1.0f64, 50),
        c in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64],
    ) {
        prop_assume!(norm2(&truth) > 1e-6);
        let pred: Vec<f64> = truth.iter().zip(&noise).map(|(t, e)| t + 0.1 * e).collect();
        let (l2, linf) = relative_errors(&pred, &truth).unwrap();
        let sp: Vec<f64> = pred.iter().map(|v| c * v).collect();
        let st: Vec<f64> = truth.iter().map(|v| c * v).collect();
        let (l2s, linfs) = relative_errors(&sp, &st).unwrap();
        prop_assert!((l2 - l2s).abs() <= 1e-12 * l2.max(1e-300) + 1e-15);
        prop_assert!((linf - linfs).abs() <= 1e-12 * linf.max(1e-300) + 1e-15);
    }

    #[test]
    fn fit_rate_recovers_planted_exponents(
        beta in prop::sample::select(vec![0.25, 0.5, 1.0]),
        c in 1e-3..1e3f64,
        n0 in 10.0..1e4f64,
        points in 3usize..10,
    ) {
        let ns: Vec<f64> = (0..points).map(|i| n0 * 2f64.powi(i as i32)).collect();
        let e: Vec<f64> = ns.iter().map(|n| c * n.powf(-beta)).collect();
        let f = fit_rate(&ns, &e).unwrap();
        prop_assert!((f.beta - beta).abs() <= 1e-10, "{}", f.beta);
    }

    #[test]
    fn aggregate_means_ignore_trial_order(errors in prop::collection::vec(1e-4..1.0f64, 2..8), shift in 0usize..8) {
        let recs = |order: &[usize]| -> Vec<TrialRecord> {
            order.iter().map(|&t| TrialRecord { n: 100, trial: t, report: ErrorReport::new(vec![(errors[t], errors[t])], 0.0) }).collect()
        };
        let idx: Vec<usize> = (0..errors.len()).collect();
        let mut rotated = idx.clone();
        rotated.rotate_left(shift % errors.len());
        let a = aggregate_trials(recs(&idx), None).unwrap();
        let b = aggregate_trials(recs(&rotated), None).unwrap();
        prop_assert!((a.summaries[0].mean_l2 - b.summaries[0].mean_l2).abs() <= 1e-15 * a.summaries[0].mean_l2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gram_matrices_are_psd(d in 1usize..=3, ni in 5usize..60, nb in 0usize..20, eta in 0.1..1.0f64, seed in any::<u64>()) {
        let s = labeled(d, ni, nb, seed);
        let k = GaussianKernel::new(eta, d).unwrap();
        let g = assemble_gram(&k, &PdeOperator::negative_laplacian(d), &s).unwrap();
        let ev = symmetric_eigenvalues(g.matrix()).unwrap();
        let norm = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(ev[0] >= -1e-8 * norm, "{} vs {}", ev[0], norm);
    }

    #[test]
    fn fits_solve_the_normal_equation_linearly(
        ni in 10usize..60, nb in 2usize..10, seed in any::<u64>(),
        a in -3.0..3.0f64, b in -3.0..3.0f64, lambda_exp in -8.0..-3.0f64,
    ) {
        let s = labeled(2, ni, nb, seed);
        let n = s.len();
        let k = GaussianKernel::new(0.4, 2).unwrap();
        let op = PdeOperator::negative_laplacian(2);
        let lambda = 10f64.powf(lambda_exp);
        let g = assemble_gram(&k, &op, &s).unwrap();
        let sol = fit(&g, &s, SolverConfig::new(lambda), &k, &op).unwrap();
        let h1: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7 + seed as f64 * 1e-19).sin()).collect();
        let h2: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.3).cos()).collect();
        let c1 = sol.apply(&h1).unwrap();
        let c2 = sol.apply(&h2).unwrap();
        let r: Vec<f64> = regularized_product(&g, lambda, &c1).iter().zip(&h1).map(|(x, y)| x - y).collect();
        // Rounding in forming the residual alone is about eps * ||G|| * ||c||;
        // past that floor no double-precision solve can certify the bound.
        let g_norm = g.matrix().norm_l2();
        prop_assume!(f64::EPSILON * g_norm * norm2(&c1) <= 1e-9 * norm2(&h1));
        prop_assert!(norm2(&r) <= 1e-8 * norm2(&h1), "{}", norm2(&r) / norm2(&h1));
        let mix: Vec<f64> = h1.iter().zip(&h2).map(|(x, y)| a * x + b * y).collect();
        let cm = sol.apply(&mix).unwrap();
        let lin: Vec<f64> = c1.iter().zip(&c2).map(|(x, y)| a * x + b * y).collect();
        let d: Vec<f64> = cm.iter().zip(&lin).map(|(x, y)| x - y).collect();
        prop_assert!(norm2(&d) <= 1e-12 * norm2(&lin).max(norm2(&cm)) + 1e-300);
    }

    #[test]
    fn larger_lambda_gives_smaller_coefficients(ni in 10usize..50, seed in any::<u64>(), l1 in -7.0..-2.0f64, gap in 0.1..3.0f64) {
        let s = labeled(1, ni, 2, seed);
        let k = GaussianKernel::new(0.3, 1).unwrap();
        let op = PdeOperator::negative_laplacian(1);
        let g = assemble_gram(&k, &op, &s).unwrap();
        let y: Vec<f64> = (0..s.len()).map(|i| 1.0 + (i as f64).sin()).collect();
        let small = fit(&g, &s, SolverConfig::new(10f64.powf(l1)), &k, &op).unwrap().apply(&y).unwrap();
        let large = fit(&g, &s, SolverConfig::new(10f64.powf(l1 + gap)), &k, &op).unwrap().apply(&y).unwrap();
        prop_assert!(norm2(&small) >= norm2(&large) * (1.0 - 1e-12));
    }

    #[test]
    fn lowrank_batches_are_partition_invariant(
        cuts in prop::collection::vec(1usize..400, 0..6), seed in any::<u64>(),
    ) {
        let dom = BoxDomain::unit_cube(2);
        let samples = sample_interior(&dom, 400, seed);
        let y: Vec<f64> = samples.points.rows().map(|x| (3.0 * x[0]).sin() * x[1]).collect();
        let samples = samples.with_values(y).unwrap();
        let centers = sample_interior(&dom, 30, seed ^ 1);
        let k = GaussianKernel::new(0.3, 2).unwrap();
        let op = PdeOperator::negative_laplacian(2);
        let mode = BasisMode::windowed(Arc::new(BubbleWindow::new(&dom)), &dom).unwrap();
        let run = |bounds: &[usize]| {
            let mut m = LowRankModel::new(&k, &op, centers.clone(), mode.clone(), 1e-6, 1, false).unwrap();
            for w in bounds.windows(2) {
                m.accumulate_batch(&samples.slice(w[0], w[1])).unwrap();
            }
            (m.normal(), m.finalize().unwrap())
        };
        let mut bounds = vec![0, 400];
        bounds.extend(cuts);
        bounds.sort_unstable();
        bounds.dedup();
        let (n1, c1) = run(&[0, 400]);
        let (n2, c2) = run(&bounds);
        prop_assert!(n1 == n2);
        prop_assert!(c1 == c2);
    }

    #[test]
    fn windowed_predictions_vanish_on_the_boundary(seed in any::<u64>()) {
        let dom = BoxDomain::unit_cube(3);
        let samples = sample_interior(&dom, 300, seed);
        let y: Vec<f64> = samples.points.rows().map(|x| x[0] + x[1] * x[2]).collect();
        let samples = samples.with_values(y).unwrap();
        let k = GaussianKernel::new(0.3, 3).unwrap();
        let mode = BasisMode::windowed(Arc::new(BubbleWindow::new(&dom)), &dom).unwrap();
        let mut m = LowRankModel::new(&k, &PdeOperator::negative_laplacian(3), samples.slice(0, 40), mode, 1e-8, 1, false).unwrap();
        m.accumulate_batch(&samples).unwrap();
        let c: Vec<f64> = m.finalize().unwrap().col(0).iter().copied().collect();
        let bnd = sample_boundary(&dom, 1000, seed ^ 7);
        let u = m.evaluate(&c, &bnd.points).unwrap();
        prop_assert!(u.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn design_rows_reproduce_normal_matrix() {
    let dom = BoxDomain::unit_cube(1);
    let s = sample_interior(&dom, 50, 3);
    let k = GaussianKernel::new(0.2, 1).unwrap();
    let op = PdeOperator::negative_laplacian(1);
    let centers =
        LabeledSampleSet::new(Points::new(1, vec![0.2, 0.5, 0.8]).unwrap(), vec![Region::Interior; 3], None, 0)
            .unwrap();
    let mut m = LowRankModel::new(&k, &op, centers, BasisMode::OperatorApplied, 0.0, 1, false).unwrap();
    m.accumulate_targets(&s, Mat::from_fn(50, 1, |i, _| i as f64).as_ref()).unwrap();
    let a = m.design_block(&s).unwrap();
    let normal = m.normal();
    for i in 0..3 {
        for j in 0..3 {
            let ata: f64 = (0..50).map(|r| a[(r, i)] * a[(r, j)]).sum();
            assert!((normal[(i, j)] - ata).abs() <= 1e-10 * ata.abs().max(1.0));
        }
    }
}

/// `(P u)(x)` rebuilt from finite differences of `u`'s values.
fn operator_by_differences(problem: &PdeProblem, u: &dyn DifferentiableFunction, x: &[f64], h: f64) -> f64 {
    let f = |p: &[f64]| u.value(p);
    problem.operator.terms().iter().map(|t| (t.coefficient)(x) * nested_difference(&f, x, t.index.exponents(), h)).sum()
}

#[test]
fn family_operators_match_finite_differences() {
    for name in PROBLEM_NAMES {
        let problem = by_name(name).unwrap();
        let h = match name {
            "helmholtz-200" => 1e-3,
            "helmholtz-20" => 1e-2,
            _ => 5e-3,
        };
        let interior = sample_interior(&problem.domain, 200, 77);
        for k in 0..3 {
            let u = problem.family.member(k, 5);
            for x in interior.points.rows() {
                let exact = problem.operator.apply_to_function(u.as_ref(), x, Region::Interior).unwrap();
                let fd = operator_by_differences(&problem, u.as_ref(), x, h);
                let scale = exact.abs().max(1.0);
                assert!((exact - fd).abs() <= 1e-4 * scale, "{name} member {k} at {x:?}: {exact} vs {fd}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn windowed_partials_match_finite_differences(x in point(2), z in point(2), a in index(2, 2)) {
        let k = GaussianKernel::new(0.5, 2).unwrap();
        let w = BubbleWindow::unit(2);
        let analytic = leibniz_windowed_partial(&w, &k, &a, &x, &z).unwrap();
        let f = |p: &[f64]| w.value(p) * k.eval(p, &z).unwrap();
        let fd = nested_difference(&f, &x, a.exponents(), 1e-2);
        prop_assert!((analytic - fd).abs() <= 1e-6 * analytic.abs().max(1.0), "{analytic} vs {fd}");
    }
}
