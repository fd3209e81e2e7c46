//! Dense symmetric positive-definite factorization with a jitter ladder.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Number of escalation steps after the initial attempt.
pub const JITTER_STEPS: i32 = 6;

/// Cholesky factor of a symmetrically equilibrated matrix:
/// `L L^T = S (A + jitter I) S` with `S = diag(1/sqrt(A_ii))`.
///
/// Rows of a generalized Gram matrix can differ in scale by many orders of
/// magnitude (interior rows grow like `eta^-2s`, boundary rows are O(1)); the
/// scaling keeps the triangular solves accurate.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    l: Mat<f64>,
    scale: Vec<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    /// Factor a symmetric matrix (only the lower triangle is read). The first
    /// attempt adds `jitter_start` to the diagonal; on failure the jitter
    /// escalates through `1e-12 * trace(A)/n * 10^k` for `k = 0..=6`.
    pub fn factor(a: MatRef<'_, f64>, jitter_start: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!("cannot factor a {}x{} matrix", n, a.ncols())));
        }
        if n == 0 {
            return Ok(CholeskyFactor { l: Mat::zeros(0, 0), scale: Vec::new(), jitter: jitter_start });
        }
        let trace: f64 = (0..n).map(|i| a[(i, i)]).sum();
        let scale: Vec<f64> = (0..n)
            .map(|i| {
                let d = a[(i, i)];
                if d > 0.0 && d.is_finite() {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let base = 1e-12 * trace.abs() / n as f64;
        let mut ladder = vec![jitter_start];
        ladder.extend((0..=JITTER_STEPS).map(|k| jitter_start + base * 10f64.powi(k)).filter(|&j| j > jitter_start));

        let mut work = Mat::<f64>::zeros(n, n);
        for &jitter in &ladder {
            for j in 0..n {
                for i in j..n {
                    let v = if i == j { a[(i, i)] + jitter } else { a[(i, j)] };
                    work[(i, j)] = scale[i] * v * scale[j];
                }
            }
            if let Ok(llt) = work.llt(Side::Lower) {
                let lr = llt.L();
                let l = Mat::from_fn(n, n, |i, j| if i >= j { lr[(i, j)] } else { 0.0 });
                return Ok(CholeskyFactor { l, scale, jitter });
            }
        }
        let (dmin, dmax) =
            (0..n).map(|i| a[(i, i)]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Err(Error::Numerical(format!(
            "Cholesky failed for n={n} after jitter up to {:.3e}; trace={trace:.6e}, diagonal range [{dmin:.3e}, {dmax:.3e}]",
            ladder.last().copied().unwrap_or(0.0)
        )))
    }

    /// Rebuild from stored parts (used when loading saved models).
    pub fn from_parts(l: Mat<f64>, scale: Vec<f64>, jitter: f64) -> Result<Self> {
        if l.nrows() != l.ncols() || scale.len() != l.nrows() {
            return Err(Error::Shape("factor must be square with one scale per row".into()));
        }
        Ok(CholeskyFactor { l, scale, jitter })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Diagonal shift that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower factor of the equilibrated matrix.
    pub fn lower(&self) -> MatRef<'_, f64> {
        self.l.as_ref()
    }

    /// Equilibration weights `S_ii`.
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Overwrite `rhs` (n x k) with `(A + jitter I)^{-1} rhs`.
    pub fn solve_in_place(&self, mut rhs: MatMut<'_, f64>) {
        self.apply_scale(rhs.as_mut());
        solve_lower_triangular_in_place(self.l.as_ref(), rhs.as_mut(), Par::Seq);
        solve_upper_triangular_in_place(self.l.transpose(), rhs.as_mut(), Par::Seq);
        self.apply_scale(rhs.as_mut());
    }

    fn apply_scale(&self, mut rhs: MatMut<'_, f64>) {
        for j in 0..rhs.ncols() {
            for (i, s) in self.scale.iter().enumerate() {
                rhs[(i, j)] *= s;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(Error::Shape(format!(
                "right-hand side of length {} for a system of size {}",
                b.len(),
                self.dim()
            )));
        }
        let mut m = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.solve_in_place(m.as_mut());
        Ok((0..b.len()).map(|i| m[(i, 0)]).collect())
    }
}

/// `y = A x` for a dense matrix.
pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate().take(a.ncols()) {
        if xj == 0.0 {
            continue;
        }
        let col = a.col(j);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += col[i] * xj;
        }
    }
    y
}

/// Mirror the lower triangle onto the upper triangle.
pub fn symmetrize_from_lower(mut a: MatMut<'_, f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in j + 1..n {
            a[(j, i)] = a[(i, j)];
        }
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let mut ev = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigenvalue iteration failed: {e:?}")))?;
    ev.sort_by(|x, y| x.total_cmp(y));
    Ok(ev)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
