//! Dense generalized Gram assembly and the regularized closed-form solve.
//!
//! Given samples `X_N` with tags, `G[i][j] = P^(1,1) K(X_i, X_j)` and the fitted
//! coefficients are `c = (G + lambda N I)^{-1} Y`. The estimate is
//! `u(x) = sum_i c_i P^(1,0) K(X_i, x)`. Because `c` is linear in `Y`, the
//! factorization alone is a reusable solution operator; [`SolutionOperator::kernel_basis`]
//! precomputes `Psi = Phi(Q) (G + lambda N I)^{-1}` so new inputs cost one
//! matrix-vector product.
//!
//! Binary layout written by [`SolutionOperator::write_to`] (all little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic `KOPSOLV1` | 8 bytes |
//! | N, d | u64, u64 |
//! | operator order s, kernel max order | u32, u32 |
//! | eta, lambda, jitter | f64 x 3 |
//! | operator name length, name bytes | u32, utf-8 |
//! | points | N*d f64, row-major |
//! | region codes | N u8 (0 interior, 1 boundary, 2 initial) |
//! | lower factor of the equilibrated matrix | N(N+1)/2 f64, row by row |
//! | equilibration weights | N f64 |

use std::io::{Read, Write};

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{GaussianKernel, MultiIndex, PairDerivatives};
use crate::linalg::{mat_vec, CholeskyFactor};
use crate::operators::{PdeOperator, PointFunctional, Region};
use crate::sampling::{LabeledSampleSet, Points};

const MAGIC: &[u8; 8] = b"KOPSOLV1";
const EVAL_CHUNK: usize = 512;

/// Symmetric `N x N` matrix of `apply_both` over all sample pairs.
#[derive(Clone, Debug)]
pub struct GeneralizedGram {
    matrix: Mat<f64>,
}

impl GeneralizedGram {
    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn into_matrix(self) -> Mat<f64> {
        self.matrix
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_matrix_csv(writer, self.matrix.as_ref())
    }
}

/// Dump a matrix as headerless CSV, one row per line.
pub fn write_matrix_csv<W: Write>(writer: W, m: MatRef<'_, f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

fn functionals(op: &PdeOperator, samples: &LabeledSampleSet) -> Vec<PointFunctional> {
    (0..samples.len()).map(|i| op.functional(samples.points.row(i), samples.regions[i])).collect()
}

/// `G[i][j] = apply_both(op, kernel, X_i, tag_i, X_j, tag_j)`. Columns are
/// computed in parallel for `i <= j` and mirrored, so `G` is exactly symmetric
/// and independent of the worker count.
pub fn assemble_gram(kernel: &GaussianKernel, op: &PdeOperator, samples: &LabeledSampleSet) -> Result<GeneralizedGram> {
    op.check_kernel(kernel)?;
    if samples.dimension() != kernel.dimension() {
        return Err(Error::Shape(format!(
            "samples have dimension {}, kernel expects {}",
            samples.dimension(),
            kernel.dimension()
        )));
    }
    let n = samples.len();
    let fs = functionals(op, samples);
    let mut buf = vec![0.0; n * n];
    buf.par_chunks_mut(n.max(1)).enumerate().for_each_init(
        || PairDerivatives::new(kernel),
        |pair, (j, col)| {
            let xj = samples.points.row(j);
            for i in 0..=j {
                pair.load(kernel, samples.points.row(i), xj, fs[i].order() + fs[j].order());
                col[i] = PointFunctional::bilinear(pair, &fs[i], &fs[j]);
            }
        },
    );
    let matrix = Mat::from_fn(n, n, |i, j| if i <= j { buf[j * n + i] } else { buf[i * n + j] });
    Ok(GeneralizedGram { matrix })
}

/// Regularization settings for [`fit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Tikhonov parameter; the solver adds `lambda * N` to the diagonal.
    pub lambda: f64,
    /// Diagonal shift for the first factorization attempt.
    pub jitter_start: f64,
}

impl SolverConfig {
    pub fn new(lambda: f64) -> Self {
        SolverConfig { lambda, jitter_start: 0.0 }
    }
}

/// Fitted estimator: the samples plus a factorization of `G + lambda N I`.
#[derive(Clone, Debug)]
pub struct SolutionOperator {
    samples: LabeledSampleSet,
    operator: PdeOperator,
    kernel: GaussianKernel,
    factor: CholeskyFactor,
    lambda: f64,
    functionals: Vec<PointFunctional>,
}

/// Factor `G + lambda N I`, escalating jitter on failure.
pub fn fit(
    gram: &GeneralizedGram,
    samples: &LabeledSampleSet,
    config: SolverConfig,
    kernel: &GaussianKernel,
    op: &PdeOperator,
) -> Result<SolutionOperator> {
    if !(config.lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {}", config.lambda)));
    }
    let n = samples.len();
    if gram.dim() != n {
        return Err(Error::Shape(format!("Gram matrix of size {} for {n} samples", gram.dim())));
    }
    op.check_kernel(kernel)?;
    let shift = config.lambda * n as f64;
    let mut a = gram.matrix.clone();
    for i in 0..n {
        a[(i, i)] += shift;
    }
    let factor = CholeskyFactor::factor(a.as_ref(), config.jitter_start)?;
    Ok(SolutionOperator {
        samples: samples.clone(),
        operator: op.clone(),
        kernel: *kernel,
        factor,
        lambda: config.lambda,
        functionals: functionals(op, samples),
    })
}

/// Assemble, fit and solve for the sample values in one call.
pub fn fit_samples(
    kernel: &GaussianKernel,
    op: &PdeOperator,
    samples: &LabeledSampleSet,
    config: SolverConfig,
) -> Result<SolutionOperator> {
    let gram = assemble_gram(kernel, op, samples)?;
    fit(&gram, samples, config, kernel, op)
}

impl SolutionOperator {
    pub fn samples(&self) -> &LabeledSampleSet {
        &self.samples
    }

    pub fn operator(&self) -> &PdeOperator {
        &self.operator
    }

    pub fn kernel(&self) -> &GaussianKernel {
        &self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Jitter added on top of `lambda N` to obtain a factorization.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// `c = (G + lambda N I)^{-1} h`.
    pub fn apply(&self, h_values: &[f64]) -> Result<Vec<f64>> {
        self.factor.solve(h_values)
    }

    /// Apply to the values stored with the samples.
    pub fn apply_samples(&self) -> Result<Vec<f64>> {
        let y = self.samples.values.as_ref().ok_or_else(|| Error::Config("sample set carries no values".into()))?;
        self.apply(y)
    }

    fn check_queries(&self, queries: &Points) -> Result<()> {
        if queries.dimension() != self.kernel.dimension() {
            return Err(Error::Shape(format!(
                "queries have dimension {}, model expects {}",
                queries.dimension(),
                self.kernel.dimension()
            )));
        }
        Ok(())
    }

    /// `u(x) = sum_i c_i P^(1,0) K(X_i, x)` at every query.
    pub fn evaluate(&self, coeffs: &[f64], queries: &Points) -> Result<Vec<f64>> {
        self.evaluate_derivative(coeffs, &MultiIndex::zeros(self.kernel.dimension()), queries)
    }

    /// `d^alpha u(x)` at every query, for residual diagnostics.
    pub fn evaluate_derivative(&self, coeffs: &[f64], alpha: &MultiIndex, queries: &Points) -> Result<Vec<f64>> {
        self.check_queries(queries)?;
        if coeffs.len() != self.len() {
            return Err(Error::Shape(format!("{} coefficients for {} samples", coeffs.len(), self.len())));
        }
        if alpha.dimension() != self.kernel.dimension() {
            return Err(Error::Shape("derivative index dimension mismatch".into()));
        }
        if alpha.order() > self.kernel.max_order() {
            return Err(Error::Capability(format!(
                "derivative order {} exceeds kernel capability {}",
                alpha.order(),
                self.kernel.max_order()
            )));
        }
        let right = PointFunctional { terms: vec![(1.0, alpha.clone())] };
        let kernel = &self.kernel;
        Ok((0..queries.len())
            .into_par_iter()
            .map_init(
                || PairDerivatives::new(kernel),
                |pair, q| {
                    let x = queries.row(q);
                    let mut acc = 0.0;
                    for (i, c) in coeffs.iter().enumerate() {
                        if *c == 0.0 {
                            continue;
                        }
                        let f = &self.functionals[i];
                        pair.load(kernel, self.samples.points.row(i), x, f.order() + alpha.order());
                        acc += c * PointFunctional::bilinear(pair, f, &right);
                    }
                    acc
                },
            )
            .collect())
    }

    /// `Phi^T` with `Phi[q][i] = P^(1,0) K(X_i, x_q)`, stored `N x M`.
    fn feature_matrix_t(&self, queries: &Points) -> Mat<f64> {
        let n = self.len();
        let m = queries.len();
        let mut buf = vec![0.0; n * m];
        let kernel = &self.kernel;
        let eval = PointFunctional::evaluation(kernel.dimension());
        buf.par_chunks_mut(n.max(1)).enumerate().for_each_init(
            || PairDerivatives::new(kernel),
            |pair, (q, col)| {
                let x = queries.row(q);
                for (i, v) in col.iter_mut().enumerate() {
                    let f = &self.functionals[i];
                    pair.load(kernel, self.samples.points.row(i), x, f.order());
                    *v = PointFunctional::bilinear(pair, f, &eval);
                }
            },
        );
        Mat::from_fn(n, m, |i, q| buf[q * n + i])
    }

    /// Evaluate several coefficient vectors (columns of an `N x T` matrix) at
    /// once; returns `M x T`. Queries are processed in chunks so the feature
    /// block stays small.
    pub fn evaluate_many(&self, coeffs: MatRef<'_, f64>, queries: &Points) -> Result<Mat<f64>> {
        self.check_queries(queries)?;
        if coeffs.nrows() != self.len() {
            return Err(Error::Shape(format!("{} coefficient rows for {} samples", coeffs.nrows(), self.len())));
        }
        let t = coeffs.ncols();
        let mut out = Mat::zeros(queries.len(), t);
        for start in (0..queries.len()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(queries.len());
            let phi_t = self.feature_matrix_t(&queries.slice(start, end));
            matmul(
                out.as_mut().subrows_mut(start, end - start),
                Accum::Replace,
                phi_t.transpose(),
                coeffs,
                1.0,
                Par::Seq,
            );
        }
        Ok(out)
    }

    /// `M x N` matrix whose column `i` is `psi_i` at the queries.
    pub fn kernel_basis(&self, queries: &Points) -> Result<Mat<f64>> {
        self.check_queries(queries)?;
        let mut phi_t = self.feature_matrix_t(queries);
        self.factor.solve_in_place(phi_t.as_mut());
        Ok(phi_t.transpose().to_owned())
    }

    /// Serialize to the documented binary layout.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.len();
        let d = self.kernel.dimension();
        w.write_all(MAGIC)?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&(d as u64).to_le_bytes())?;
        w.write_all(&self.operator.order().to_le_bytes())?;
        w.write_all(&self.kernel.max_order().to_le_bytes())?;
        for v in [self.kernel.bandwidth(), self.lambda, self.factor.jitter()] {
            w.write_all(&v.to_le_bytes())?;
        }
        let name = self.operator.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        for v in self.samples.points.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        let codes: Vec<u8> = self.samples.regions.iter().map(|r| r.code()).collect();
        w.write_all(&codes)?;
        let l = self.factor.lower();
        for i in 0..n {
            for j in 0..=i {
                w.write_all(&l[(i, j)].to_le_bytes())?;
            }
        }
        for v in self.factor.scale() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Load a model written by [`write_to`](Self::write_to). Operator
    /// coefficients are closures, so the caller supplies the operator; its name,
    /// order and dimension must match the file.
    pub fn read_from<R: Read>(mut r: R, op: &PdeOperator) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a solution operator file".into()));
        }
        let n = read_u64(&mut r)? as usize;
        let d = read_u64(&mut r)? as usize;
        let order = read_u32(&mut r)?;
        let max_order = read_u32(&mut r)?;
        let eta = read_f64(&mut r)?;
        let lambda = read_f64(&mut r)?;
        let jitter = read_f64(&mut r)?;
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Parse(e.to_string()))?;
        if name != op.name() || order != op.order() || d != op.dimension() {
            return Err(Error::Config(format!(
                "file holds operator {name:?} (order {order}, dimension {d}), got {:?} (order {}, dimension {})",
                op.name(),
                op.order(),
                op.dimension()
            )));
        }
        let coords = (0..n * d).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut codes = vec![0u8; n];
        r.read_exact(&mut codes)?;
        let regions = codes
            .iter()
            .map(|&c| Region::from_code(c).ok_or_else(|| Error::Parse(format!("bad region code {c}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut l = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                l[(i, j)] = read_f64(&mut r)?;
            }
        }
        let scale = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let kernel = GaussianKernel::new(eta, d)?.with_max_order(max_order);
        let samples = LabeledSampleSet::new(Points::new(d, coords)?, regions, None, 0)?;
        let functionals = functionals(op, &samples);
        Ok(SolutionOperator {
            samples,
            operator: op.clone(),
            kernel,
            factor: CholeskyFactor::from_parts(l, scale, jitter)?,
            lambda,
            functionals,
        })
    }
}

/// `(G + lambda N I) c` for residual checks.
pub fn regularized_product(gram: &GeneralizedGram, lambda: f64, c: &[f64]) -> Vec<f64> {
    let shift = lambda * gram.dim() as f64;
    let mut y = mat_vec(gram.matrix(), c);
    for (yi, ci) in y.iter_mut().zip(c) {
        *yi += shift * ci;
    }
    y
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
