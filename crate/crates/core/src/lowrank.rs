//! Online low-rank kernel regression.
//!
//! The solution is restricted to `L` basis functions anchored at centers
//! `z_1..z_L` and the least-squares normal equations
//! `(A^T A + lambda I) c = A^T Y` are accumulated over streamed batches of
//! rows, where `A[i][j] = (P b_j)(X_i)`.
//!
//! Rows are folded into the normal matrix in fixed panels of [`PANEL_ROWS`]
//! rows aligned to the global row index. A batch that ends mid-panel leaves its
//! tail in a pending buffer that the next batch completes, so the sequence of
//! floating-point updates, and hence every output, is bitwise independent of
//! how the rows were split into batches.
//!
//! Checkpoint layout written by [`LowRankModel::write_checkpoint`] (little-endian):
//! magic `KOPLRNK1`; u64 `L`, `d`, `T`, `rows_seen`; u8 mode (0 operator-applied,
//! 1 windowed); u8 design store flag; f64 `eta`, `lambda`; centers `L*d` f64;
//! center region codes `L` u8; packed lower normal `L(L+1)/2` f64 row by row;
//! rhs `L*T` f64 column-major; u64 pending rows `p`; pending design `p*L` f64
//! row-major; pending targets `p*T` f64 row-major; if the store flag is set,
//! `rows_seen*L` f64 of stored design rows.

use std::io::{Read, Write};
use std::sync::Arc;

use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::{Accum, Mat, MatRef, Par};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{GaussianKernel, PairDerivatives};
use crate::linalg::{symmetrize_from_lower, CholeskyFactor};
use crate::operators::{DifferentiableFunction, PdeOperator, PointFunctional, Region};
use crate::sampling::{sample_boundary, sample_interior, BoxDomain, LabeledSampleSet, Points};

/// Rows per accumulation panel.
pub const PANEL_ROWS: usize = 256;

const MAGIC: &[u8; 8] = b"KOPLRNK1";
const WINDOW_CHECK_POINTS: usize = 1000;
const WINDOW_CHECK_SEED: u64 = 0x5eed_b0da;

/// Shape of the basis functions `b_j`.
#[derive(Clone)]
pub enum BasisMode {
    /// `b_j(x) = P^(1,0) K(z_j, x)`, the operator applied at the center.
    OperatorApplied,
    /// `b_j(x) = rho(x) K(z_j, x)` with a window vanishing on the boundary.
    Windowed(Arc<dyn DifferentiableFunction>),
}

impl std::fmt::Debug for BasisMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisMode::OperatorApplied => f.write_str("OperatorApplied"),
            BasisMode::Windowed(_) => f.write_str("Windowed"),
        }
    }
}

impl BasisMode {
    /// Windowed mode, after checking `|rho| <= 1e-14` on sampled boundary points.
    pub fn windowed(window: Arc<dyn DifferentiableFunction>, domain: &BoxDomain) -> Result<Self> {
        if window.dimension() != domain.dimension() {
            return Err(Error::Shape("window and domain dimensions differ".into()));
        }
        let probe = sample_boundary(domain, WINDOW_CHECK_POINTS, WINDOW_CHECK_SEED);
        for p in probe.points.rows() {
            let v = window.value(p);
            if v.abs() > 1e-14 {
                return Err(Error::Config(format!("window does not vanish on the boundary: rho({p:?}) = {v:e}")));
            }
        }
        Ok(BasisMode::Windowed(window))
    }

    fn code(&self) -> u8 {
        match self {
            BasisMode::OperatorApplied => 0,
            BasisMode::Windowed(_) => 1,
        }
    }
}

/// `rho(x) = prod_l (x_l - a_l)(b_l - x_l)` on a box, zero on every face.
#[derive(Clone, Debug)]
pub struct BubbleWindow {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BubbleWindow {
    pub fn new(domain: &BoxDomain) -> Self {
        BubbleWindow { lower: domain.lower().to_vec(), upper: domain.upper().to_vec() }
    }

    pub fn unit(dimension: usize) -> Self {
        BubbleWindow { lower: vec![0.0; dimension], upper: vec![1.0; dimension] }
    }
}

impl DifferentiableFunction for BubbleWindow {
    fn dimension(&self) -> usize {
        self.lower.len()
    }

    fn max_order(&self) -> u32 {
        u32::MAX
    }

    fn partial(&self, alpha: &crate::kernel::MultiIndex, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for (i, &n) in alpha.exponents().iter().enumerate() {
            let (a, b) = (self.lower[i], self.upper[i]);
            // (x - a)(b - x) = -x^2 + (a + b) x - a b
            v *= match n {
                0 => (x[i] - a) * (b - x[i]),
                1 => a + b - 2.0 * x[i],
                2 => -2.0,
                _ => 0.0,
            };
            if v == 0.0 {
                return 0.0;
            }
        }
        v
    }
}

/// How to pick centers from a sample set.
#[derive(Clone, Debug, PartialEq)]
pub enum CenterRule {
    /// First `L` interior samples.
    FirstInterior,
    /// Fresh uniform interior draw with its own seed.
    Resample { seed: u64 },
}

pub fn select_centers(
    samples: &LabeledSampleSet,
    count: usize,
    rule: &CenterRule,
    domain: &BoxDomain,
) -> Result<LabeledSampleSet> {
    match rule {
        CenterRule::FirstInterior => {
            let idx: Vec<usize> =
                (0..samples.len()).filter(|&i| samples.regions[i] == Region::Interior).take(count).collect();
            if idx.len() < count {
                return Err(Error::Config(format!(
                    "{count} centers requested but only {} interior samples",
                    idx.len()
                )));
            }
            LabeledSampleSet::new(samples.points.select(&idx), vec![Region::Interior; count], None, samples.seed)
        }
        CenterRule::Resample { seed } => Ok(sample_interior(domain, count, *seed)),
    }
}

/// Streaming normal-equation accumulator for the low-rank estimator.
#[derive(Clone, Debug)]
pub struct LowRankModel {
    kernel: GaussianKernel,
    operator: PdeOperator,
    centers: LabeledSampleSet,
    center_functionals: Vec<PointFunctional>,
    mode: BasisMode,
    lambda: f64,
    targets: usize,
    normal: Mat<f64>,
    rhs: Mat<f64>,
    panel: Mat<f64>,
    panel_y: Mat<f64>,
    pending: usize,
    design_rows: Option<Vec<f64>>,
    rows_seen: usize,
}

impl LowRankModel {
    /// A fresh model with `normal = lambda I`, `rhs = 0` for `targets`
    /// right-hand sides. With `store_design` the rows of `A` are retained so
    /// [`finalize_operator`](Self::finalize_operator) can build `W`.
    pub fn new(
        kernel: &GaussianKernel,
        operator: &PdeOperator,
        centers: LabeledSampleSet,
        mode: BasisMode,
        lambda: f64,
        targets: usize,
        store_design: bool,
    ) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
        }
        if centers.dimension() != kernel.dimension() {
            return Err(Error::Shape("centers and kernel dimensions differ".into()));
        }
        operator.check_kernel(kernel)?;
        if let BasisMode::Windowed(w) = &mode {
            if w.dimension() != kernel.dimension() {
                return Err(Error::Shape("window and kernel dimensions differ".into()));
            }
        }
        let l = centers.len();
        let center_functionals =
            (0..l).map(|j| operator.functional(centers.points.row(j), centers.regions[j])).collect();
        let mut normal = Mat::zeros(l, l);
        for i in 0..l {
            normal[(i, i)] = lambda;
        }
        Ok(LowRankModel {
            kernel: *kernel,
            operator: operator.clone(),
            centers,
            center_functionals,
            mode,
            lambda,
            targets,
            normal,
            rhs: Mat::zeros(l, targets),
            panel: Mat::zeros(PANEL_ROWS, l),
            panel_y: Mat::zeros(PANEL_ROWS, targets),
            pending: 0,
            design_rows: store_design.then(Vec::new),
            rows_seen: 0,
        })
    }

    pub fn rank(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &LabeledSampleSet {
        &self.centers
    }

    pub fn mode(&self) -> &BasisMode {
        &self.mode
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    fn check_batch_dimension(&self, d: usize) -> Result<()> {
        if d != self.kernel.dimension() {
            return Err(Error::Shape(format!("batch dimension {d}, model expects {}", self.kernel.dimension())));
        }
        Ok(())
    }

    fn row_functional(&self, x: &[f64], region: Region) -> PointFunctional {
        match &self.mode {
            BasisMode::OperatorApplied => self.operator.functional(x, region),
            BasisMode::Windowed(w) => self.operator.windowed_functional(w.as_ref(), x, region),
        }
    }

    fn fill_row(&self, pair: &mut PairDerivatives, x: &[f64], region: Region, out: &mut [f64]) {
        let left = self.row_functional(x, region);
        let eval = PointFunctional::evaluation(self.kernel.dimension());
        for (j, v) in out.iter_mut().enumerate() {
            let right = match self.mode {
                BasisMode::OperatorApplied => &self.center_functionals[j],
                BasisMode::Windowed(_) => &eval,
            };
            pair.load(&self.kernel, x, self.centers.points.row(j), left.order() + right.order());
            *v = PointFunctional::bilinear(pair, &left, right);
        }
    }

    /// Design rows `A[i][j] = (P b_j)(X_i)` for a batch, row-major `q x L`.
    fn design_rows_for(&self, batch: &LabeledSampleSet) -> Result<Vec<f64>> {
        self.check_batch_dimension(batch.dimension())?;
        let l = self.rank();
        let mut out = vec![0.0; batch.len() * l];
        out.par_chunks_mut(l.max(1)).enumerate().for_each_init(
            || PairDerivatives::new(&self.kernel),
            |pair, (i, row)| self.fill_row(pair, batch.points.row(i), batch.regions[i], row),
        );
        Ok(out)
    }

    /// The `q x L` design block of a batch.
    pub fn design_block(&self, batch: &LabeledSampleSet) -> Result<Mat<f64>> {
        let rows = self.design_rows_for(batch)?;
        let l = self.rank();
        Ok(Mat::from_fn(batch.len(), l, |i, j| rows[i * l + j]))
    }

    /// Fold one batch into the normal equations. `y` is `q x T`.
    pub fn accumulate(&mut self, block: MatRef<'_, f64>, y: MatRef<'_, f64>) -> Result<()> {
        let l = self.rank();
        if block.ncols() != l || y.nrows() != block.nrows() || y.ncols() != self.targets {
            return Err(Error::Shape(format!(
                "block {}x{} and targets {}x{} for rank {l} with {} targets",
                block.nrows(),
                block.ncols(),
                y.nrows(),
                y.ncols(),
                self.targets
            )));
        }
        for i in 0..block.nrows() {
            for j in 0..l {
                self.panel[(self.pending, j)] = block[(i, j)];
            }
            for t in 0..self.targets {
                self.panel_y[(self.pending, t)] = y[(i, t)];
            }
            if let Some(store) = &mut self.design_rows {
                store.extend((0..l).map(|j| block[(i, j)]));
            }
            self.pending += 1;
            self.rows_seen += 1;
            if self.pending == PANEL_ROWS {
                fold_panel(&mut self.normal, &mut self.rhs, self.panel.as_ref(), self.panel_y.as_ref());
                self.pending = 0;
            }
        }
        Ok(())
    }

    /// Compute the design block of a batch with values and accumulate it.
    /// The batch must carry values, used as the single target (`T = 1`).
    pub fn accumulate_batch(&mut self, batch: &LabeledSampleSet) -> Result<()> {
        let y = batch.values.as_ref().ok_or_else(|| Error::Config("batch carries no values".into()))?;
        let y = Mat::from_fn(y.len(), 1, |i, _| y[i]);
        self.accumulate_targets(batch, y.as_ref())
    }

    /// Compute the design block of a batch and accumulate it against `q x T` targets.
    pub fn accumulate_targets(&mut self, batch: &LabeledSampleSet, y: MatRef<'_, f64>) -> Result<()> {
        let block = self.design_block(batch)?;
        self.accumulate(block.as_ref(), y)
    }

    /// Stream CSV shards (sample-set layout with values) in the given order.
    pub fn accumulate_csv_shards<P: AsRef<std::path::Path>>(&mut self, paths: &[P]) -> Result<()> {
        for p in paths {
            let batch = LabeledSampleSet::read_csv_file(p)?;
            self.accumulate_batch(&batch)?;
        }
        Ok(())
    }

    /// Normal matrix (lower triangle) and rhs with pending rows folded in.
    fn folded(&self) -> (Mat<f64>, Mat<f64>) {
        let mut n = self.normal.clone();
        let mut r = self.rhs.clone();
        if self.pending > 0 {
            fold_panel(&mut n, &mut r, self.panel.subrows(0, self.pending), self.panel_y.subrows(0, self.pending));
        }
        (n, r)
    }

    /// Full symmetric normal matrix `A^T A + lambda I` including pending rows.
    pub fn normal(&self) -> Mat<f64> {
        let mut n = self.folded().0;
        symmetrize_from_lower(n.as_mut());
        n
    }

    /// `A^T Y` including pending rows.
    pub fn rhs(&self) -> Mat<f64> {
        self.folded().1
    }

    fn factor(&self) -> Result<(CholeskyFactor, Mat<f64>)> {
        if self.rows_seen == 0 {
            return Err(Error::Config("finalize needs at least one accumulated row".into()));
        }
        let (n, r) = self.folded();
        let f = CholeskyFactor::factor(n.as_ref(), 0.0)?;
        Ok((f, r))
    }

    /// Per-target coefficients `c = (A^T A + lambda I)^{-1} A^T Y`, `L x T`.
    pub fn finalize(&self) -> Result<Mat<f64>> {
        let (f, mut r) = self.factor()?;
        f.solve_in_place(r.as_mut());
        Ok(r)
    }

    /// Diagonal shift the factorization needed on top of `lambda`.
    pub fn finalize_jitter(&self) -> Result<f64> {
        Ok(self.factor()?.0.jitter())
    }

    /// `W = (A^T A + lambda I)^{-1} A^T`, an `L x N` map from sampled data to
    /// coefficients. Needs the design store.
    pub fn finalize_operator(&self) -> Result<Mat<f64>> {
        let store = self
            .design_rows
            .as_ref()
            .ok_or_else(|| Error::Config("operator finalize needs a model built with store_design".into()))?;
        let (f, _) = self.factor()?;
        let l = self.rank();
        let mut w = Mat::from_fn(l, self.rows_seen, |j, i| store[i * l + j]);
        f.solve_in_place(w.as_mut());
        Ok(w)
    }

    /// `sum_j c_j b_j(x)` at every query, for `L x T` coefficients; returns `M x T`.
    pub fn evaluate_many(&self, coeffs: MatRef<'_, f64>, queries: &Points) -> Result<Mat<f64>> {
        self.check_batch_dimension(queries.dimension())?;
        if coeffs.nrows() != self.rank() {
            return Err(Error::Shape(format!("{} coefficient rows for rank {}", coeffs.nrows(), self.rank())));
        }
        let features = self.feature_matrix(queries);
        let mut out = Mat::zeros(queries.len(), coeffs.ncols());
        matmul(out.as_mut(), Accum::Replace, features.as_ref(), coeffs, 1.0, Par::Seq);
        Ok(out)
    }

    /// `sum_j c_j b_j(x)` for a single coefficient vector.
    pub fn evaluate(&self, coeffs: &[f64], queries: &Points) -> Result<Vec<f64>> {
        let c = Mat::from_fn(coeffs.len(), 1, |i, _| coeffs[i]);
        let out = self.evaluate_many(c.as_ref(), queries)?;
        Ok((0..queries.len()).map(|i| out[(i, 0)]).collect())
    }

    /// `M x L` matrix of `b_j(x_q)`.
    pub fn feature_matrix(&self, queries: &Points) -> Mat<f64> {
        let l = self.rank();
        let m = queries.len();
        let mut buf = vec![0.0; m * l];
        let eval = PointFunctional::evaluation(self.kernel.dimension());
        buf.par_chunks_mut(l.max(1)).enumerate().for_each_init(
            || PairDerivatives::new(&self.kernel),
            |pair, (q, row)| {
                let x = queries.row(q);
                let scale = match &self.mode {
                    BasisMode::OperatorApplied => 1.0,
                    BasisMode::Windowed(w) => w.value(x),
                };
                if scale == 0.0 {
                    return;
                }
                for (j, v) in row.iter_mut().enumerate() {
                    let f = match self.mode {
                        BasisMode::OperatorApplied => &self.center_functionals[j],
                        BasisMode::Windowed(_) => &eval,
                    };
                    pair.load(&self.kernel, self.centers.points.row(j), x, f.order());
                    *v = scale * PointFunctional::bilinear(pair, f, &eval);
                }
            },
        );
        Mat::from_fn(m, l, |q, j| buf[q * l + j])
    }

    /// Write a resumable checkpoint in the documented layout.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let l = self.rank();
        let d = self.kernel.dimension();
        w.write_all(MAGIC)?;
        for v in [l, d, self.targets, self.rows_seen] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&[self.mode.code(), self.design_rows.is_some() as u8])?;
        for v in [self.kernel.bandwidth(), self.lambda] {
            w.write_all(&v.to_le_bytes())?;
        }
        write_f64s(&mut w, self.centers.points.as_slice())?;
        w.write_all(&self.centers.regions.iter().map(|r| r.code()).collect::<Vec<u8>>())?;
        for i in 0..l {
            for j in 0..=i {
                w.write_all(&self.normal[(i, j)].to_le_bytes())?;
            }
        }
        for t in 0..self.targets {
            for j in 0..l {
                w.write_all(&self.rhs[(j, t)].to_le_bytes())?;
            }
        }
        w.write_all(&(self.pending as u64).to_le_bytes())?;
        for i in 0..self.pending {
            for j in 0..l {
                w.write_all(&self.panel[(i, j)].to_le_bytes())?;
            }
        }
        for i in 0..self.pending {
            for t in 0..self.targets {
                w.write_all(&self.panel_y[(i, t)].to_le_bytes())?;
            }
        }
        if let Some(store) = &self.design_rows {
            write_f64s(&mut w, store)?;
        }
        Ok(())
    }

    /// Restore a checkpoint. The operator and basis mode are supplied by the
    /// caller (they hold closures); the mode kind must match the file.
    pub fn read_checkpoint<R: Read>(mut r: R, operator: &PdeOperator, mode: BasisMode) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a low-rank checkpoint".into()));
        }
        let l = read_u64(&mut r)? as usize;
        let d = read_u64(&mut r)? as usize;
        let targets = read_u64(&mut r)? as usize;
        let rows_seen = read_u64(&mut r)? as usize;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        if flags[0] != mode.code() {
            return Err(Error::Config("checkpoint basis mode differs from the supplied mode".into()));
        }
        let eta = read_f64(&mut r)?;
        let lambda = read_f64(&mut r)?;
        let coords = read_f64s(&mut r, l * d)?;
        let mut codes = vec![0u8; l];
        r.read_exact(&mut codes)?;
        let regions = codes
            .iter()
            .map(|&c| Region::from_code(c).ok_or_else(|| Error::Parse(format!("bad region code {c}"))))
            .collect::<Result<Vec<_>>>()?;
        let kernel = GaussianKernel::new(eta, d)?;
        let centers = LabeledSampleSet::new(Points::new(d, coords)?, regions, None, 0)?;
        let mut model = LowRankModel::new(&kernel, operator, centers, mode, lambda, targets, flags[1] != 0)?;
        for i in 0..l {
            for j in 0..=i {
                model.normal[(i, j)] = read_f64(&mut r)?;
            }
        }
        for t in 0..targets {
            for j in 0..l {
                model.rhs[(j, t)] = read_f64(&mut r)?;
            }
        }
        let pending = read_u64(&mut r)? as usize;
        if pending >= PANEL_ROWS {
            return Err(Error::Parse(format!("pending row count {pending} exceeds the panel size")));
        }
        for i in 0..pending {
            for j in 0..l {
                model.panel[(i, j)] = read_f64(&mut r)?;
            }
        }
        for i in 0..pending {
            for t in 0..targets {
                model.panel_y[(i, t)] = read_f64(&mut r)?;
            }
        }
        model.pending = pending;
        model.rows_seen = rows_seen;
        if let Some(store) = &mut model.design_rows {
            *store = read_f64s(&mut r, rows_seen * l)?;
        }
        Ok(model)
    }
}

/// `normal_lower += P^T P`, `rhs += P^T Y`.
fn fold_panel(normal: &mut Mat<f64>, rhs: &mut Mat<f64>, panel: MatRef<'_, f64>, y: MatRef<'_, f64>) {
    triangular::matmul(
        normal.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Add,
        panel.transpose(),
        BlockStructure::Rectangular,
        panel,
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    if rhs.ncols() > 0 {
        matmul(rhs.as_mut(), Accum::Add, panel.transpose(), y, 1.0, Par::Seq);
    }
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(v.len() * 8);
    for x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
