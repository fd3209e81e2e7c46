//! Gaussian kernel with exact mixed partial derivatives.
//!
//! The kernel `K(x, y) = exp(-|x - y|^2 / eta^2)` depends only on `r = x - y`
//! and factorizes over coordinates, so every mixed derivative
//! `d^alpha_x d^beta_y K` is a product of one-dimensional Gaussian derivatives:
//!
//! ```text
//! d^n/dr^n exp(-(r/eta)^2) = eta^-n (-1)^n H_n(r/eta) exp(-(r/eta)^2)
//! d^beta_y = (-1)^|beta| d^beta_r
//! ```
//!
//! with `H_n` the physicists' Hermite polynomials.

use std::fmt;

use crate::error::{Error, Result};

/// Separations with `|x - y| / eta` above this radius evaluate to exactly zero,
/// for the kernel and every derivative.
pub const UNDERFLOW_RADIUS: f64 = 40.0;

/// Default maximum derivative order per kernel argument.
pub const DEFAULT_MAX_ORDER: u32 = 3;

/// Exponent tuple of a partial derivative.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zeros(dimension: usize) -> Self {
        MultiIndex(vec![0; dimension])
    }

    /// `order` derivatives along `axis`.
    pub fn axis(dimension: usize, axis: usize, order: u32) -> Self {
        let mut e = vec![0; dimension];
        e[axis] = order;
        MultiIndex(e)
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    /// Total order `|alpha|`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn has_odd_component(&self) -> bool {
        self.0.iter().any(|&e| e % 2 == 1)
    }

    /// Componentwise difference, `None` unless `other <= self`.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        if self.dimension() != other.dimension() {
            return None;
        }
        self.0.iter().zip(&other.0).map(|(&a, &b)| a.checked_sub(b)).collect::<Option<Vec<_>>>().map(MultiIndex)
    }

    /// Componentwise sum.
    pub fn plus(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// All `gamma` with `gamma <= self` componentwise, in lexicographic order.
    pub fn lower_set(&self) -> Vec<MultiIndex> {
        let mut out = vec![Vec::with_capacity(self.dimension())];
        for &e in &self.0 {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..=e).map(move |g| {
                        let mut p = prefix.clone();
                        p.push(g);
                        p
                    })
                })
                .collect();
        }
        out.into_iter().map(MultiIndex).collect()
    }

    /// Multi-binomial coefficient `prod_i C(alpha_i, gamma_i)`.
    pub fn binomial(&self, gamma: &MultiIndex) -> f64 {
        self.0.iter().zip(&gamma.0).map(|(&n, &k)| binomial(n, k)).product()
    }

    /// All multi-indices of the given dimension with total order `<= max_order`.
    pub fn all_up_to(dimension: usize, max_order: u32) -> Vec<MultiIndex> {
        MultiIndex(vec![max_order; dimension]).lower_set().into_iter().filter(|m| m.order() <= max_order).collect()
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&[u32]> for MultiIndex {
    fn from(e: &[u32]) -> Self {
        MultiIndex(e.to_vec())
    }
}

impl<const N: usize> From<[u32; N]> for MultiIndex {
    fn from(e: [u32; N]) -> Self {
        MultiIndex(e.to_vec())
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Physicists' Hermite polynomial `H_n(t)` by three-term recursion.
pub fn hermite(n: u32, t: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 2.0 * t;
    for k in 1..n {
        let next = 2.0 * t * cur - 2.0 * f64::from(k) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// A symmetric kernel with derivatives in both arguments.
///
/// Only the Gaussian kernel is provided; the trait marks where other smooth
/// kernels would plug in.
pub trait Kernel: Send + Sync {
    fn dimension(&self) -> usize;
    fn max_order(&self) -> u32;
    fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64>;
    /// `d^alpha_x d^beta_y K(x, y)`.
    fn deriv(&self, alpha: &MultiIndex, beta: &MultiIndex, x: &[f64], y: &[f64]) -> Result<f64>;
}

/// Isotropic Gaussian kernel `exp(-|x - y|^2 / eta^2)` on `R^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianKernel {
    bandwidth: f64,
    dimension: usize,
    max_order: u32,
}

impl GaussianKernel {
    pub fn new(bandwidth: f64, dimension: usize) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("kernel bandwidth must be positive, got {bandwidth}")));
        }
        if dimension == 0 {
            return Err(Error::Config("kernel dimension must be at least 1".into()));
        }
        Ok(GaussianKernel { bandwidth, dimension, max_order: DEFAULT_MAX_ORDER })
    }

    /// Raise or lower the per-argument derivative order limit.
    pub fn with_max_order(mut self, max_order: u32) -> Self {
        self.max_order = max_order;
        self
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::Shape(format!("point has dimension {}, kernel expects {}", x.len(), self.dimension)));
        }
        Ok(())
    }

    pub(crate) fn check_index(&self, alpha: &MultiIndex) -> Result<()> {
        if alpha.dimension() != self.dimension {
            return Err(Error::Shape(format!(
                "multi-index {alpha:?} has dimension {}, kernel expects {}",
                alpha.dimension(),
                self.dimension
            )));
        }
        if alpha.order() > self.max_order {
            return Err(Error::Capability(format!(
                "derivative order {} exceeds the kernel maximum {}",
                alpha.order(),
                self.max_order
            )));
        }
        Ok(())
    }

    fn scaled_sq_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        sq / (self.bandwidth * self.bandwidth)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let s = self.scaled_sq_distance(x, y);
        if s > UNDERFLOW_RADIUS * UNDERFLOW_RADIUS {
            0.0
        } else {
            (-s).exp()
        }
    }

    pub fn deriv(&self, alpha: &MultiIndex, beta: &MultiIndex, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        self.check_index(alpha)?;
        self.check_index(beta)?;
        let s = self.scaled_sq_distance(x, y);
        if s > UNDERFLOW_RADIUS * UNDERFLOW_RADIUS {
            return Ok(0.0);
        }
        let mut value = (-s).exp();
        let inv = 1.0 / self.bandwidth;
        for i in 0..self.dimension {
            let n = alpha.0[i] + beta.0[i];
            if n == 0 {
                continue;
            }
            let t = (x[i] - y[i]) * inv;
            value *= (-inv).powi(n as i32) * hermite(n, t);
        }
        if beta.order() % 2 == 1 {
            value = -value;
        }
        Ok(value)
    }
}

impl Kernel for GaussianKernel {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn max_order(&self) -> u32 {
        self.max_order
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        GaussianKernel::eval(self, x, y)
    }

    fn deriv(&self, alpha: &MultiIndex, beta: &MultiIndex, x: &[f64], y: &[f64]) -> Result<f64> {
        GaussianKernel::deriv(self, alpha, beta, x, y)
    }
}

/// Per-pair derivative table reused across many `(alpha, beta)` lookups.
///
/// After [`PairDerivatives::load`], `table[i][n] = (-1/eta)^n H_n(r_i / eta)` and
/// `base = K(x, y)`, so every mixed derivative is a product of table entries.
/// No allocation happens after construction.
#[derive(Clone, Debug)]
pub struct PairDerivatives {
    dimension: usize,
    stride: usize,
    table: Vec<f64>,
    base: f64,
}

impl PairDerivatives {
    pub fn new(kernel: &GaussianKernel) -> Self {
        let stride = 2 * kernel.max_order as usize + 1;
        PairDerivatives { dimension: kernel.dimension, stride, table: vec![0.0; kernel.dimension * stride], base: 0.0 }
    }

    /// Fill the table for `(x, y)` up to combined order `max_total` per coordinate.
    ///
    /// Callers validate dimensions and orders beforehand.
    #[inline]
    pub fn load(&mut self, kernel: &GaussianKernel, x: &[f64], y: &[f64], max_total: u32) {
        debug_assert!((max_total as usize) < self.stride);
        let s = kernel.scaled_sq_distance(x, y);
        if s > UNDERFLOW_RADIUS * UNDERFLOW_RADIUS {
            self.base = 0.0;
            return;
        }
        self.base = (-s).exp();
        let inv = 1.0 / kernel.bandwidth;
        for i in 0..self.dimension {
            let row = &mut self.table[i * self.stride..(i + 1) * self.stride];
            let t = (x[i] - y[i]) * inv;
            row[0] = 1.0;
            if max_total == 0 {
                continue;
            }
            let mut prev = 1.0;
            let mut cur = 2.0 * t;
            let mut scale = -inv;
            row[1] = scale * cur;
            for n in 1..max_total as usize {
                let next = 2.0 * t * cur - 2.0 * n as f64 * prev;
                prev = cur;
                cur = next;
                scale *= -inv;
                row[n + 1] = scale * cur;
            }
        }
    }

    /// Kernel value at the loaded pair.
    pub fn value(&self) -> f64 {
        self.base
    }

    /// `d^alpha_x d^beta_y K` at the loaded pair.
    #[inline]
    pub fn mixed(&self, alpha: &MultiIndex, beta: &MultiIndex) -> f64 {
        if self.base == 0.0 {
            return 0.0;
        }
        let mut v = self.base;
        let mut beta_order = 0;
        for i in 0..self.dimension {
            let a = alpha.0[i];
            let b = beta.0[i];
            beta_order += b;
            let n = (a + b) as usize;
            if n > 0 {
                v *= self.table[i * self.stride + n];
            }
        }
        if beta_order % 2 == 1 {
            -v
        } else {
            v
        }
    }
}
