//! Region-tagged linear differential operators.
//!
//! On interior points an operator acts as `sum_alpha phi_alpha(x) d^alpha`; on
//! boundary and initial points it acts as the identity (Dirichlet data). Every
//! action of an operator at a point is represented as a [`PointFunctional`], a
//! short list of weighted derivative indices, which the Gram assembly and the
//! low-rank design share.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernel::{GaussianKernel, MultiIndex, PairDerivatives};

/// Which part of the closed domain a sample point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Interior,
    Boundary,
    /// The `t = t_min` slice of a space-time domain.
    Initial,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Interior => "interior",
            Region::Boundary => "boundary",
            Region::Initial => "initial",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Region::Interior => 0,
            Region::Boundary => 1,
            Region::Initial => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Region> {
        match code {
            0 => Some(Region::Interior),
            1 => Some(Region::Boundary),
            2 => Some(Region::Initial),
            _ => None,
        }
    }
}

impl std::str::FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "interior" => Ok(Region::Interior),
            "boundary" => Ok(Region::Boundary),
            "initial" => Ok(Region::Initial),
            other => Err(Error::Parse(format!("unknown region tag {other:?}"))),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A function with analytic partial derivatives, used for exact test solutions
/// and for boundary windows.
pub trait DifferentiableFunction: Send + Sync {
    fn dimension(&self) -> usize;

    /// Highest total derivative order `partial` supports.
    fn max_order(&self) -> u32;

    /// `d^alpha f(x)`; `alpha.order() <= max_order()` is the caller's contract.
    fn partial(&self, alpha: &MultiIndex, x: &[f64]) -> f64;

    fn value(&self, x: &[f64]) -> f64 {
        self.partial(&MultiIndex::zeros(self.dimension()), x)
    }
}

/// Pointwise coefficient `phi_alpha(x)`.
pub type CoefficientFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One term `phi_alpha(x) d^alpha` of an interior operator.
#[derive(Clone)]
pub struct OperatorTerm {
    pub coefficient: CoefficientFn,
    pub index: MultiIndex,
}

impl OperatorTerm {
    pub fn new(index: MultiIndex, coefficient: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        OperatorTerm { coefficient: Arc::new(coefficient), index }
    }

    pub fn constant(index: MultiIndex, value: f64) -> Self {
        OperatorTerm::new(index, move |_| value)
    }
}

impl fmt::Debug for OperatorTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorTerm").field("index", &self.index).finish_non_exhaustive()
    }
}

/// Weighted derivative indices: the functional `v -> sum_k w_k d^{alpha_k} v(x)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointFunctional {
    pub terms: Vec<(f64, MultiIndex)>,
}

impl PointFunctional {
    /// Point evaluation.
    pub fn evaluation(dimension: usize) -> Self {
        PointFunctional { terms: vec![(1.0, MultiIndex::zeros(dimension))] }
    }

    /// Add `weight * d^index`, merging with an existing entry for the same index.
    pub fn push(&mut self, weight: f64, index: MultiIndex) {
        if weight == 0.0 {
            return;
        }
        match self.terms.iter_mut().find(|(_, m)| *m == index) {
            Some((w, _)) => *w += weight,
            None => self.terms.push((weight, index)),
        }
    }

    /// Largest derivative order referenced.
    pub fn order(&self) -> u32 {
        self.terms.iter().map(|(_, m)| m.order()).max().unwrap_or(0)
    }

    /// Apply `left` to the first kernel argument and `right` to the second at
    /// the pair loaded in `pair`.
    #[inline]
    pub fn bilinear(pair: &PairDerivatives, left: &PointFunctional, right: &PointFunctional) -> f64 {
        let mut acc = 0.0;
        for (wl, a) in &left.terms {
            let mut inner = 0.0;
            for (wr, b) in &right.terms {
                inner += wr * pair.mixed(a, b);
            }
            acc += wl * inner;
        }
        acc
    }
}

/// `P_s`: the interior operator `sum phi_alpha d^alpha` plus identity on
/// boundary and initial points.
#[derive(Clone)]
pub struct PdeOperator {
    name: String,
    dimension: usize,
    terms: Vec<OperatorTerm>,
    order: u32,
}

impl fmt::Debug for PdeOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeOperator")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .field("order", &self.order)
            .field("terms", &self.terms)
            .finish()
    }
}

impl PdeOperator {
    pub fn new(name: impl Into<String>, dimension: usize, terms: Vec<OperatorTerm>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("operator dimension must be at least 1".into()));
        }
        if let Some(t) = terms.iter().find(|t| t.index.dimension() != dimension) {
            return Err(Error::Shape(format!("operator term {:?} does not match dimension {dimension}", t.index)));
        }
        let order = terms.iter().map(|t| t.index.order()).max().unwrap_or(0);
        Ok(PdeOperator { name: name.into(), dimension, terms, order })
    }

    /// The order-zero operator with coefficient one: plain kernel regression.
    pub fn identity(dimension: usize) -> Self {
        PdeOperator::new("identity", dimension, vec![OperatorTerm::constant(MultiIndex::zeros(dimension), 1.0)])
            .expect("valid identity operator")
    }

    /// `-Laplacian` in `dimension` coordinates.
    pub fn negative_laplacian(dimension: usize) -> Self {
        let terms = (0..dimension).map(|i| OperatorTerm::constant(MultiIndex::axis(dimension, i, 2), -1.0)).collect();
        PdeOperator::new("negative-laplacian", dimension, terms).expect("valid laplacian")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// `s = max |alpha|` over interior terms.
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn terms(&self) -> &[OperatorTerm] {
        &self.terms
    }

    pub(crate) fn check_kernel(&self, kernel: &GaussianKernel) -> Result<()> {
        if kernel.dimension() != self.dimension {
            return Err(Error::Shape(format!(
                "operator dimension {} does not match kernel dimension {}",
                self.dimension,
                kernel.dimension()
            )));
        }
        if self.order > kernel.max_order() {
            return Err(Error::Capability(format!(
                "operator order {} exceeds kernel derivative capability {}",
                self.order,
                kernel.max_order()
            )));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::Shape(format!("point has dimension {}, operator expects {}", x.len(), self.dimension)));
        }
        Ok(())
    }

    /// The action of the operator at `x` as a derivative functional.
    pub fn functional(&self, x: &[f64], region: Region) -> PointFunctional {
        match region {
            Region::Boundary | Region::Initial => PointFunctional::evaluation(self.dimension),
            Region::Interior => {
                let mut f = PointFunctional::default();
                for t in &self.terms {
                    f.push((t.coefficient)(x), t.index.clone());
                }
                f
            }
        }
    }

    /// The operator applied to `rho(x) v(x)` at `x`, expressed as a functional on
    /// `v` through the Leibniz rule. `window` supplies the partials of `rho`.
    pub fn windowed_functional(
        &self,
        window: &dyn DifferentiableFunction,
        x: &[f64],
        region: Region,
    ) -> PointFunctional {
        let mut f = PointFunctional::default();
        match region {
            Region::Boundary | Region::Initial => {
                f.push(window.value(x), MultiIndex::zeros(self.dimension));
            }
            Region::Interior => {
                for t in &self.terms {
                    let phi = (t.coefficient)(x);
                    if phi == 0.0 {
                        continue;
                    }
                    for gamma in t.index.lower_set() {
                        let rest = t.index.checked_sub(&gamma).expect("gamma <= alpha");
                        let w = phi * t.index.binomial(&gamma) * window.partial(&gamma, x);
                        f.push(w, rest);
                    }
                }
            }
        }
        f
    }

    /// `(P_s u)(x)` for a function with analytic partials.
    pub fn apply_to_function(&self, u: &dyn DifferentiableFunction, x: &[f64], region: Region) -> Result<f64> {
        self.check_point(x)?;
        if u.dimension() != self.dimension {
            return Err(Error::Shape(format!(
                "function dimension {} does not match operator dimension {}",
                u.dimension(),
                self.dimension
            )));
        }
        let f = self.functional(x, region);
        if f.order() > u.max_order() {
            return Err(Error::Capability(format!(
                "function provides partials up to order {}, operator needs {}",
                u.max_order(),
                f.order()
            )));
        }
        Ok(f.terms.iter().map(|(w, a)| w * u.partial(a, x)).sum())
    }

    /// `P_s^{(1,0)} K(x, y)`: the operator acting on the first kernel argument at `x`.
    pub fn apply_first(&self, kernel: &GaussianKernel, x: &[f64], region_x: Region, y: &[f64]) -> Result<f64> {
        self.check_kernel(kernel)?;
        kernel.check_point(x)?;
        kernel.check_point(y)?;
        let f = self.functional(x, region_x);
        let mut pair = PairDerivatives::new(kernel);
        pair.load(kernel, x, y, f.order());
        Ok(PointFunctional::bilinear(&pair, &f, &PointFunctional::evaluation(self.dimension)))
    }

    /// `P_s^{(1,1)} K(x_i, x_j)`: the operator on both kernel arguments.
    pub fn apply_both(
        &self,
        kernel: &GaussianKernel,
        x_i: &[f64],
        region_i: Region,
        x_j: &[f64],
        region_j: Region,
    ) -> Result<f64> {
        self.check_kernel(kernel)?;
        kernel.check_point(x_i)?;
        kernel.check_point(x_j)?;
        let fi = self.functional(x_i, region_i);
        let fj = self.functional(x_j, region_j);
        let mut pair = PairDerivatives::new(kernel);
        pair.load(kernel, x_i, x_j, fi.order() + fj.order());
        Ok(PointFunctional::bilinear(&pair, &fi, &fj))
    }
}

/// `d^alpha_x [rho(x) K(z, x)]` by the general Leibniz rule.
pub fn leibniz_windowed_partial(
    window: &dyn DifferentiableFunction,
    kernel: &GaussianKernel,
    alpha: &MultiIndex,
    x: &[f64],
    z: &[f64],
) -> Result<f64> {
    kernel.check_point(x)?;
    kernel.check_point(z)?;
    kernel.check_index(alpha)?;
    if window.dimension() != kernel.dimension() {
        return Err(Error::Shape("window and kernel dimensions differ".into()));
    }
    if alpha.order() > window.max_order() {
        return Err(Error::Capability(format!(
            "window provides partials up to order {}, requested {}",
            window.max_order(),
            alpha.order()
        )));
    }
    let zero = MultiIndex::zeros(kernel.dimension());
    let mut acc = 0.0;
    for gamma in alpha.lower_set() {
        let rest = alpha.checked_sub(&gamma).expect("gamma <= alpha");
        acc += alpha.binomial(&gamma) * window.partial(&gamma, x) * kernel.deriv(&zero, &rest, z, x)?;
    }
    Ok(acc)
}
