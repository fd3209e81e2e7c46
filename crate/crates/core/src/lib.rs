//! Physics-informed kernel ridge regression for linear Dirichlet problems.
//!
//! A Gaussian kernel and a region-tagged differential operator define a
//! generalized Gram matrix; the regularized closed-form solve yields a
//! reusable solution operator mapping PDE data to solution estimates. A
//! streamed low-rank variant scales the same estimator to large sample counts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod linalg;
pub mod lowrank;
pub mod metrics;
pub mod operators;
pub mod problems;
pub mod sampling;
pub mod solver;

pub use error::{Error, Result};
pub use kernel::{GaussianKernel, Kernel, MultiIndex, PairDerivatives};
pub use operators::{DifferentiableFunction, OperatorTerm, PdeOperator, PointFunctional, Region};
pub use sampling::{BoxDomain, LabeledSampleSet, Points};
