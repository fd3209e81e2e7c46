//! Closed-form test functions with exact partial derivatives.

use std::f64::consts::PI;

use crate::kernel::MultiIndex;
use crate::operators::DifferentiableFunction;

/// A function of one variable with derivatives of every order.
#[derive(Clone, Debug, PartialEq)]
pub enum Univariate {
    /// `sum_k c_k t^k`.
    Poly(Vec<f64>),
    /// `sin(freq t + phase)`.
    Sin { freq: f64, phase: f64 },
    /// `exp(rate t)`.
    Exp { rate: f64 },
    /// Pointwise product.
    Product(Box<Univariate>, Box<Univariate>),
}

impl Univariate {
    pub fn constant(c: f64) -> Self {
        Univariate::Poly(vec![c])
    }

    /// `t (1 - t)`.
    pub fn bubble() -> Self {
        Univariate::Poly(vec![0.0, 1.0, -1.0])
    }

    pub fn sin(freq: f64, phase: f64) -> Self {
        Univariate::Sin { freq, phase }
    }

    pub fn cos(freq: f64, phase: f64) -> Self {
        Univariate::Sin { freq, phase: phase + PI / 2.0 }
    }

    pub fn times(self, other: Univariate) -> Self {
        Univariate::Product(Box::new(self), Box::new(other))
    }

    /// `d^n/dt^n` at `t`.
    pub fn derivative(&self, n: u32, t: f64) -> f64 {
        match self {
            Univariate::Poly(c) => {
                // differentiate coefficients n times, then Horner
                let k0 = n as usize;
                if k0 >= c.len() {
                    return 0.0;
                }
                let mut acc = 0.0;
                for k in (k0..c.len()).rev() {
                    let falling: f64 = (0..n).map(|m| (k - m as usize) as f64).product();
                    acc = acc * t + c[k] * falling;
                }
                acc
            }
            Univariate::Sin { freq, phase } => {
                let arg = freq * t + phase;
                let v = match n % 4 {
                    0 => arg.sin(),
                    1 => arg.cos(),
                    2 => -arg.sin(),
                    _ => -arg.cos(),
                };
                freq.powi(n as i32) * v
            }
            Univariate::Exp { rate } => rate.powi(n as i32) * (rate * t).exp(),
            Univariate::Product(f, g) => {
                let mut acc = 0.0;
                let mut binom = 1.0;
                for k in 0..=n {
                    acc += binom * f.derivative(k, t) * g.derivative(n - k, t);
                    binom = binom * (n - k) as f64 / (k + 1) as f64;
                }
                acc
            }
        }
    }
}

/// `sum_k coef_k prod_l f_{k,l}(x_l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableSum {
    dimension: usize,
    terms: Vec<(f64, Vec<Univariate>)>,
}

impl SeparableSum {
    /// Each term lists one factor per coordinate.
    pub fn new(dimension: usize, terms: Vec<(f64, Vec<Univariate>)>) -> Self {
        assert!(terms.iter().all(|(_, f)| f.len() == dimension), "one factor per coordinate");
        SeparableSum { dimension, terms }
    }
}

impl DifferentiableFunction for SeparableSum {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn max_order(&self) -> u32 {
        u32::MAX
    }

    fn partial(&self, alpha: &MultiIndex, x: &[f64]) -> f64 {
        let a = alpha.exponents();
        self.terms
            .iter()
            .map(|(c, fs)| c * fs.iter().enumerate().map(|(l, f)| f.derivative(a[l], x[l])).product::<f64>())
            .sum()
    }
}

/// `u(x) = sum_m w_m tanh(v_m . x + b_m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TanhNetwork {
    weights: Vec<f64>,
    directions: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl TanhNetwork {
    pub fn new(weights: Vec<f64>, directions: Vec<Vec<f64>>, biases: Vec<f64>) -> Self {
        assert!(weights.len() == directions.len() && weights.len() == biases.len());
        assert!(directions.windows(2).all(|w| w[0].len() == w[1].len()));
        TanhNetwork { weights, directions, biases }
    }

    pub fn units(&self) -> usize {
        self.weights.len()
    }
}

/// `d^n/dz^n tanh(z)` expressed through `t = tanh(z)`, `n <= 4`.
fn tanh_derivative(n: u32, z: f64) -> f64 {
    let t = z.tanh();
    let s = 1.0 - t * t;
    match n {
        0 => t,
        1 => s,
        2 => -2.0 * t * s,
        3 => (6.0 * t * t - 2.0) * s,
        4 => (16.0 * t - 24.0 * t * t * t) * s,
        _ => panic!("tanh derivatives are implemented up to order 4"),
    }
}

impl DifferentiableFunction for TanhNetwork {
    fn dimension(&self) -> usize {
        self.directions.first().map_or(0, |v| v.len())
    }

    fn max_order(&self) -> u32 {
        4
    }

    fn partial(&self, alpha: &MultiIndex, x: &[f64]) -> f64 {
        let a = alpha.exponents();
        let order = alpha.order();
        let mut acc = 0.0;
        for m in 0..self.weights.len() {
            let v = &self.directions[m];
            let z: f64 = v.iter().zip(x).map(|(vi, xi)| vi * xi).sum::<f64>() + self.biases[m];
            let chain: f64 = v.iter().zip(a).map(|(vi, &ai)| vi.powi(ai as i32)).product();
            acc += self.weights[m] * chain * tanh_derivative(order, z);
        }
        acc
    }
}
