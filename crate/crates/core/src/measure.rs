//! Probability measures and bounded test functions on the truncated space.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Mass defect accepted by the probability constructor.
const MASS_TOL: f64 = 1e-12;

/// A dense probability vector over the truncated state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    weights: Vec<f64>,
}

impl Measure {
    /// Validates nonnegativity and unit mass (within 1e-12). Weights are
    /// stored as given; no silent renormalisation.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite weight {w}")));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| **w < -MASS_TOL) {
            return Err(Error::InvalidMeasure(format!(
                "negative weight {w:e} at state {}",
                i + 1
            )));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!(
                "total mass {mass} deviates from 1 by {:e}",
                (mass - 1.0).abs()
            )));
        }
        Ok(Measure { weights })
    }

    /// Crate-internal constructor without validation, for transient
    /// integrator states (Runge-Kutta stages) that are close to but not
    /// exactly probability vectors.
    pub(crate) fn raw(weights: Vec<f64>) -> Self {
        Measure { weights }
    }

    /// Rescales a nonnegative weight vector to unit mass.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let mass: f64 = weights.iter().sum();
        if !mass.is_finite() || mass <= 0.0 {
            return Err(Error::InvalidMeasure(format!(
                "cannot normalise mass {mass}"
            )));
        }
        Measure::new(weights.iter().map(|w| w / mass).collect())
    }

    pub fn uniform(size: usize) -> Self {
        Measure {
            weights: vec![1.0 / size as f64; size],
        }
    }

    /// Point mass at the 0-based state index `x`.
    pub fn delta(size: usize, x: usize) -> Self {
        let mut weights = vec![0.0; size];
        weights[x] = 1.0;
        Measure { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }

    /// mu(phi).
    pub fn expect(&self, phi: &TestFunction) -> f64 {
        self.weights
            .iter()
            .zip(phi.values())
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Var_mu(phi) = mu(phi^2) - mu(phi)^2, clamped at 0 against roundoff.
    pub fn variance(&self, phi: &TestFunction) -> f64 {
        let mean = self.expect(phi);
        let second: f64 = self
            .weights
            .iter()
            .zip(phi.values())
            .map(|(w, v)| w * v * v)
            .sum();
        (second - mean * mean).max(0.0)
    }
}

/// A signed combination of point masses, used for differences m(eta) - mu.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure {
    weights: Vec<f64>,
}

impl SignedMeasure {
    pub fn diff(a: &Measure, b: &Measure) -> Result<Self> {
        check_same_size(a, b)?;
        Ok(SignedMeasure {
            weights: a
                .weights
                .iter()
                .zip(&b.weights)
                .map(|(x, y)| x - y)
                .collect(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total-variation norm: half the l1 norm.
    pub fn tv_norm(&self) -> f64 {
        0.5 * self.weights.iter().map(|w| w.abs()).sum::<f64>()
    }
}

/// A bounded function on the truncated space, with its sup norm cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    values: Vec<f64>,
    sup_norm: f64,
}

impl TestFunction {
    pub fn new(values: Vec<f64>) -> Self {
        let sup_norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        TestFunction { values, sup_norm }
    }

    pub fn constant(size: usize, c: f64) -> Self {
        TestFunction::new(vec![c; size])
    }

    pub fn one(size: usize) -> Self {
        TestFunction::constant(size, 1.0)
    }

    /// Indicator of the 0-based state index `x`.
    pub fn indicator(size: usize, x: usize) -> Self {
        let mut values = vec![0.0; size];
        values[x] = 1.0;
        TestFunction::new(values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// phi - c, used for centring phi around a flow mean.
    pub fn shifted(&self, c: f64) -> TestFunction {
        TestFunction::new(self.values.iter().map(|v| v - c).collect())
    }
}

fn check_same_size(a: &Measure, b: &Measure) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            context: "measure pair",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Total variation distance (half l1). In [0, 1] for probability measures.
pub fn tv_distance(mu1: &Measure, mu2: &Measure) -> Result<f64> {
    check_same_size(mu1, mu2)?;
    Ok(0.5
        * mu1
            .weights
            .iter()
            .zip(&mu2.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// Sum over states of 2^{-k} |mu1(x_k) - mu2(x_k)|, with the enumeration
/// (x_k) fixed to state index order and k starting at 1. Dominated by 2 TV,
/// and zero exactly when the measures coincide.
pub fn weighted_distance(mu1: &Measure, mu2: &Measure) -> Result<f64> {
    check_same_size(mu1, mu2)?;
    Ok(mu1
        .weights
        .iter()
        .zip(&mu2.weights)
        .enumerate()
        .map(|(k, (a, b))| 0.5f64.powi(k as i32 + 1) * (a - b).abs())
        .sum())
}
