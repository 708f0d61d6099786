//! Diagonal-covariance Gaussian mixtures: evaluation, sampling and EM fitting.

mod em;

pub use em::{em_fit, em_fit_detailed, EmConfig, EmFit, EmTrace, MIN_VARIANCE};

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::math::log_sum_exp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Weighted mixture of axis-aligned Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    // log w_j - 0.5 Σ_d ln(2π σ²_jd)
    log_norm: Vec<f64>,
    inv_variances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::InvalidInput(format!(
                "{} weights, {} means and {} variance vectors",
                k,
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("mixture dimension must be positive".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.len() });
            }
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("non-finite component mean".into()));
            }
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Numeric("component variance must be positive and finite".into()));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Numeric("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Numeric(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self::from_parts_unchecked(weights, means, variances))
    }

    pub(crate) fn from_parts_unchecked(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    ) -> Self {
        let log_norm = weights
            .iter()
            .zip(&variances)
            .map(|(w, v)| {
                w.ln() - 0.5 * v.iter().map(|s| LN_2PI + s.ln()).sum::<f64>()
            })
            .collect();
        let inv_variances = variances
            .iter()
            .map(|v| v.iter().map(|s| 1.0 / s).collect())
            .collect();
        Self {
            weights,
            means,
            variances,
            log_norm,
            inv_variances,
        }
    }

    /// Single component with the given mean and variances.
    pub fn single(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variances])
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Writes `log w_j + log N(x; μ_j, σ²_j)` for every component into `out`.
    pub(crate) fn component_log_terms(&self, x: &[f64], out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate() {
            let quad: f64 = x
                .iter()
                .zip(&self.means[j])
                .zip(&self.inv_variances[j])
                .map(|((xi, mu), iv)| {
                    let d = xi - mu;
                    d * d * iv
                })
                .sum();
            *slot = self.log_norm[j] - 0.5 * quad;
        }
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.resize(self.num_components(), 0.0);
        self.component_log_terms(x, scratch);
        log_sum_exp(scratch)
    }

    /// `log Σ_j w_j N(x; μ_j, diag σ²_j)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.log_density_unchecked(x, &mut Vec::new()))
    }

    /// Per-frame log densities, in frame order.
    pub fn log_densities(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: features.dim(),
            });
        }
        let mut scratch = Vec::with_capacity(self.num_components());
        Ok(features
            .frames()
            .map(|x| self.log_density_unchecked(x, &mut scratch))
            .collect())
    }

    /// `(1/M) Σ_i log f(x_i)`.
    pub fn mean_log_likelihood(&self, features: &FeatureMatrix) -> Result<f64> {
        let logs = self.log_densities(features)?;
        Ok(logs.iter().sum::<f64>() / logs.len() as f64)
    }

    /// Draws `n` points, returned frame by frame.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let j = self.pick_component(rng.random::<f64>());
                self.means[j]
                    .iter()
                    .zip(&self.variances[j])
                    .map(|(mu, var)| {
                        let z: f64 = rng.sample(StandardNormal);
                        mu + var.sqrt() * z
                    })
                    .collect()
            })
            .collect()
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return j;
            }
        }
        self.weights.len() - 1
    }
}

/// Density of a one-dimensional normal, used by tests and oracles.
pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

/// Mean log-likelihood of `features` under `model`.
pub fn mean_log_likelihood(model: &GmmModel, features: &FeatureMatrix) -> Result<f64> {
    model.mean_log_likelihood(features)
}
