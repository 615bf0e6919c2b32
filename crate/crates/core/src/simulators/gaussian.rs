use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::special::HALF_LN_2PI;

/// Gaussian with independent axes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return Err(invalid("mean and variance lengths differ"));
        }
        if var.iter().any(|v| !(*v > 0.0 && v.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("Gaussian needs finite mean and positive variance"));
        }
        Ok(DiagonalGaussian { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn log_prob(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(t, (m, v))| -0.5 * (t - m) * (t - m) / v - 0.5 * v.ln() - HALF_LN_2PI)
            .sum()
    }

    /// `E[ln N(θ)]` under the distribution itself: `−½ Σ (1 + ln 2πσ²)`.
    pub fn expected_log_prob(&self) -> f64 {
        self.var.iter().map(|v| -0.5 - 0.5 * v.ln() - HALF_LN_2PI).sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}
