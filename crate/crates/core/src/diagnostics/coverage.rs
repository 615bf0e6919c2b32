use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::objectives::Surrogate;
use crate::tensor::Tensor;

/// How samples whose density equals the target's density are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Only strictly denser samples count; a flat surrogate gets rank 0.
    #[default]
    Strict,
    /// Ties count as a uniform fraction, `(greater + U·ties) / M`, which makes
    /// the rank of a flat surrogate exactly uniform.
    Randomized,
}

/// Fraction of posterior samples denser than the target, from log densities.
pub fn rank_from_densities<R: Rng>(target: f64, samples: &[f64], tie: TieBreak, rng: &mut R) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("posterior samples"));
    }
    if target.is_nan() || samples.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite { op: "hpdr_rank" });
    }
    let greater = samples.iter().filter(|&&s| s > target).count() as f64;
    let m = samples.len() as f64;
    Ok(match tie {
        TieBreak::Strict => greater / m,
        TieBreak::Randomized => {
            let ties = samples.iter().filter(|&&s| s == target).count() as f64;
            (greater + rng.random::<f64>() * ties) / m
        }
    })
}

/// Rank of `θ*` within the surrogate's highest-density ordering, estimated
/// from samples of `q̂(· | x*)`. `θ*` lies in the `1 − α` region iff the rank
/// is at most `1 − α`.
pub fn hpdr_rank<S: Surrogate + ?Sized, R: Rng>(
    surrogate: &S,
    theta_star: &[f64],
    x_star: &[f64],
    samples: &[Vec<f64>],
    tie: TieBreak,
    rng: &mut R,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("posterior samples"));
    }
    let mut rows: Vec<&[f64]> = Vec::with_capacity(samples.len() + 1);
    rows.push(theta_star);
    rows.extend(samples.iter().map(|s| s.as_slice()));
    let lq = surrogate.log_unnorm_many(&Tensor::from_rows(&rows)?, x_star)?;
    rank_from_densities(lq[0], &lq[1..], tie, rng)
}

/// The 19 nominal levels `0.05, 0.10, …, 0.95`.
pub fn default_levels() -> Vec<f64> {
    (1..20).map(|i| i as f64 / 20.0).collect()
}

/// Empirical coverage against nominal credibility.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCurve {
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
    /// Binomial standard error per level.
    pub std_err: Vec<f64>,
    pub n_test: usize,
}

impl CoverageCurve {
    /// Coverage at each level is the fraction of ranks `≤ level`.
    pub fn from_ranks(ranks: &[f64], levels: &[f64]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Empty("test pairs"));
        }
        if levels.iter().any(|l| !(0.0..=1.0).contains(l)) || levels.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("levels must be sorted within [0, 1]"));
        }
        let n = ranks.len() as f64;
        let coverage: Vec<f64> = levels
            .iter()
            .map(|&l| ranks.iter().filter(|&&r| r <= l).count() as f64 / n)
            .collect();
        let std_err = coverage.iter().map(|c| (c * (1.0 - c) / n).sqrt()).collect();
        Ok(CoverageCurve {
            levels: levels.to_vec(),
            coverage,
            std_err,
            n_test: ranks.len(),
        })
    }

    /// Largest `nominal − coverage` over levels; positive means overconfident somewhere.
    pub fn max_shortfall(&self) -> f64 {
        self.levels
            .iter()
            .zip(&self.coverage)
            .map(|(l, c)| l - c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `|coverage − nominal|`.
    pub fn max_abs_deviation(&self) -> f64 {
        self.levels
            .iter()
            .zip(&self.coverage)
            .map(|(l, c)| (l - c).abs())
            .fold(0.0, f64::max)
    }
}
