//! Calibration and fidelity diagnostics for trained surrogates.

mod coverage;
mod grid;
mod metrics;

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::objectives::Surrogate;
use crate::rng::SbiRng;
use crate::simulators::{pairs_to_tensors, shuffle_marginal_batch, SimPair, Task};

pub use coverage::{default_levels, hpdr_rank, rank_from_densities, CoverageCurve, TieBreak};
pub use grid::{grid_sample, GridEvaluation, MIN_GRID_RESOLUTION};
pub use metrics::{
    balancing_error, balancing_error_from_probs, chi2_identity_check, classifier_probs, kl_and_chi2,
    kl_chi2_inequality_check, ks_uniform, BalancingError,
};

/// Settings shared by the sample-based diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticConfig {
    /// Posterior samples per test pair.
    pub samples: usize,
    pub levels: Vec<f64>,
    pub tie: TieBreak,
    /// Cells per axis when a surrogate must be normalized or sampled on a grid.
    pub grid_resolution: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl DiagnosticConfig {
    /// 1024 samples, 19 levels, strict ties, a 256² grid over the task's box.
    pub fn for_task(task: Task) -> Self {
        let (lower, upper) = task.grid_bounds();
        DiagnosticConfig {
            samples: 1024,
            levels: default_levels(),
            tie: TieBreak::Strict,
            grid_resolution: 256,
            lower,
            upper,
        }
    }

    fn grid<S: Surrogate + ?Sized>(&self, surrogate: &S, x: &[f64]) -> Result<GridEvaluation> {
        GridEvaluation::evaluate(surrogate, x, self.lower, self.upper, self.grid_resolution)
    }
}

/// Everything measured on one trained surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub ranks: Vec<f64>,
    pub coverage: CoverageCurve,
    pub balancing: BalancingError,
    pub nominal_log_posterior: f64,
}

fn posterior_samples<S: Surrogate + ?Sized>(
    surrogate: &S,
    x: &[f64],
    cfg: &DiagnosticConfig,
    grid: Option<&GridEvaluation>,
    rng: &mut SbiRng,
) -> Result<Vec<Vec<f64>>> {
    if let Some(s) = surrogate.sample(x, rng, cfg.samples) {
        return s;
    }
    match grid {
        Some(g) => grid_sample(g, rng, cfg.samples),
        None => grid_sample(&cfg.grid(surrogate, x)?, rng, cfg.samples),
    }
}

/// Ranks of every test pair's true parameter.
pub fn ranks<S: Surrogate + ?Sized>(
    surrogate: &S,
    test: &[SimPair],
    cfg: &DiagnosticConfig,
    rng: &mut SbiRng,
) -> Result<Vec<f64>> {
    test.iter()
        .map(|p| {
            let samples = posterior_samples(surrogate, &p.x, cfg, None, rng)?;
            hpdr_rank(surrogate, &p.theta, &p.x, &samples, cfg.tie, rng)
        })
        .collect()
}

pub fn expected_coverage<S: Surrogate + ?Sized>(
    surrogate: &S,
    test: &[SimPair],
    cfg: &DiagnosticConfig,
    rng: &mut SbiRng,
) -> Result<CoverageCurve> {
    if test.is_empty() {
        return Err(Error::Empty("test pairs"));
    }
    CoverageCurve::from_ranks(&ranks(surrogate, test, cfg, rng)?, &cfg.levels)
}

/// `mean ln q̂(θ*|x*)` over test pairs. Unnormalized surrogates are
/// normalized per observation on the grid, which must have at least
/// [`MIN_GRID_RESOLUTION`] cells per axis.
pub fn nominal_log_posterior<S: Surrogate + ?Sized>(
    surrogate: &S,
    test: &[SimPair],
    cfg: &DiagnosticConfig,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test pairs"));
    }
    let (t, x) = pairs_to_tensors(test)?;
    let lq = surrogate.log_unnorm_batch(&t, &x)?;
    if surrogate.is_normalized() {
        return Ok(lq.iter().sum::<f64>() / lq.len() as f64);
    }
    check_resolution(cfg)?;
    let mut total = 0.0;
    for (p, l) in test.iter().zip(&lq) {
        total += l - cfg.grid(surrogate, &p.x)?.log_z();
    }
    Ok(total / test.len() as f64)
}

fn check_resolution(cfg: &DiagnosticConfig) -> Result<()> {
    if cfg.grid_resolution < MIN_GRID_RESOLUTION {
        return Err(invalid("grid resolution must be at least 64 per axis"));
    }
    Ok(())
}

/// Coverage, balancing error and nominal log posterior in one pass, sharing
/// each observation's grid between sampling and normalization.
///
/// Marginal pairs for the balancing error are the test pairs with `θ`
/// shuffled.
pub fn evaluate<S: Surrogate + ?Sized>(
    surrogate: &S,
    test: &[SimPair],
    cfg: &DiagnosticConfig,
    rng: &mut SbiRng,
) -> Result<Evaluation> {
    if test.len() < 2 {
        return Err(Error::Empty("test pairs"));
    }
    let needs_grid = !surrogate.is_normalized();
    if needs_grid {
        check_resolution(cfg)?;
    }
    let (t, x) = pairs_to_tensors(test)?;
    let lq = surrogate.log_unnorm_batch(&t, &x)?;
    let mut ranks = Vec::with_capacity(test.len());
    let mut nlp = 0.0;
    for (p, l) in test.iter().zip(&lq) {
        let grid = if needs_grid { Some(cfg.grid(surrogate, &p.x)?) } else { None };
        let samples = posterior_samples(surrogate, &p.x, cfg, grid.as_ref(), rng)?;
        ranks.push(hpdr_rank(surrogate, &p.theta, &p.x, &samples, cfg.tie, rng)?);
        nlp += l - grid.map_or(0.0, |g| g.log_z());
    }
    let marginal = shuffle_marginal_batch(test, rng)?;
    Ok(Evaluation {
        coverage: CoverageCurve::from_ranks(&ranks, &cfg.levels)?,
        ranks,
        balancing: balancing_error(surrogate, test, &marginal)?,
        nominal_log_posterior: nlp / test.len() as f64,
    })
}

/// One row of results for a `(algorithm, task, budget, seed)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub algorithm: String,
    pub task: String,
    pub budget: usize,
    pub seed: u64,
    pub coverage: CoverageCurve,
    pub balancing_error: f64,
    pub nominal_log_posterior: f64,
}
