//! Benchmark tasks: priors, simulators and dataset assembly.

mod dataset;
mod gaussian;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};
use core::fmt;
use core::str::FromStr;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::special::HALF_LN_2PI;

pub use dataset::{
    generate_dataset, generate_dataset_with, pairs_to_tensors, random_permutation, shuffle_marginal_batch,
    Dataset,
    Split, DEFAULT_TEST_SIZE, MIN_BUDGET,
};
pub use gaussian::DiagonalGaussian;

/// Observation noise scale of the Gaussian-linear task.
pub const GAUSSIAN_LINEAR_NOISE: f64 = 0.5;

/// Floor on SLCP scales so the covariance never degenerates.
const SLCP_SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// Uniform over `∏ [lower_d, upper_d]`.
    BoxUniform { lower: Vec<f64>, upper: Vec<f64> },
    StandardNormal { dim: usize },
}

impl PriorSpec {
    pub fn box_uniform(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(invalid("box prior bounds must be non-empty and equally long"));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(invalid("box prior needs finite bounds with a < b"));
        }
        Ok(PriorSpec::BoxUniform { lower, upper })
    }

    /// The same interval on every axis.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::box_uniform(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::BoxUniform { lower, .. } => lower.len(),
            PriorSpec::StandardNormal { dim } => *dim,
        }
    }

    /// Box bounds, if the prior has bounded support.
    pub fn bounds(&self) -> Option<(&[f64], &[f64])> {
        match self {
            PriorSpec::BoxUniform { lower, upper } => Some((lower, upper)),
            PriorSpec::StandardNormal { .. } => None,
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && match self {
                PriorSpec::BoxUniform { lower, upper } => theta
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(t, (a, b))| t >= a && t <= b),
                PriorSpec::StandardNormal { .. } => theta.iter().all(|t| t.is_finite()),
            }
    }

    /// `ln p(θ)`, `−∞` outside the support.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if !self.contains(theta) {
            return f64::NEG_INFINITY;
        }
        match self {
            PriorSpec::BoxUniform { lower, upper } => {
                -lower.iter().zip(upper).map(|(a, b)| (b - a).ln()).sum::<f64>()
            }
            PriorSpec::StandardNormal { .. } => {
                theta.iter().map(|t| -0.5 * t * t - HALF_LN_2PI).sum()
            }
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            PriorSpec::BoxUniform { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&a, &b)| a + (b - a) * rng.random::<f64>())
                .collect(),
            PriorSpec::StandardNormal { dim } => (0..*dim).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }
}

/// One joint draw `(θ, x)`. For tasks with nuisance parameters `theta` holds
/// only the inference target.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPair {
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    TwoMoons,
    Slcp,
    GaussianLinear,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::TwoMoons, Task::Slcp, Task::GaussianLinear];

    pub fn name(self) -> &'static str {
        match self {
            Task::TwoMoons => "two-moons",
            Task::Slcp => "slcp",
            Task::GaussianLinear => "gaussian-linear",
        }
    }

    /// Prior over every simulator parameter.
    pub fn simulation_prior(self) -> PriorSpec {
        match self {
            Task::TwoMoons => PriorSpec::BoxUniform { lower: vec![-1.0; 2], upper: vec![1.0; 2] },
            Task::Slcp => PriorSpec::BoxUniform { lower: vec![-3.0; 5], upper: vec![3.0; 5] },
            Task::GaussianLinear => PriorSpec::StandardNormal { dim: 2 },
        }
    }

    /// Prior over the inference target (the marginal of the simulation prior).
    pub fn prior(self) -> PriorSpec {
        match self {
            Task::Slcp => PriorSpec::BoxUniform { lower: vec![-3.0; 2], upper: vec![3.0; 2] },
            t => t.simulation_prior(),
        }
    }

    pub fn theta_dim(self) -> usize {
        2
    }

    pub fn x_dim(self) -> usize {
        match self {
            Task::Slcp => 8,
            _ => 2,
        }
    }

    /// Box over which 2-D diagnostics lay their grid: the prior box, or
    /// `[−5, 5]²` for the Gaussian prior.
    pub fn grid_bounds(self) -> ([f64; 2], [f64; 2]) {
        match self {
            Task::TwoMoons => ([-1.0, -1.0], [1.0, 1.0]),
            Task::Slcp => ([-3.0, -3.0], [3.0, 3.0]),
            Task::GaussianLinear => ([-5.0, -5.0], [5.0, 5.0]),
        }
    }

    /// Simulates `x` from a full simulation-parameter vector.
    pub fn simulate<R: Rng>(self, theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Task::TwoMoons => two_moons_simulate(theta, rng),
            Task::Slcp => slcp_simulate(theta, rng),
            Task::GaussianLinear => gaussian_linear_simulate(theta, rng),
        }
    }

    /// Draws one joint pair, keeping only the inference target in `theta`.
    pub fn sample_joint<R: Rng>(self, rng: &mut R) -> SimPair {
        let full = self.simulation_prior().sample(rng);
        let x = self
            .simulate(&full, rng)
            .expect("prior draws lie inside the simulator's support");
        let mut theta = full;
        theta.truncate(self.theta_dim());
        SimPair { theta, x }
    }

    /// Closed-form posterior, available for the Gaussian-linear task only.
    pub fn analytic_posterior(self, x: &[f64]) -> Option<DiagonalGaussian> {
        match self {
            Task::GaussianLinear => gaussian_linear_posterior(x).ok(),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "twomoons" => Ok(Task::TwoMoons),
            "slcp" => Ok(Task::Slcp),
            "gaussianlinear" | "gaussian" => Ok(Task::GaussianLinear),
            _ => Err(Error::InvalidArgument(alloc::format!("unknown task `{s}`"))),
        }
    }
}

fn check_in(task: Task, theta: &[f64]) -> Result<()> {
    let prior = task.simulation_prior();
    if theta.len() != prior.dim() {
        return Err(Error::ShapeMismatch {
            op: "simulate",
            left: vec![prior.dim()],
            right: vec![theta.len()],
        });
    }
    if !prior.contains(theta) {
        return Err(Error::OutsideSupport(theta.to_vec()));
    }
    Ok(())
}

/// Crescent of radius ≈ 0.1 centred at `(0.25, 0)`, shifted by
/// `(−|θ₁+θ₂|/√2, (−θ₁+θ₂)/√2)`.
pub fn two_moons_simulate<R: Rng>(theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    check_in(Task::TwoMoons, theta)?;
    let a = -PI / 2.0 + PI * rng.random::<f64>();
    let z: f64 = rng.sample(StandardNormal);
    let r = 0.1 + 0.01 * z;
    let (t1, t2) = (theta[0], theta[1]);
    Ok(vec![
        r * a.cos() + 0.25 - (t1 + t2).abs() * FRAC_1_SQRT_2,
        r * a.sin() + (-t1 + t2) * FRAC_1_SQRT_2,
    ])
}

/// Four iid points from a correlated 2-D Gaussian with mean `(θ₁, θ₂)`,
/// scales `θ₃², θ₄²` and correlation `tanh θ₅`.
pub fn slcp_simulate<R: Rng>(theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    check_in(Task::Slcp, theta)?;
    let (m1, m2) = (theta[0], theta[1]);
    let s1 = (theta[2] * theta[2]).max(SLCP_SCALE_FLOOR);
    let s2 = (theta[3] * theta[3]).max(SLCP_SCALE_FLOOR);
    let rho = theta[4].tanh();
    let tail = (1.0 - rho * rho).max(0.0).sqrt();
    let mut x = Vec::with_capacity(8);
    for _ in 0..4 {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        x.push(m1 + s1 * z1);
        x.push(m2 + s2 * (rho * z1 + tail * z2));
    }
    Ok(x)
}

/// Covariance of each SLCP point, `[[s₁², ρs₁s₂], [ρs₁s₂, s₂²]]`.
pub fn slcp_covariance(theta: &[f64]) -> Result<[[f64; 2]; 2]> {
    check_in(Task::Slcp, theta)?;
    let s1 = (theta[2] * theta[2]).max(SLCP_SCALE_FLOOR);
    let s2 = (theta[3] * theta[3]).max(SLCP_SCALE_FLOOR);
    let c = theta[4].tanh() * s1 * s2;
    Ok([[s1 * s1, c], [c, s2 * s2]])
}

/// `x = θ + 0.5·ε` with `ε ~ N(0, I₂)`.
pub fn gaussian_linear_simulate<R: Rng>(theta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    check_in(Task::GaussianLinear, theta)?;
    Ok(theta
        .iter()
        .map(|&t| t + GAUSSIAN_LINEAR_NOISE * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Conjugate posterior under the `N(0, I₂)` prior: mean `x/(1+σ²)`,
/// variance `σ²/(1+σ²)` per axis.
pub fn gaussian_linear_posterior(x: &[f64]) -> Result<DiagonalGaussian> {
    if x.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "gaussian_linear_posterior",
            left: vec![2],
            right: vec![x.len()],
        });
    }
    let s2 = GAUSSIAN_LINEAR_NOISE * GAUSSIAN_LINEAR_NOISE;
    let mean = x.iter().map(|v| v / (1.0 + s2)).collect();
    DiagonalGaussian::new(mean, vec![s2 / (1.0 + s2); 2])
}
