//! Uniform view over trained posterior surrogates.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flows::{ConditionalFlow, LOG_ZERO};
use crate::rng::SbiRng;
use crate::simulators::{PriorSpec, Task};
use crate::tensor::{Mlp, Tensor};

/// What diagnostics need from a posterior approximation `q̂(θ | x)`.
pub trait Surrogate {
    fn prior(&self) -> &PriorSpec;

    fn x_dim(&self) -> usize;

    fn theta_dim(&self) -> usize {
        self.prior().dim()
    }

    /// `ln q̂(θ_i | x_i)` up to an additive function of `x_i`, one value per
    /// row. Points outside the support get [`LOG_ZERO`].
    fn log_unnorm_batch(&self, thetas: &Tensor, xs: &Tensor) -> Result<Vec<f64>>;

    /// Whether [`Surrogate::log_unnorm_batch`] is already normalized.
    fn is_normalized(&self) -> bool;

    /// Direct samples from `q̂(· | x)`, or `None` when the surrogate can only
    /// be sampled through a grid.
    fn sample(&self, x: &[f64], rng: &mut SbiRng, n: usize) -> Option<Result<Vec<Vec<f64>>>>;

    /// Many parameters against one observation.
    fn log_unnorm_many(&self, thetas: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
        let xs = crate::flows::tile(x, thetas.rows())?;
        self.log_unnorm_batch(thetas, &xs)
    }

    /// Classifier logits `ln q̂(θ|x) − ln p(θ)`. For ratio surrogates this is
    /// the network output itself.
    fn classifier_logits(&self, thetas: &Tensor, xs: &Tensor) -> Result<Vec<f64>> {
        let lq = self.log_unnorm_batch(thetas, xs)?;
        let prior = self.prior();
        (0..thetas.rows())
            .map(|r| {
                let lp = prior.log_density(thetas.row(r));
                if !lp.is_finite() {
                    return Err(Error::OutsideSupport(thetas.row(r).to_vec()));
                }
                if !lq[r].is_finite() {
                    return Err(Error::NonFinite { op: "surrogate density" });
                }
                Ok(lq[r] - lp)
            })
            .collect()
    }
}

fn prior_column(prior: &PriorSpec, thetas: &Tensor) -> Vec<f64> {
    (0..thetas.rows())
        .map(|r| prior.log_density(thetas.row(r)))
        .collect()
}

/// Stacks `[θ | x]` row-wise.
pub(crate) fn concat_inputs(thetas: &Tensor, xs: &Tensor) -> Result<Tensor> {
    if thetas.rows() != xs.rows() {
        return Err(Error::ShapeMismatch {
            op: "concat_inputs",
            left: thetas.shape().to_vec(),
            right: xs.shape().to_vec(),
        });
    }
    let w = thetas.cols() + xs.cols();
    let mut data = Vec::with_capacity(thetas.rows() * w);
    for r in 0..thetas.rows() {
        data.extend_from_slice(thetas.row(r));
        data.extend_from_slice(xs.row(r));
    }
    Tensor::matrix(thetas.rows(), w, data)
}

/// `q̂(θ|x) ∝ exp f(θ, x) · p(θ)` for a classifier head `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSurrogate {
    pub head: Mlp,
    pub prior: PriorSpec,
}

impl RatioSurrogate {
    /// Raw head outputs `f(θ, x)`.
    pub fn logits(&self, thetas: &Tensor, xs: &Tensor) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(thetas.rows());
        for start in (0..thetas.rows()).step_by(4096) {
            let end = (start + 4096).min(thetas.rows());
            let t = Tensor::from_rows(&(start..end).map(|r| thetas.row(r)).collect::<Vec<_>>())?;
            let x = Tensor::from_rows(&(start..end).map(|r| xs.row(r)).collect::<Vec<_>>())?;
            out.extend_from_slice(self.head.eval(&concat_inputs(&t, &x)?)?.data());
        }
        Ok(out)
    }
}

impl Surrogate for RatioSurrogate {
    fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    fn x_dim(&self) -> usize {
        self.head.input_dim() - self.prior.dim()
    }

    fn log_unnorm_batch(&self, thetas: &Tensor, xs: &Tensor) -> Result<Vec<f64>> {
        let f = self.logits(thetas, xs)?;
        Ok(f.iter()
            .zip(prior_column(&self.prior, thetas))
            .map(|(f, lp)| if lp.is_finite() { f + lp } else { LOG_ZERO })
            .collect())
    }

    fn is_normalized(&self) -> bool {
        false
    }

    fn sample(&self, _: &[f64], _: &mut SbiRng, _: usize) -> Option<Result<Vec<Vec<f64>>>> {
        None
    }

    fn classifier_logits(&self, thetas: &Tensor, xs: &Tensor) -> Result<Vec<f64>> {
        for r in 0..thetas.rows() {
            if !self.prior.contains(thetas.row(r)) {
                return Err(Error::OutsideSupport(thetas.row(r).to_vec()));
            }
        }
        self.logits(thetas, xs)
    }
}

/// A normalizing flow `q(θ|x)` together with the task prior.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSurrogate {
    pub flow: ConditionalFlow,
    pub prior: PriorSpec,
}

impl Surrogate for FlowSurrogate {
    fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    fn x_dim(&self) -> usize {
        self.flow.x_dim()
    }

    fn log_unnorm_batch(&self, thetas: &Tensor, xs: &Tensor) -> Result<Vec<f64>> {
        self.flow.log_prob_batch(thetas, xs)
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn sample(&self, x: &[f64], rng: &mut SbiRng, n: usize) -> Option<Result<Vec<Vec<f64>>>> {
        Some(self.flow.sample(x, rng, n))
    }
}

/// The prior used as a posterior: ignores `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSurrogate {
    pub prior: PriorSpec,
    pub x_dim: usize,
}

impl Surrogate for PriorSurrogate {
    fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    fn x_dim(&self) -> usize {
        self.x_dim
    }

    fn log_unnorm_batch(&self, thetas: &Tensor, _: &Tensor) -> Result<Vec<f64>> {
        Ok(prior_column(&self.prior, thetas)
            .into_iter()
            .map(|lp| if lp.is_finite() { lp } else { LOG_ZERO })
            .collect())
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn sample(&self, _: &[f64], rng: &mut SbiRng, n: usize) -> Option<Result<Vec<Vec<f64>>>> {
        Some(Ok((0..n).map(|_| self.prior.sample(rng)).collect()))
    }
}

/// Closed-form posterior of a task that has one (Gaussian-linear).
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSurrogate {
    task: Task,
    prior: PriorSpec,
}

impl AnalyticSurrogate {
    pub fn new(task: Task) -> Result<Self> {
        if task.analytic_posterior(&vec![0.0; task.x_dim()]).is_none() {
            return Err(Error::InvalidArgument(alloc::format!(
                "task {task} has no closed-form posterior"
            )));
        }
        Ok(AnalyticSurrogate { task, prior: task.prior() })
    }
}

impl Surrogate for AnalyticSurrogate {
    fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    fn x_dim(&self) -> usize {
        self.task.x_dim()
    }

    fn log_unnorm_batch(&self, thetas: &Tensor, xs: &Tensor) -> Result<Vec<f64>> {
        (0..thetas.rows())
            .map(|r| {
                let post = self
                    .task
                    .analytic_posterior(xs.row(r))
                    .ok_or(Error::NonFinite { op: "analytic posterior" })?;
                Ok(post.log_prob(thetas.row(r)))
            })
            .collect()
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn sample(&self, x: &[f64], rng: &mut SbiRng, n: usize) -> Option<Result<Vec<Vec<f64>>>> {
        let post = self.task.analytic_posterior(x)?;
        Some(Ok((0..n).map(|_| post.sample(rng)).collect()))
    }
}

/// Output of training: either family of learned surrogate.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedSurrogate {
    Ratio(RatioSurrogate),
    Flow(FlowSurrogate),
}

impl TrainedSurrogate {
    fn inner(&self) -> &dyn Surrogate {
        match self {
            TrainedSurrogate::Ratio(r) => r,
            TrainedSurrogate::Flow(f) => f,
        }
    }
}

impl Surrogate for TrainedSurrogate {
    fn prior(&self) -> &PriorSpec {
        self.inner().prior()
    }

    fn x_dim(&self) -> usize {
        self.inner().x_dim()
    }

    fn log_unnorm_batch(&self, thetas: &Tensor, xs: &Tensor) -> Result<Vec<f64>> {
        self.inner().log_unnorm_batch(thetas, xs)
    }

    fn is_normalized(&self) -> bool {
        self.inner().is_normalized()
    }

    fn sample(&self, x: &[f64], rng: &mut SbiRng, n: usize) -> Option<Result<Vec<Vec<f64>>>> {
        self.inner().sample(x, rng, n)
    }

    fn classifier_logits(&self, thetas: &Tensor, xs: &Tensor) -> Result<Vec<f64>> {
        self.inner().classifier_logits(thetas, xs)
    }
}
