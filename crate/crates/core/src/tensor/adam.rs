use alloc::vec::Vec;

use num_traits::Float;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. Shapes of `params`, `grads` and the moments must agree.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                left: alloc::vec![self.m.len()],
                right: alloc::vec![params.len(), grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Divides the learning rate by `factor` whenever the monitored loss has not
/// improved for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Self {
        PlateauScheduler {
            patience,
            factor,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Feeds one epoch's validation loss; returns the new learning rate when it
    /// was reduced.
    pub fn observe(&mut self, loss: f64, lr: f64) -> Option<f64> {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return None;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            Some(lr / self.factor)
        } else {
            None
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut w = Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let before = w.clone();
        let mut state = AdamState::new(&[&w], AdamConfig::default());
        state.step(&mut [&mut w], &[Tensor::zeros(vec![1, 3])]).unwrap();
        assert_eq!(w, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let mut state = AdamState::new(&[&w], AdamConfig { lr: 0.01, ..Default::default() });
        let g = Tensor::matrix(1, 2, vec![3.0, -0.2]).unwrap();
        state.step(&mut [&mut w], &[g]).unwrap();
        assert!((w.data()[0] - (1.0 - 0.01)).abs() < 1e-8);
        assert!((w.data()[1] - (1.0 + 0.01)).abs() < 1e-7);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut w = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let mut state = AdamState::new(&[&w], AdamConfig { lr: 0.01, ..Default::default() });
        for _ in 0..2000 {
            let g = Tensor::matrix(1, 3, w.data().iter().map(|x| 2.0 * x).collect()).unwrap();
            state.step(&mut [&mut w], &[g]).unwrap();
        }
        let norm = w.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut w = Tensor::zeros(vec![2, 2]);
        let mut state = AdamState::new(&[&w], AdamConfig::default());
        let err = state.step(&mut [&mut w], &[Tensor::zeros(vec![1, 4])]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { op: "adam", .. }));
    }

    #[test]
    fn plateau_divides_by_factor_after_patience() {
        let mut s = PlateauScheduler::new(10, 10.0);
        assert_eq!(s.observe(1.0, 1e-3), None);
        for _ in 0..9 {
            assert_eq!(s.observe(1.0, 1e-3), None);
        }
        assert_eq!(s.observe(1.5, 1e-3), Some(1e-4));
        assert_eq!(s.observe(0.5, 1e-4), None);
    }
}
