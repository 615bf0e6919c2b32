use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{SimPair, Task};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Smallest accepted simulation budget.
pub const MIN_BUDGET: usize = 64;
/// Held-out test pairs generated alongside every dataset.
pub const DEFAULT_TEST_SIZE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Simulated pairs for one `(task, budget, seed)`.
///
/// The budget is split 90/10 into train/val (remainder to val). The test set
/// comes from its own stream and depends only on the task and seed, so every
/// budget is evaluated on the same pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub budget: usize,
    pub seed: u64,
    pub train: Vec<SimPair>,
    pub val: Vec<SimPair>,
    pub test: Vec<SimPair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[SimPair] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Number of training pairs for a budget.
    pub fn train_size(budget: usize) -> usize {
        (9 * budget + 5) / 10
    }
}

pub fn generate_dataset(task: Task, budget: usize, seed: u64) -> Result<Dataset> {
    generate_dataset_with(task, budget, seed, DEFAULT_TEST_SIZE)
}

pub fn generate_dataset_with(task: Task, budget: usize, seed: u64, test_size: usize) -> Result<Dataset> {
    if budget < MIN_BUDGET {
        return Err(Error::InvalidArgument(alloc::format!(
            "budget {budget} is below the minimum of {MIN_BUDGET}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Dataset);
    let mut pairs: Vec<SimPair> = (0..budget).map(|_| task.sample_joint(&mut rng)).collect();
    let val = pairs.split_off(Dataset::train_size(budget));
    let mut test_rng = stream_rng(seed, Stream::TestSet);
    let test = (0..test_size).map(|_| task.sample_joint(&mut test_rng)).collect();
    Ok(Dataset {
        task,
        budget,
        seed,
        train: pairs,
        val,
        test,
    })
}

/// Uniformly random permutation of `0..n`.
pub fn random_permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Pairs every `x_i` with `θ_{π(i)}` for a uniform permutation `π`, turning
/// joint draws into draws from `p(θ)p(x)`.
pub fn shuffle_marginal_batch<R: Rng>(batch: &[SimPair], rng: &mut R) -> Result<Vec<SimPair>> {
    if batch.len() < 2 {
        return Err(invalid("shuffling needs at least two pairs"));
    }
    let perm = random_permutation(batch.len(), rng);
    Ok(batch
        .iter()
        .zip(perm)
        .map(|(p, j)| SimPair {
            theta: batch[j].theta.clone(),
            x: p.x.clone(),
        })
        .collect())
}

/// Stacks pairs into `(θ, x)` matrices.
pub fn pairs_to_tensors(pairs: &[SimPair]) -> Result<(Tensor, Tensor)> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairs"));
    }
    let thetas: Vec<&[f64]> = pairs.iter().map(|p| p.theta.as_slice()).collect();
    let xs: Vec<&[f64]> = pairs.iter().map(|p| p.x.as_slice()).collect();
    Ok((Tensor::from_rows(&thetas)?, Tensor::from_rows(&xs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let d = generate_dataset_with(Task::TwoMoons, 1024, 3, 10).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (922, 102, 10));
        assert!(generate_dataset(Task::TwoMoons, 63, 0).is_err());
        for b in [64, 100, 255, 256, 4096] {
            let t = Dataset::train_size(b);
            assert!(t < b && t + (b - t) == b);
        }
    }

    #[test]
    fn test_set_ignores_budget() {
        let a = generate_dataset_with(Task::Slcp, 64, 9, 20).unwrap();
        let b = generate_dataset_with(Task::Slcp, 128, 9, 20).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.train[..], b.train[..a.train.len()]);
    }

    #[test]
    fn shuffle_keeps_theta_multiset() {
        let d = generate_dataset_with(Task::GaussianLinear, 64, 1, 0).unwrap();
        let mut rng = stream_rng(1, Stream::Shuffle);
        let s = shuffle_marginal_batch(&d.train, &mut rng).unwrap();
        let key = |v: &[SimPair]| {
            let mut k: Vec<u64> = v.iter().map(|p| p.theta[0].to_bits()).collect();
            k.sort();
            k
        };
        assert_eq!(key(&d.train), key(&s));
        assert!(s.iter().zip(&d.train).all(|(a, b)| a.x == b.x));
        assert!(shuffle_marginal_batch(&d.train[..1], &mut rng).is_err());
    }
}
