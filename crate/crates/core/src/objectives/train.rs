//! The training loop shared by every algorithm.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use super::losses::{balance_tape, density_logits, nre_c_loss, nre_loss, npe_loss, regularized_tape};
use super::surrogate::{concat_inputs, FlowSurrogate, RatioSurrogate, TrainedSurrogate};
use crate::error::{invalid, Error, Result};
use crate::flows::{ConditionalFlow, FlowConfig, InitScheme, PriorMapTransform};
use crate::rng::{stream_rng, Stream};
use crate::simulators::{pairs_to_tensors, random_permutation, Dataset, PriorSpec};
use crate::tensor::{Activation, AdamConfig, AdamState, Mlp, PlateauScheduler, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Nre,
    Bnre,
    NreC,
    BnreC,
    Npe,
    Bnpe,
    BnpeInit,
    Rnpe,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Nre,
        Algorithm::Bnre,
        Algorithm::NreC,
        Algorithm::BnreC,
        Algorithm::Npe,
        Algorithm::Bnpe,
        Algorithm::BnpeInit,
        Algorithm::Rnpe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Nre => "NRE",
            Algorithm::Bnre => "BNRE",
            Algorithm::NreC => "NRE-C",
            Algorithm::BnreC => "BNRE-C",
            Algorithm::Npe => "NPE",
            Algorithm::Bnpe => "BNPE",
            Algorithm::BnpeInit => "BNPE-Init",
            Algorithm::Rnpe => "RNPE",
        }
    }

    /// Carries the `λ·B` penalty.
    pub fn is_balanced(self) -> bool {
        matches!(self, Algorithm::Bnre | Algorithm::BnreC | Algorithm::Bnpe | Algorithm::BnpeInit)
    }

    /// Learns a normalizing flow rather than a classifier.
    pub fn is_flow(self) -> bool {
        matches!(self, Algorithm::Npe | Algorithm::Bnpe | Algorithm::BnpeInit | Algorithm::Rnpe)
    }

    fn is_contrastive(self) -> bool {
        matches!(self, Algorithm::NreC | Algorithm::BnreC)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| {
                a.name()
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric())
                    .collect::<String>()
                    .to_ascii_lowercase()
                    == key
            })
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Weight of the balance penalty.
    pub lambda: f64,
    /// Weight of the joint class in the contrastive loss.
    pub gamma: f64,
    /// Contrastive alternatives per observation.
    pub k: usize,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before the learning rate drops.
    pub patience: usize,
    pub lr_factor: f64,
    /// Stop after this many epochs without validation improvement.
    pub stop_after: Option<usize>,
    /// Stop once the learning rate falls below this.
    pub min_lr: Option<f64>,
    /// Hidden layers of the classifier head.
    pub classifier_depth: usize,
    pub classifier_hidden: usize,
    pub flow: FlowConfig,
}

impl TrainConfig {
    /// Defaults: λ = 100 for balanced algorithms, γ = 1, K = 5, lr = 1e-3,
    /// batch 256, 500 epochs, plateau patience 10 with factor 10, 6×256
    /// classifier, 3 coupling transforms of width 256.
    pub fn new(algorithm: Algorithm) -> Self {
        TrainConfig {
            algorithm,
            lambda: if algorithm.is_balanced() { 100.0 } else { 0.0 },
            gamma: 1.0,
            k: 5,
            lr: 1e-3,
            batch: 256,
            max_epochs: 500,
            patience: 10,
            lr_factor: 10.0,
            stop_after: None,
            min_lr: None,
            classifier_depth: 6,
            classifier_hidden: 256,
            flow: FlowConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || (self.algorithm.is_balanced() && self.lambda == 0.0) {
            return Err(invalid("lambda must be ≥ 0, and > 0 for balanced algorithms"));
        }
        if self.k == 0 || !(self.gamma > 0.0) {
            return Err(invalid("K must be ≥ 1 and gamma > 0"));
        }
        if !(self.lr > 0.0) || !(self.lr_factor > 1.0) {
            return Err(invalid("lr must be positive and lr_factor above 1"));
        }
        if self.batch < self.min_batch() || self.max_epochs == 0 || self.patience == 0 {
            return Err(invalid("batch, epochs and patience too small"));
        }
        if self.classifier_hidden == 0 || self.flow.hidden == 0 {
            return Err(invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    /// Smallest usable batch: contrastive sets need `K + 1` distinct rows.
    fn min_batch(&self) -> usize {
        if self.algorithm.is_contrastive() {
            (self.k + 1).max(2)
        } else {
            2
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean balance criterion over the epoch's training batches.
    pub balance: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
enum Model {
    Ratio(Mlp),
    Flow(ConditionalFlow),
}

impl Model {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            Model::Ratio(m) => m.params(),
            Model::Flow(f) => f.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Model::Ratio(m) => m.params_mut(),
            Model::Flow(f) => f.params_mut(),
        }
    }

    fn register(&self, tape: &mut Tape) -> Vec<Var> {
        match self {
            Model::Ratio(m) => m.register(tape),
            Model::Flow(f) => f.register(tape),
        }
    }
}

/// Prior map for flows that start at the prior; only box priors have one.
fn prior_map_for(prior: &PriorSpec) -> Result<Option<PriorMapTransform>> {
    match prior.bounds() {
        Some((lo, hi)) => Ok(Some(PriorMapTransform::new(lo.to_vec(), hi.to_vec())?)),
        None => Ok(None),
    }
}

fn build_model<R: Rng>(cfg: &TrainConfig, prior: &PriorSpec, x_dim: usize, rng: &mut R) -> Result<Model> {
    let d = prior.dim();
    if cfg.algorithm.is_flow() {
        let map = if cfg.algorithm == Algorithm::BnpeInit {
            prior_map_for(prior)?
        } else {
            None
        };
        let mut flow = ConditionalFlow::new(d, x_dim, &cfg.flow, map, rng)?;
        if cfg.algorithm == Algorithm::BnpeInit {
            flow.init_identity(InitScheme::ScaledByFive);
        }
        Ok(Model::Flow(flow))
    } else {
        let mut sizes = vec![d + x_dim];
        sizes.extend(core::iter::repeat(cfg.classifier_hidden).take(cfg.classifier_depth));
        sizes.push(1);
        Ok(Model::Ratio(Mlp::new(&sizes, Activation::Relu, rng)?))
    }
}

fn gather(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(idx.len() * t.cols());
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::matrix(idx.len(), t.cols(), data)
}

/// Index sets pairing each row with prior-drawn parameters: set `k` maps row
/// `i` to `π((i + k) mod n)` for one uniform permutation `π`, so the `K` sets
/// give every row distinct alternatives. Set 0 alone is the marginal batch.
fn contrast_sets<R: Rng>(n: usize, sets: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let perm = random_permutation(n, rng);
    (0..sets)
        .map(|k| (0..n).map(|i| perm[(i + k) % n]).collect())
        .collect()
}

/// A batch ready for evaluation.
struct Batch {
    thetas: Tensor,
    xs: Tensor,
    contrast: Vec<Vec<usize>>,
}

/// Builds the loss for one batch. Returns `(objective, balance)`.
fn objective(cfg: &TrainConfig, prior: &PriorSpec, model: &Model, tape: &mut Tape, vars: &[Var], b: &Batch) -> Result<(Var, Var)> {
    let n = b.thetas.rows();
    let marg_thetas = gather(&b.thetas, &b.contrast[0])?;
    match model {
        Model::Ratio(head) => {
            let mut rows = concat_inputs(&b.thetas, &b.xs)?.into_data();
            rows.extend(concat_inputs(&marg_thetas, &b.xs)?.into_data());
            for set in &b.contrast[1..] {
                rows.extend(concat_inputs(&gather(&b.thetas, set)?, &b.xs)?.into_data());
            }
            let width = b.thetas.cols() + b.xs.cols();
            let total = rows.len() / width;
            let input = tape.constant(Tensor::matrix(total, width, rows)?);
            let out = head.forward(tape, vars, input)?;
            let joint = tape.slice_rows(out, 0, n)?;
            let marg = tape.slice_rows(out, n, 2 * n)?;
            let bal = balance_tape(tape, joint, marg)?;
            let base = if cfg.algorithm.is_contrastive() {
                let cols: Vec<Var> = (0..b.contrast.len())
                    .map(|k| tape.slice_rows(out, (k + 1) * n, (k + 2) * n))
                    .collect::<Result<_>>()?;
                let c = tape.concat_cols(&cols)?;
                nre_c_loss(tape, c, joint, cfg.gamma)?
            } else {
                nre_loss(tape, joint, marg)?
            };
            Ok((regularized_tape(tape, base, bal, cfg.lambda)?, bal))
        }
        Model::Flow(flow) => {
            let mut th = b.thetas.clone().into_data();
            th.extend(marg_thetas.into_data());
            let mut xs = b.xs.clone().into_data();
            xs.extend_from_slice(b.xs.data());
            let th = Tensor::matrix(2 * n, b.thetas.cols(), th)?;
            let xs = Tensor::matrix(2 * n, b.xs.cols(), xs)?;
            let log_prior: Vec<f64> = (0..2 * n).map(|r| prior.log_density(th.row(r))).collect();
            let lq = flow.log_prob_tape(tape, vars, &th, &xs)?;
            let logits = density_logits(tape, lq, &log_prior)?;
            let joint = tape.slice_rows(logits, 0, n)?;
            let marg = tape.slice_rows(logits, n, 2 * n)?;
            let bal = balance_tape(tape, joint, marg)?;
            let base = if cfg.algorithm == Algorithm::Rnpe {
                nre_loss(tape, joint, marg)?
            } else {
                let lq_joint = tape.slice_rows(lq, 0, n)?;
                npe_loss(tape, lq_joint)?
            };
            let total = if cfg.algorithm.is_balanced() {
                regularized_tape(tape, base, bal, cfg.lambda)?
            } else {
                base
            };
            Ok((total, bal))
        }
    }
}

fn contrast_count(cfg: &TrainConfig) -> usize {
    if cfg.algorithm.is_contrastive() {
        cfg.k
    } else {
        1
    }
}

/// Splits `n` rows into chunks of `size`, folding a too-small tail into the
/// previous chunk.
fn chunk_bounds(n: usize, size: usize, min: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        if end - start < min && !out.is_empty() {
            let last: &mut (usize, usize) = out.last_mut().unwrap();
            last.1 = end;
        } else {
            out.push((start, end));
        }
        start = end;
    }
    out
}

fn diverged(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { epoch, batch },
        other => other,
    }
}

/// Trains `cfg.algorithm` on the dataset's train split, selecting the
/// parameters with the lowest validation objective.
///
/// Randomness comes from the `Init` and `Shuffle` streams of `seed`, so the
/// same inputs always give the same surrogate and log.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, seed: u64) -> Result<(TrainedSurrogate, TrainLog)> {
    cfg.validate()?;
    let prior = dataset.task.prior();
    let x_dim = dataset.task.x_dim();
    if dataset.train.len() < cfg.min_batch() || dataset.val.len() < cfg.min_batch() {
        return Err(invalid("train and validation splits are smaller than one batch"));
    }
    let mut init_rng = stream_rng(seed, Stream::Init);
    let mut shuffle_rng = stream_rng(seed, Stream::Shuffle);
    let mut model = build_model(cfg, &prior, x_dim, &mut init_rng)?;
    let (train_t, train_x) = pairs_to_tensors(&dataset.train)?;
    let (val_t, val_x) = pairs_to_tensors(&dataset.val)?;
    let sets = contrast_count(cfg);

    let val_batches: Vec<Batch> = chunk_bounds(val_t.rows(), cfg.batch, cfg.min_batch())
        .into_iter()
        .map(|(s, e)| {
            let idx: Vec<usize> = (s..e).collect();
            Ok(Batch {
                thetas: gather(&val_t, &idx)?,
                xs: gather(&val_x, &idx)?,
                contrast: contrast_sets(e - s, sets, &mut shuffle_rng),
            })
        })
        .collect::<Result<_>>()?;

    let mut adam = AdamState::new(&model.params(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut plateau = PlateauScheduler::new(cfg.patience, cfg.lr_factor);
    let mut best: Option<(f64, Model, usize)> = None;
    let mut stale = 0;
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.max_epochs {
        let order = random_permutation(train_t.rows(), &mut shuffle_rng);
        let (mut loss_sum, mut bal_sum, mut rows) = (0.0, 0.0, 0usize);
        let mut batches = 0usize;
        for (bi, (s, e)) in chunk_bounds(order.len(), cfg.batch, cfg.min_batch()).into_iter().enumerate() {
            let idx = &order[s..e];
            let batch = Batch {
                thetas: gather(&train_t, idx)?,
                xs: gather(&train_x, idx)?,
                contrast: contrast_sets(idx.len(), sets, &mut shuffle_rng),
            };
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let (loss, bal) = objective(cfg, &prior, &model, &mut tape, &vars, &batch).map_err(diverged(epoch, bi))?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi });
            }
            let mut grads = tape.backward(loss).map_err(diverged(epoch, bi))?;
            let g: Vec<Tensor> = vars
                .iter()
                .zip(model.params())
                .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
                .collect();
            if g.iter().any(|t| !t.all_finite()) {
                return Err(Error::Diverged { epoch, batch: bi });
            }
            adam.step(&mut model.params_mut(), &g)?;
            loss_sum += lv * idx.len() as f64;
            rows += idx.len();
            bal_sum += tape.value(bal).item();
            batches += 1;
        }

        let mut val_sum = 0.0;
        for b in &val_batches {
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let (loss, _) = objective(cfg, &prior, &model, &mut tape, &vars, b).map_err(diverged(epoch, usize::MAX))?;
            val_sum += tape.value(loss).item() * b.thetas.rows() as f64;
        }
        let val_loss = val_sum / val_t.rows() as f64;
        log.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / rows as f64,
            val_loss,
            balance: bal_sum / batches as f64,
            lr: adam.lr(),
        });

        if best.as_ref().map_or(true, |(v, _, _)| val_loss < *v) {
            best = Some((val_loss, model.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
        }
        if let Some(lr) = plateau.observe(val_loss, adam.lr()) {
            adam.set_lr(lr);
        }
        if cfg.stop_after.is_some_and(|s| stale >= s) || cfg.min_lr.is_some_and(|m| adam.lr() < m) {
            break;
        }
    }

    let (_, model, best_epoch) = best.expect("at least one epoch ran");
    log.best_epoch = best_epoch;
    let surrogate = match model {
        Model::Ratio(head) => TrainedSurrogate::Ratio(RatioSurrogate { head, prior }),
        Model::Flow(flow) => TrainedSurrogate::Flow(FlowSurrogate { flow, prior }),
    };
    Ok((surrogate, log))
}
