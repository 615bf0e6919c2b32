//! Training losses and the balance criterion, on the tape and on plain values.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::special::{log_sigmoid, logsumexp, sigmoid};
use crate::tensor::{Tape, Tensor, Var};

fn column_len(tape: &Tape, v: Var, op: &'static str) -> Result<usize> {
    let t = tape.value(v);
    if !t.is_matrix() || t.cols() != 1 || t.rows() == 0 {
        return Err(Error::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![t.len(), 1],
        });
    }
    Ok(t.rows())
}

/// Binary cross-entropy of a ratio classifier:
/// `−½ [mean ln σ(f(joint)) + mean ln σ(−f(marginal))]`.
pub fn nre_loss(tape: &mut Tape, joint_logits: Var, marginal_logits: Var) -> Result<Var> {
    let n = column_len(tape, joint_logits, "nre_loss")?;
    if column_len(tape, marginal_logits, "nre_loss")? != n {
        return Err(Error::ShapeMismatch {
            op: "nre_loss",
            left: tape.value(joint_logits).shape().to_vec(),
            right: tape.value(marginal_logits).shape().to_vec(),
        });
    }
    let lj = tape.log_sigmoid(joint_logits)?;
    let neg = tape.neg(marginal_logits)?;
    let lm = tape.log_sigmoid(neg)?;
    let mj = tape.mean(lj)?;
    let mm = tape.mean(lm)?;
    let s = tape.add(mj, mm)?;
    tape.scale(s, -0.5)
}

/// Contrastive loss with `K` alternatives per observation.
///
/// `contrastive` is `n × K`: column `k` holds `h(θ_k, x)` for the `k`-th
/// prior-drawn parameter. `joint` is `n × 1`, `h(θ, x)` for the jointly drawn
/// parameter. The class-0 set is all `K` contrastive parameters; the class-`K`
/// set replaces the last one with the joint parameter.
pub fn nre_c_loss(tape: &mut Tape, contrastive: Var, joint: Var, gamma: f64) -> Result<Var> {
    let n = column_len(tape, joint, "nre_c_loss")?;
    let t = tape.value(contrastive);
    if !t.is_matrix() || t.rows() != n || t.cols() == 0 {
        return Err(Error::ShapeMismatch {
            op: "nre_c_loss",
            left: t.shape().to_vec(),
            right: vec![n, 1],
        });
    }
    if !(gamma > 0.0) {
        return Err(invalid("gamma must be positive"));
    }
    let k = t.cols();
    let ln_k = (k as f64).ln();
    let lnk_col = tape.constant(Tensor::column(vec![ln_k; n]));

    let all0 = tape.concat_cols(&[lnk_col, contrastive])?;
    let lse0 = tape.row_logsumexp(all0)?;
    // ln ϖ(y=0) = ln K − LSE(ln K, h₁..h_K)
    let neg0 = tape.neg(lse0)?;
    let log_w0 = tape.offset(neg0, ln_k)?;

    let mut parts = vec![lnk_col];
    if k > 1 {
        parts.push(tape.slice_cols(contrastive, 0, k - 1)?);
    }
    parts.push(joint);
    let allk = tape.concat_cols(&parts)?;
    let lsek = tape.row_logsumexp(allk)?;
    // ln ϖ(y=K) = h(θ_K) − LSE(ln K, h₁..h_{K−1}, h(θ_K))
    let log_wk = tape.sub(joint, lsek)?;

    let m0 = tape.mean(log_w0)?;
    let mk = tape.mean(log_wk)?;
    let a = tape.scale(m0, -1.0 / (1.0 + gamma))?;
    let b = tape.scale(mk, -gamma / (1.0 + gamma))?;
    tape.add(a, b)
}

/// Negative log-likelihood `−mean ln q(θ | x)` over joint pairs.
pub fn npe_loss(tape: &mut Tape, log_q: Var) -> Result<Var> {
    column_len(tape, log_q, "npe_loss")?;
    let m = tape.mean(log_q)?;
    tape.neg(m)
}

/// Classifier logits of a density surrogate, `ln q̂(θ|x) − ln p(θ)`.
pub fn density_logits(tape: &mut Tape, log_q: Var, log_prior: &[f64]) -> Result<Var> {
    let n = column_len(tape, log_q, "density_logits")?;
    if log_prior.len() != n {
        return Err(Error::ShapeMismatch {
            op: "density_logits",
            left: vec![n, 1],
            right: vec![log_prior.len(), 1],
        });
    }
    if log_prior.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "density_logits prior" });
    }
    let lp = tape.constant(Tensor::column(log_prior.to_vec()));
    tape.sub(log_q, lp)
}

/// `(mean σ(joint) + mean σ(marginal) − 1)²`.
pub fn balance_tape(tape: &mut Tape, joint_logits: Var, marginal_logits: Var) -> Result<Var> {
    column_len(tape, joint_logits, "balance")?;
    column_len(tape, marginal_logits, "balance")?;
    let sj = tape.sigmoid(joint_logits)?;
    let sm = tape.sigmoid(marginal_logits)?;
    let mj = tape.mean(sj)?;
    let mm = tape.mean(sm)?;
    let s = tape.add(mj, mm)?;
    let d = tape.offset(s, -1.0)?;
    tape.square(d)
}

/// `base + λ·B` on the tape. At `λ = 0` the base node is returned untouched.
pub fn regularized_tape(tape: &mut Tape, base: Var, balance: Var, lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(invalid("lambda must be non-negative"));
    }
    if lambda == 0.0 {
        return Ok(base);
    }
    let pen = tape.scale(balance, lambda)?;
    tape.add(base, pen)
}

/// Value form of [`nre_loss`].
pub fn nre_loss_value(joint_logits: &[f64], marginal_logits: &[f64]) -> Result<f64> {
    if joint_logits.is_empty() || marginal_logits.len() != joint_logits.len() {
        return Err(invalid("nre_loss needs two non-empty batches of equal size"));
    }
    let n = joint_logits.len() as f64;
    let j: f64 = joint_logits.iter().map(|&f| log_sigmoid(f)).sum::<f64>() / n;
    let m: f64 = marginal_logits.iter().map(|&f| log_sigmoid(-f)).sum::<f64>() / n;
    Ok(-0.5 * (j + m))
}

/// Value form of [`nre_c_loss`]; `contrastive[i]` holds the `K` alternatives for row `i`.
pub fn nre_c_loss_value(contrastive: &[Vec<f64>], joint: &[f64], gamma: f64) -> Result<f64> {
    if joint.is_empty() || contrastive.len() != joint.len() {
        return Err(invalid("nre_c_loss needs one contrastive row per joint pair"));
    }
    let k = contrastive[0].len();
    if k == 0 || contrastive.iter().any(|r| r.len() != k) {
        return Err(invalid("every contrastive row needs the same K ≥ 1"));
    }
    let ln_k = (k as f64).ln();
    let (mut s0, mut sk) = (0.0, 0.0);
    let mut buf = Vec::with_capacity(k + 1);
    for (row, &h) in contrastive.iter().zip(joint) {
        buf.clear();
        buf.push(ln_k);
        buf.extend_from_slice(row);
        s0 += ln_k - logsumexp(&buf);
        buf.truncate(k);
        buf.push(h);
        sk += h - logsumexp(&buf);
    }
    let n = joint.len() as f64;
    Ok(-(s0 / n) / (1.0 + gamma) - gamma * (sk / n) / (1.0 + gamma))
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Empty("classifier probabilities"));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("classifier probabilities must lie in [0, 1]"));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `B = (mean ϖ(joint) + mean ϖ(marginal) − 1)²` from classifier outputs.
pub fn balance_binary(joint_probs: &[f64], marginal_probs: &[f64]) -> Result<f64> {
    check_probs(joint_probs)?;
    check_probs(marginal_probs)?;
    let d = mean(joint_probs) + mean(marginal_probs) - 1.0;
    Ok(d * d)
}

/// `ϖ(y=1 | θ, x) = σ(ln q̂ − ln p(θ))`.
pub fn classifier_from_density(log_q: f64, log_prior: f64) -> Result<f64> {
    if !log_prior.is_finite() {
        return Err(Error::OutsideSupport(Vec::new()));
    }
    if log_q.is_nan() {
        return Err(Error::NonFinite { op: "classifier_from_density" });
    }
    Ok(sigmoid(log_q - log_prior))
}

/// Multiclass balance over `K + 1` classes.
///
/// `probs_by_class[j][s]` is the probability vector (length `K + 1`) of the
/// `s`-th sample drawn from class `j`. Returns
/// `1/(K+1) Σ_i (Σ_j mean_s ϖ_i − 1)²`.
pub fn balance_multiclass(probs_by_class: &[Vec<Vec<f64>>]) -> Result<f64> {
    let classes = probs_by_class.len();
    if classes < 2 {
        return Err(invalid("multiclass balance needs at least two classes"));
    }
    let mut totals = vec![0.0; classes];
    for samples in probs_by_class {
        if samples.is_empty() {
            return Err(Error::Empty("class samples"));
        }
        let mut acc = vec![0.0; classes];
        for p in samples {
            if p.len() != classes {
                return Err(invalid("probability vector length must equal the class count"));
            }
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
                return Err(invalid("probability vectors must lie on the simplex"));
            }
            acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
        }
        let n = samples.len() as f64;
        totals.iter_mut().zip(&acc).for_each(|(t, a)| *t += a / n);
    }
    Ok(totals.iter().map(|t| (t - 1.0) * (t - 1.0)).sum::<f64>() / classes as f64)
}

/// `base + λ·B`.
pub fn regularized_loss(base: f64, balance: f64, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(invalid("lambda must be non-negative"));
    }
    Ok(base + lambda * balance)
}
