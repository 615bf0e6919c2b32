use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::objectives::{balance_binary, Surrogate};
use crate::simulators::{pairs_to_tensors, SimPair};
use crate::special::sigmoid;

/// `|mean ϖ(marginal) + mean ϖ(joint) − 1|` with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancingError {
    pub value: f64,
    pub std_err: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var)
}

/// Classifier probabilities `σ(ln q̂ − ln p)` of a surrogate on some pairs.
pub fn classifier_probs<S: Surrogate + ?Sized>(surrogate: &S, pairs: &[SimPair]) -> Result<Vec<f64>> {
    let (t, x) = pairs_to_tensors(pairs)?;
    Ok(surrogate.classifier_logits(&t, &x)?.into_iter().map(sigmoid).collect())
}

pub fn balancing_error<S: Surrogate + ?Sized>(
    surrogate: &S,
    joint: &[SimPair],
    marginal: &[SimPair],
) -> Result<BalancingError> {
    let pj = classifier_probs(surrogate, joint)?;
    let pm = classifier_probs(surrogate, marginal)?;
    balancing_error_from_probs(&pj, &pm)
}

pub fn balancing_error_from_probs(joint: &[f64], marginal: &[f64]) -> Result<BalancingError> {
    let b = balance_binary(joint, marginal)?;
    let (_, vj) = mean_var(joint);
    let (_, vm) = mean_var(marginal);
    Ok(BalancingError {
        value: b.sqrt(),
        std_err: (vj / joint.len() as f64 + vm / marginal.len() as f64).sqrt(),
    })
}

/// `(χ²-form, balance-form)` of the class-marginal discrepancy.
///
/// The χ² side is `Σ_y (ϖ(y)/π(y) − 1)² π(y)` with `π(y) = ½` and `ϖ(y=1)`
/// the Monte-Carlo marginal classifier over the pooled pairs; the other side
/// is the balance criterion on the same pairs.
pub fn chi2_identity_check(joint: &[f64], marginal: &[f64]) -> Result<(f64, f64)> {
    let rhs = balance_binary(joint, marginal)?;
    let (mj, _) = mean_var(joint);
    let (mm, _) = mean_var(marginal);
    let w1 = 0.5 * mj + 0.5 * mm;
    let w = [1.0 - w1, w1];
    let lhs = w.iter().map(|&wy| (wy / 0.5 - 1.0).powi(2) * 0.5).sum();
    Ok((lhs, rhs))
}

/// `KL(P‖Q)` and `χ²(P‖Q) = Σ p²/q − 1` for discrete distributions.
pub fn kl_and_chi2(p: &[f64], q: &[f64]) -> Result<(f64, f64)> {
    if p.len() != q.len() || p.is_empty() {
        return Err(invalid("distributions must have the same non-zero length"));
    }
    for d in [p, q] {
        if d.iter().any(|v| !(*v >= 0.0)) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("inputs must be probability vectors"));
        }
    }
    let (mut kl, mut chi) = (0.0, -1.0);
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(invalid("P is not absolutely continuous with respect to Q"));
            }
            kl += pi * (pi / qi).ln();
            chi += pi * pi / qi;
        }
    }
    Ok((kl, chi))
}

/// Whether `KL(P‖Q) ≤ χ²(P‖Q)` holds (up to rounding).
pub fn kl_chi2_inequality_check(p: &[f64], q: &[f64]) -> Result<bool> {
    let (kl, chi) = kl_and_chi2(p, q)?;
    Ok(kl <= chi + 1e-12)
}

/// Kolmogorov–Smirnov test of `U(0, 1)`; returns `(D, p-value)` using the
/// asymptotic Kolmogorov distribution with the usual small-sample correction.
pub fn ks_uniform(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("ks sample"));
    }
    let mut v = values.to_vec();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite { op: "ks_uniform" });
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    Ok((d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)))
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_examples() {
        assert_eq!(chi2_identity_check(&[0.5; 3], &[0.5; 4]).unwrap(), (0.0, 0.0));
        let (l, r) = chi2_identity_check(&[0.9; 3], &[0.9; 3]).unwrap();
        assert!((l - 0.64).abs() < 1e-12 && (r - 0.64).abs() < 1e-12);
    }

    #[test]
    fn divergence_examples() {
        let (kl, chi) = kl_and_chi2(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert!((kl - 0.368064).abs() < 1e-6);
        assert!((chi - 0.64).abs() < 1e-12);
        assert_eq!(kl_and_chi2(&[0.3, 0.7], &[0.3, 0.7]).unwrap().0, 0.0);
        assert!(kl_and_chi2(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn ks_flags_non_uniform() {
        let even: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&even).unwrap().1 > 0.99);
        let squeezed: Vec<f64> = even.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&squeezed).unwrap().1 < 1e-6);
    }

    #[test]
    fn balancing_error_squares_to_balance() {
        let j = [0.2, 0.9, 0.7];
        let m = [0.1, 0.4, 0.3, 0.8];
        let be = balancing_error_from_probs(&j, &m).unwrap();
        assert!((be.value * be.value - balance_binary(&j, &m).unwrap()).abs() < 1e-12);
    }
}
