use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{invalid, Result};
use crate::special::{std_normal_cdf, std_normal_log_pdf, std_normal_quantile};

/// `|n|` is clamped to this before `Φ` so the image stays strictly inside the box.
const CLAMP: f64 = 8.0;

/// Fixed bijection from ℝᴰ onto the open box `∏(a_d, b_d)`:
/// `n ↦ a + (b − a)·Φ(n)`, applied per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMapTransform {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PriorMapTransform {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("prior map bounds must be non-empty and equally long"));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(invalid("prior map needs finite bounds with a < b"));
        }
        Ok(PriorMapTransform { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// `Σ ln(b_d − a_d)`.
    pub fn log_volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| (b - a).ln()).sum()
    }

    /// Base-normal → box. Returns the image and `ln |det ∂u/∂n|`.
    pub fn forward(&self, n: &[f64]) -> (Vec<f64>, f64) {
        let mut logdet = 0.0;
        let u = n
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&a, &b))| {
                let c = v.clamp(-CLAMP, CLAMP);
                logdet += std_normal_log_pdf(c) + (b - a).ln();
                a + (b - a) * std_normal_cdf(c)
            })
            .collect();
        (u, logdet)
    }

    /// Box → base-normal, with `ln |det ∂n/∂u|`. `None` outside the open box.
    pub fn inverse(&self, u: &[f64]) -> Option<(Vec<f64>, f64)> {
        let mut logdet = 0.0;
        let mut n = Vec::with_capacity(u.len());
        for (&v, (&a, &b)) in u.iter().zip(self.lower.iter().zip(&self.upper)) {
            if !(v > a && v < b) {
                return None;
            }
            let z = std_normal_quantile((v - a) / (b - a));
            if !z.is_finite() {
                return None;
            }
            logdet -= std_normal_log_pdf(z) + (b - a).ln();
            n.push(z);
        }
        Some((n, logdet))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn round_trip_and_negating_log_dets() {
        let t = PriorMapTransform::new(vec![-1.0, -3.0], vec![1.0, 3.0]).unwrap();
        for &(x, y) in &[(0.0, 0.0), (1.5, -2.0), (-4.0, 3.3)] {
            let (u, ld) = t.forward(&[x, y]);
            let (n, ild) = t.inverse(&u).unwrap();
            assert!((n[0] - x).abs() < 1e-9 && (n[1] - y).abs() < 1e-9);
            assert!((ld + ild).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let t = PriorMapTransform::new(vec![2.0], vec![5.0]).unwrap();
        let h = 1e-6;
        for &n in &[-2.5, -0.3, 0.0, 1.7] {
            let fd = (t.forward(&[n + h]).0[0] - t.forward(&[n - h]).0[0]) / (2.0 * h);
            let (_, ld) = t.forward(&[n]);
            assert!((ld.exp() - fd).abs() / fd < 1e-7);
        }
    }

    #[test]
    fn image_stays_inside_even_for_huge_inputs() {
        let t = PriorMapTransform::new(vec![-1.0], vec![1.0]).unwrap();
        for &n in &[-1e6, -40.0, -8.5, 8.5, 40.0, 1e6] {
            let u = t.forward(&[n]).0[0];
            assert!(u > -1.0 && u < 1.0, "{n} -> {u}");
            assert!(t.inverse(&[u]).is_some());
        }
        assert!(t.inverse(&[1.0]).is_none());
        assert!(t.inverse(&[-1.2]).is_none());
    }

    #[test]
    fn rejects_degenerate_bounds() {
        assert!(PriorMapTransform::new(vec![1.0], vec![1.0]).is_err());
        assert!(PriorMapTransform::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }
}
