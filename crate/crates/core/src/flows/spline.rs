//! Monotone rational-quadratic splines on `[−B, B]` with identity tails.
//!
//! A spline with `K` bins is parameterized by `K` raw widths, `K` raw heights
//! (both mapped through a softmax and scaled by `2B`) and `K − 1` raw
//! log-derivatives at the interior knots. The boundary knots sit at `(−B, −B)`
//! and `(B, B)` with unit derivative, so the map is C¹ across the tails.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Div, Mul, Sub};

use num_traits::Float;
use crate::error::{invalid, Error, Result};

/// Raw parameters of one spline.
#[derive(Debug, Clone, PartialEq)]
pub struct RqSplineParams {
    pub widths: Vec<f64>,
    pub heights: Vec<f64>,
    pub log_derivatives: Vec<f64>,
    pub bound: f64,
}

impl RqSplineParams {
    /// All-zero raw parameters, which give the identity map.
    pub fn identity(bins: usize, bound: f64) -> Self {
        RqSplineParams {
            widths: vec![0.0; bins],
            heights: vec![0.0; bins],
            log_derivatives: vec![0.0; bins.saturating_sub(1)],
            bound,
        }
    }

    /// Splits a packed `[widths | heights | log_derivatives]` vector.
    pub fn from_packed(packed: &[f64], bins: usize, bound: f64) -> Result<Self> {
        if packed.len() != params_per_dim(bins) {
            return Err(invalid("packed spline parameters have the wrong length"));
        }
        Ok(RqSplineParams {
            widths: packed[..bins].to_vec(),
            heights: packed[bins..2 * bins].to_vec(),
            log_derivatives: packed[2 * bins..].to_vec(),
            bound,
        })
    }

    pub fn bins(&self) -> usize {
        self.widths.len()
    }

    pub fn packed(&self) -> Vec<f64> {
        let mut p = self.widths.clone();
        p.extend_from_slice(&self.heights);
        p.extend_from_slice(&self.log_derivatives);
        p
    }

    fn validate(&self) -> Result<()> {
        let k = self.widths.len();
        if k == 0 || self.heights.len() != k || self.log_derivatives.len() + 1 != k {
            return Err(invalid("spline needs K widths, K heights and K-1 derivatives"));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(invalid("spline bound must be positive and finite"));
        }
        if !self.packed().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "spline parameters" });
        }
        Ok(())
    }
}

/// Raw parameter count per transformed dimension: `3K − 1`.
pub fn params_per_dim(bins: usize) -> usize {
    3 * bins - 1
}

/// Applies the spline to `u`; returns `(v, ln |dv/du|)`.
pub fn spline_forward(u: f64, params: &RqSplineParams) -> Result<(f64, f64)> {
    params.validate()?;
    if !u.is_finite() {
        return Err(Error::NonFinite { op: "spline_forward input" });
    }
    let mut kn = Knots::new(params.bins());
    kn.fill(&params.packed(), params.bound);
    Ok(kn.forward(u))
}

/// Inverts the spline at `v`; returns `(u, ln |du/dv|)`.
pub fn spline_inverse(v: f64, params: &RqSplineParams) -> Result<(f64, f64)> {
    params.validate()?;
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "spline_inverse input" });
    }
    let mut kn = Knots::new(params.bins());
    kn.fill(&params.packed(), params.bound);
    Ok(kn.inverse(v))
}

/// Knot positions, derivatives and the softmax weights they came from.
/// Reused across rows to avoid per-element allocation.
pub(crate) struct Knots {
    bins: usize,
    bound: f64,
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
    sw: Vec<f64>,
    sh: Vec<f64>,
}

fn softmax_into(raw: &[f64], out: &mut [f64]) {
    let m = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &r) in out.iter_mut().zip(raw) {
        *o = (r - m).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

impl Knots {
    pub(crate) fn new(bins: usize) -> Self {
        Knots {
            bins,
            bound: 1.0,
            xs: vec![0.0; bins + 1],
            ys: vec![0.0; bins + 1],
            ds: vec![1.0; bins + 1],
            sw: vec![0.0; bins],
            sh: vec![0.0; bins],
        }
    }

    pub(crate) fn fill(&mut self, packed: &[f64], bound: f64) {
        let k = self.bins;
        self.bound = bound;
        softmax_into(&packed[..k], &mut self.sw);
        softmax_into(&packed[k..2 * k], &mut self.sh);
        let (mut cw, mut ch) = (0.0, 0.0);
        self.xs[0] = -bound;
        self.ys[0] = -bound;
        for j in 1..k {
            cw += self.sw[j - 1];
            ch += self.sh[j - 1];
            self.xs[j] = -bound + 2.0 * bound * cw;
            self.ys[j] = -bound + 2.0 * bound * ch;
            self.ds[j] = packed[2 * k + j - 1].exp();
        }
        self.xs[k] = bound;
        self.ys[k] = bound;
        self.ds[0] = 1.0;
        self.ds[k] = 1.0;
    }

    fn bin_of(knots: &[f64], z: f64) -> usize {
        let k = knots.len() - 1;
        let mut b = 0;
        while b + 1 < k && z >= knots[b + 1] {
            b += 1;
        }
        b
    }

    fn inside(&self, z: f64) -> bool {
        z > -self.bound && z < self.bound
    }

    pub(crate) fn forward(&self, u: f64) -> (f64, f64) {
        if !self.inside(u) {
            return (u, 0.0);
        }
        let b = Self::bin_of(&self.xs, u);
        rq_bin(
            u,
            self.xs[b],
            self.xs[b + 1],
            self.ys[b],
            self.ys[b + 1],
            self.ds[b],
            self.ds[b + 1],
        )
    }

    pub(crate) fn inverse(&self, v: f64) -> (f64, f64) {
        if !self.inside(v) {
            return (v, 0.0);
        }
        let b = Self::bin_of(&self.ys, v);
        let (xk, xk1, yk, yk1) = (self.xs[b], self.xs[b + 1], self.ys[b], self.ys[b + 1]);
        let (dk, dk1) = (self.ds[b], self.ds[b + 1]);
        let (w, h) = (xk1 - xk, yk1 - yk);
        let s = h / w;
        let dy = v - yk;
        let sum = dk1 + dk - 2.0 * s;
        let a = h * (s - dk) + dy * sum;
        let bq = h * dk - dy * sum;
        let c = -s * dy;
        let disc = (bq * bq - 4.0 * a * c).max(0.0);
        let xi = (2.0 * c / (-bq - disc.sqrt())).clamp(0.0, 1.0);
        let u = xk + xi * w;
        let (_, logdet) = rq_bin(u, xk, xk1, yk, yk1, dk, dk1);
        (u, -logdet)
    }
}

/// Scalars the bin formula can be evaluated over: `f64` for values and a
/// small forward-mode dual for local derivatives.
pub(crate) trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn ln(self) -> Self;
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn ln(self) -> Self {
        Float::ln(self)
    }
}

/// Value plus gradient with respect to `N` seeded inputs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub(crate) fn seed(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Dual { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        d.iter_mut().zip(o.d).for_each(|(a, b)| *a += b);
        Dual { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        d.iter_mut().zip(o.d).for_each(|(a, b)| *a -= b);
        Dual { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - q * o.d[i]) / o.v;
        }
        Dual { v: q, d }
    }
}

impl<const N: usize> Real for Dual<N> {
    fn cst(v: f64) -> Self {
        Dual { v, d: [0.0; N] }
    }
    fn ln(self) -> Self {
        let mut d = self.d;
        d.iter_mut().for_each(|x| *x /= self.v);
        Dual { v: Float::ln(self.v), d }
    }
}

/// The rational-quadratic on one bin `[xk, xk1] → [yk, yk1]` with end
/// derivatives `dk`, `dk1`. Returns `(value, ln derivative)`.
pub(crate) fn rq_bin<S: Real>(u: S, xk: S, xk1: S, yk: S, yk1: S, dk: S, dk1: S) -> (S, S) {
    let two = S::cst(2.0);
    let w = xk1 - xk;
    let h = yk1 - yk;
    let s = h / w;
    let xi = (u - xk) / w;
    let omx = S::cst(1.0) - xi;
    let t = xi * omx;
    let den = s + (dk1 + dk - two * s) * t;
    let v = yk + h * (s * xi * xi + dk * t) / den;
    let num = dk1 * xi * xi + two * s * t + dk * omx * omx;
    let logdet = two * s.ln() + num.ln() - two * den.ln();
    (v, logdet)
}

/// Row-batched forward used by the tape: `u` is `n × m`, `params` is
/// `n × m(3K−1)`; output is `n × (m+1)` with the summed log-det last.
pub(crate) fn forward_rows(
    u: &[f64],
    params: &[f64],
    n: usize,
    m: usize,
    bins: usize,
    bound: f64,
) -> Result<Vec<f64>> {
    let per = params_per_dim(bins);
    let mut kn = Knots::new(bins);
    let mut out = Vec::with_capacity(n * (m + 1));
    for r in 0..n {
        let mut total = 0.0;
        for c in 0..m {
            let p = &params[(r * m + c) * per..(r * m + c + 1) * per];
            kn.fill(p, bound);
            let (v, ld) = kn.forward(u[r * m + c]);
            out.push(v);
            total += ld;
        }
        out.push(total);
    }
    Ok(out)
}

/// Vector-Jacobian product of [`forward_rows`]; `g` is `n × (m+1)`.
pub(crate) fn backward_rows(
    u: &[f64],
    params: &[f64],
    g: &[f64],
    n: usize,
    m: usize,
    bins: usize,
    bound: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let per = params_per_dim(bins);
    let k = bins;
    let mut kn = Knots::new(bins);
    let mut gu = vec![0.0; n * m];
    let mut gp = vec![0.0; params.len()];
    let mut gsw = vec![0.0; k];
    let mut gsh = vec![0.0; k];
    for r in 0..n {
        let g_ld = g[r * (m + 1) + m];
        for c in 0..m {
            let idx = r * m + c;
            let g_v = g[r * (m + 1) + c];
            let x = u[idx];
            let p = &params[idx * per..(idx + 1) * per];
            kn.fill(p, bound);
            if !kn.inside(x) {
                gu[idx] = g_v;
                continue;
            }
            let b = Knots::bin_of(&kn.xs, x);
            let locals = [
                x,
                kn.xs[b],
                kn.xs[b + 1],
                kn.ys[b],
                kn.ys[b + 1],
                kn.ds[b],
                kn.ds[b + 1],
            ];
            let d: [Dual<7>; 7] = core::array::from_fn(|i| Dual::seed(locals[i], i));
            let (v, ld) = rq_bin(d[0], d[1], d[2], d[3], d[4], d[5], d[6]);
            let gl: [f64; 7] = core::array::from_fn(|i| g_v * v.d[i] + g_ld * ld.d[i]);
            if !gl.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: "rq_spline backward" });
            }
            gu[idx] = gl[0];

            gsw.fill(0.0);
            gsh.fill(0.0);
            // x_j = −B + 2B Σ_{i<j} softmax_i for interior knots 1..K−1
            for (knot, gx, gy) in [(b, gl[1], gl[3]), (b + 1, gl[2], gl[4])] {
                if knot >= 1 && knot < k {
                    for i in 0..knot {
                        gsw[i] += 2.0 * bound * gx;
                        gsh[i] += 2.0 * bound * gy;
                    }
                }
            }
            let gp_row = &mut gp[idx * per..(idx + 1) * per];
            let dot_w: f64 = gsw.iter().zip(&kn.sw).map(|(a, b)| a * b).sum();
            let dot_h: f64 = gsh.iter().zip(&kn.sh).map(|(a, b)| a * b).sum();
            for i in 0..k {
                gp_row[i] = kn.sw[i] * (gsw[i] - dot_w);
                gp_row[k + i] = kn.sh[i] * (gsh[i] - dot_h);
            }
            for (knot, gd) in [(b, gl[5]), (b + 1, gl[6])] {
                if knot >= 1 && knot < k {
                    gp_row[2 * k + knot - 1] += gd * kn.ds[knot];
                }
            }
        }
    }
    Ok((gu, gp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut ChaCha8Rng, bins: usize, bound: f64) -> RqSplineParams {
        let packed: Vec<f64> = (0..params_per_dim(bins)).map(|_| rng.random_range(-2.0..2.0)).collect();
        RqSplineParams::from_packed(&packed, bins, bound).unwrap()
    }

    #[test]
    fn zero_params_are_identity() {
        let p = RqSplineParams::identity(8, 5.0);
        for i in 0..=1000 {
            let u = -5.0 + 10.0 * i as f64 / 1000.0;
            let (v, ld) = spline_forward(u, &p).unwrap();
            assert!((v - u).abs() < 1e-12, "u={u} v={v}");
            assert!(ld.abs() < 1e-12);
            let (w, ild) = spline_inverse(u, &p).unwrap();
            assert!((w - u).abs() < 1e-12);
            assert!(ild.abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_knot_is_pinned_and_tails_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 8, 5.0);
        assert_eq!(spline_forward(5.0, &p).unwrap(), (5.0, 0.0));
        assert_eq!(spline_forward(-5.0, &p).unwrap(), (-5.0, 0.0));
        assert_eq!(spline_forward(7.25, &p).unwrap(), (7.25, 0.0));
        assert_eq!(spline_inverse(-9.0, &p).unwrap(), (-9.0, 0.0));
    }

    #[test]
    fn log_det_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        for _ in 0..500 {
            let p = random_params(&mut rng, 8, 5.0);
            let u = rng.random_range(-4.9..4.9);
            let (_, ld) = spline_forward(u, &p).unwrap();
            let fd = (spline_forward(u + h, &p).unwrap().0 - spline_forward(u - h, &p).unwrap().0) / (2.0 * h);
            let rel = (ld.exp() - fd).abs() / fd.abs();
            assert!(rel < 1e-5, "rel {rel}");
        }
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = random_params(&mut rng, 8, 5.0);
            let u = rng.random_range(-5.0..5.0);
            let (v, ld) = spline_forward(u, &p).unwrap();
            let (u2, ild) = spline_inverse(v, &p).unwrap();
            worst = worst.max((u - u2).abs());
            assert!((ld + ild).abs() < 1e-9);
        }
        assert!(worst < 1e-9, "worst {worst}");
    }

    #[test]
    fn strictly_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let p = random_params(&mut rng, 8, 5.0);
            let mut prev = f64::NEG_INFINITY;
            for i in 0..2000 {
                let u = -5.0 + 10.0 * i as f64 / 2000.0;
                let v = spline_forward(u, &p).unwrap().0;
                assert!(v > prev);
                prev = v;
                assert!(spline_forward(u + 1e-6, &p).unwrap().0 > v);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let p = RqSplineParams::identity(8, 5.0);
        assert!(spline_forward(f64::NAN, &p).is_err());
        let mut bad = p.clone();
        bad.widths[0] = f64::INFINITY;
        assert!(spline_inverse(0.0, &bad).is_err());
        bad.widths.pop();
        assert!(spline_forward(0.0, &bad).is_err());
    }

    #[test]
    fn row_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, m, bins, bound) = (3, 2, 4, 3.0);
        let per = params_per_dim(bins);
        let u: Vec<f64> = (0..n * m).map(|_| rng.random_range(-3.5..3.5)).collect();
        let params: Vec<f64> = (0..n * m * per).map(|_| rng.random_range(-1.5..1.5)).collect();
        let g: Vec<f64> = (0..n * (m + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |u: &[f64], p: &[f64]| -> f64 {
            let out = forward_rows(u, p, n, m, bins, bound).unwrap();
            out.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let (gu, gp) = backward_rows(&u, &params, &g, n, m, bins, bound).unwrap();
        let h = 1e-6;
        for i in 0..u.len() {
            let (mut up, mut um) = (u.clone(), u.clone());
            up[i] += h;
            um[i] -= h;
            let fd = (objective(&up, &params) - objective(&um, &params)) / (2.0 * h);
            assert!((fd - gu[i]).abs() < 1e-6 * (1.0 + fd.abs()), "u[{i}] {fd} vs {}", gu[i]);
        }
        for i in 0..params.len() {
            let (mut pp, mut pm) = (params.clone(), params.clone());
            pp[i] += h;
            pm[i] -= h;
            let fd = (objective(&u, &pp) - objective(&u, &pm)) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-6 * (1.0 + fd.abs()), "p[{i}] {fd} vs {}", gp[i]);
        }
    }
}
