use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::spline::{params_per_dim, Knots};
use super::{PriorMapTransform, LOG_ZERO};
use crate::error::{invalid, Error, Result};
use crate::special::HALF_LN_2PI;
use crate::tensor::{Activation, Mlp, Tape, Tensor, Var};

/// Rows per tape when evaluating large batches without gradients.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    /// Number of coupling transforms.
    pub transforms: usize,
    /// Width of each conditioner hidden layer.
    pub hidden: usize,
    /// Number of hidden layers per conditioner.
    pub depth: usize,
    pub bins: usize,
    pub bound: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            transforms: 3,
            hidden: 256,
            depth: 2,
            bins: 8,
            bound: 5.0,
        }
    }
}

/// How a fresh flow is pushed towards the identity map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Zero the conditioners' output layers: every spline is exactly the identity.
    ExactZero,
    /// Divide all conditioner weights by 5 and zero the biases: near identity,
    /// still trainable.
    ScaledByFive,
}

/// One coupling transform: the `transformed` dimensions go through a spline
/// whose parameters are predicted from the `conditioning` dimensions and `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    pub transformed: Vec<usize>,
    pub conditioning: Vec<usize>,
    pub conditioner: Mlp,
}

/// Conditional density `q(θ | x)` built as
/// `θ → [prior map⁻¹] → coupling₁ → … → coupling_L → z ~ N(0, I)`.
///
/// With a [`PriorMapTransform`] attached the support is exactly the prior box
/// and points outside it get [`LOG_ZERO`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFlow {
    theta_dim: usize,
    x_dim: usize,
    bins: usize,
    bound: f64,
    layers: Vec<CouplingLayer>,
    prior_map: Option<PriorMapTransform>,
}

/// Dimensions transformed by coupling layer `l` (alternating parity).
fn coupling_split(theta_dim: usize, l: usize) -> (Vec<usize>, Vec<usize>) {
    if theta_dim == 1 {
        return (vec![0], vec![]);
    }
    (0..theta_dim).partition(|d| d % 2 == l % 2)
}

impl ConditionalFlow {
    pub fn new<R: Rng>(
        theta_dim: usize,
        x_dim: usize,
        config: &FlowConfig,
        prior_map: Option<PriorMapTransform>,
        rng: &mut R,
    ) -> Result<Self> {
        if theta_dim == 0 || config.transforms == 0 || config.bins < 2 {
            return Err(invalid("flow needs θ dimension, transforms and at least 2 bins"));
        }
        if let Some(pm) = &prior_map {
            if pm.dim() != theta_dim {
                return Err(invalid("prior map dimension differs from θ dimension"));
            }
        }
        let per = params_per_dim(config.bins);
        let mut layers = Vec::with_capacity(config.transforms);
        for l in 0..config.transforms {
            let (transformed, conditioning) = coupling_split(theta_dim, l);
            let mut sizes = vec![conditioning.len() + x_dim];
            sizes.extend(core::iter::repeat(config.hidden).take(config.depth));
            sizes.push(transformed.len() * per);
            let conditioner = Mlp::new(&sizes, Activation::Relu, rng)?;
            layers.push(CouplingLayer {
                transformed,
                conditioning,
                conditioner,
            });
        }
        Ok(ConditionalFlow {
            theta_dim,
            x_dim,
            bins: config.bins,
            bound: config.bound,
            layers,
            prior_map,
        })
    }

    /// Reassembles a flow from its parts, checking they fit together.
    pub fn from_parts(
        theta_dim: usize,
        x_dim: usize,
        bins: usize,
        bound: f64,
        layers: Vec<CouplingLayer>,
        prior_map: Option<PriorMapTransform>,
    ) -> Result<Self> {
        let per = params_per_dim(bins);
        for l in &layers {
            let dims_ok = l
                .transformed
                .iter()
                .chain(&l.conditioning)
                .all(|&d| d < theta_dim);
            if !dims_ok
                || l.conditioner.input_dim() != l.conditioning.len() + x_dim
                || l.conditioner.output_dim() != l.transformed.len() * per
            {
                return Err(Error::Malformed("coupling layer does not fit the flow".into()));
            }
        }
        if prior_map.as_ref().is_some_and(|p| p.dim() != theta_dim) {
            return Err(Error::Malformed("prior map dimension".into()));
        }
        Ok(ConditionalFlow {
            theta_dim,
            x_dim,
            bins,
            bound,
            layers,
            prior_map,
        })
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn prior_map(&self) -> Option<&PriorMapTransform> {
        self.prior_map.as_ref()
    }

    pub fn init_identity(&mut self, scheme: InitScheme) {
        for l in &mut self.layers {
            match scheme {
                InitScheme::ExactZero => l.conditioner.zero_output_layer(),
                InitScheme::ScaledByFive => {
                    l.conditioner.scale_weights(0.2);
                    l.conditioner.zero_biases();
                }
            }
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.conditioner.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.conditioner.params_mut())
            .collect()
    }

    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p.clone())).collect()
    }

    fn register_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.constant(p.clone())).collect()
    }

    fn check_batch(&self, thetas: &Tensor, xs: &Tensor) -> Result<()> {
        if !thetas.is_matrix()
            || !xs.is_matrix()
            || thetas.cols() != self.theta_dim
            || xs.cols() != self.x_dim
            || thetas.rows() != xs.rows()
        {
            return Err(Error::ShapeMismatch {
                op: "flow batch",
                left: thetas.shape().to_vec(),
                right: xs.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Maps θ rows into the flow's unconstrained space. `None` marks rows
    /// outside the prior box.
    fn to_inner(&self, thetas: &Tensor) -> Vec<Option<(Vec<f64>, f64)>> {
        (0..thetas.rows())
            .map(|r| {
                let row = thetas.row(r);
                match &self.prior_map {
                    Some(pm) => pm.inverse(row),
                    None => Some((row.to_vec(), 0.0)),
                }
            })
            .collect()
    }

    /// Couplings plus base density on already-unconstrained rows; returns
    /// an `n × 1` log density excluding the prior-map term.
    fn inner_log_prob(&self, tape: &mut Tape, vars: &[Var], inner: &Tensor, xs: &Tensor) -> Result<Var> {
        let (z, logdets) = self.couplings(tape, vars, inner, xs)?;
        let sq = tape.square(z)?;
        let rs = tape.row_sum(sq)?;
        let half = tape.scale(rs, -0.5)?;
        let mut total = tape.offset(half, -(self.theta_dim as f64) * HALF_LN_2PI)?;
        for ld in logdets {
            total = tape.add(total, ld)?;
        }
        Ok(total)
    }

    /// Applies the coupling layers; returns `z` (`n × D`) and per-layer
    /// log-det columns.
    fn couplings(&self, tape: &mut Tape, vars: &[Var], inner: &Tensor, xs: &Tensor) -> Result<(Var, Vec<Var>)> {
        let n = inner.rows();
        let mut cols: Vec<Var> = (0..self.theta_dim)
            .map(|d| {
                let c = (0..n).map(|r| inner.row(r)[d]).collect();
                tape.constant(Tensor::column(c))
            })
            .collect();
        let xv = tape.constant(xs.clone());
        let mut logdets = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            let count = 2 * layer.conditioner.layers().len();
            let lv = &vars[offset..offset + count];
            offset += count;
            let mut parts: Vec<Var> = layer.conditioning.iter().map(|&d| cols[d]).collect();
            parts.push(xv);
            let cin = tape.concat_cols(&parts)?;
            let params = layer.conditioner.forward(tape, lv, cin)?;
            let u_parts: Vec<Var> = layer.transformed.iter().map(|&d| cols[d]).collect();
            let u = tape.concat_cols(&u_parts)?;
            let out = tape.rq_spline(u, params, self.bins, self.bound)?;
            let m = layer.transformed.len();
            for (i, &d) in layer.transformed.iter().enumerate() {
                cols[d] = tape.slice_cols(out, i, i + 1)?;
            }
            logdets.push(tape.slice_cols(out, m, m + 1)?);
        }
        let z = tape.concat_cols(&cols)?;
        Ok((z, logdets))
    }

    /// Differentiable `ln q(θ | x)` for a batch, `n × 1`. Every θ must lie in
    /// the support; training batches never hold out-of-box parameters.
    pub fn log_prob_tape(&self, tape: &mut Tape, vars: &[Var], thetas: &Tensor, xs: &Tensor) -> Result<Var> {
        self.check_batch(thetas, xs)?;
        let mut inner = Vec::with_capacity(thetas.len());
        let mut consts = Vec::with_capacity(thetas.rows());
        for (r, mapped) in self.to_inner(thetas).into_iter().enumerate() {
            let (v, ld) = mapped.ok_or_else(|| Error::OutsideSupport(thetas.row(r).to_vec()))?;
            inner.extend(v);
            consts.push(ld);
        }
        let inner = Tensor::matrix(thetas.rows(), self.theta_dim, inner)?;
        let lp = self.inner_log_prob(tape, vars, &inner, xs)?;
        if self.prior_map.is_some() {
            let c = tape.constant(Tensor::column(consts));
            tape.add(lp, c)
        } else {
            Ok(lp)
        }
    }

    /// `ln q(θ | x)` for each row, [`LOG_ZERO`] outside the support.
    pub fn log_prob_batch(&self, thetas: &Tensor, xs: &Tensor) -> Result<Vec<f64>> {
        self.check_batch(thetas, xs)?;
        let mapped = self.to_inner(thetas);
        let mut out = vec![LOG_ZERO; thetas.rows()];
        let live: Vec<usize> = (0..thetas.rows()).filter(|&r| mapped[r].is_some()).collect();
        for chunk in live.chunks(CHUNK) {
            let mut inner = Vec::with_capacity(chunk.len() * self.theta_dim);
            let mut xdata = Vec::with_capacity(chunk.len() * self.x_dim);
            for &r in chunk {
                inner.extend_from_slice(&mapped[r].as_ref().unwrap().0);
                xdata.extend_from_slice(xs.row(r));
            }
            let inner = Tensor::matrix(chunk.len(), self.theta_dim, inner)?;
            let xt = Tensor::matrix(chunk.len(), self.x_dim, xdata)?;
            let mut tape = Tape::new();
            let vars = self.register_constant(&mut tape);
            let lp = self.inner_log_prob(&mut tape, &vars, &inner, &xt)?;
            for (&r, &v) in chunk.iter().zip(tape.value(lp).data()) {
                out[r] = v + mapped[r].as_ref().unwrap().1;
            }
        }
        Ok(out)
    }

    /// `ln q(θ | x)` for many θ sharing one observation.
    pub fn log_prob_many(&self, thetas: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
        let xs = tile(x, thetas.rows())?;
        self.log_prob_batch(thetas, &xs)
    }

    pub fn log_prob(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        let t = Tensor::matrix(1, theta.len(), theta.to_vec())?;
        Ok(self.log_prob_many(&t, x)?[0])
    }

    /// Pushes unconstrained points through the couplings only (no prior map),
    /// returning the base-space image and the summed log-det per row.
    pub fn transform(&self, inner: &Tensor, xs: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check_batch(inner, xs)?;
        let mut tape = Tape::new();
        let vars = self.register_constant(&mut tape);
        let (z, lds) = self.couplings(&mut tape, &vars, inner, xs)?;
        let mut total = vec![0.0; inner.rows()];
        for ld in lds {
            total.iter_mut().zip(tape.value(ld).data()).for_each(|(t, v)| *t += v);
        }
        Ok((tape.value(z).clone(), total))
    }

    /// Draws `n` samples from `q(· | x)`.
    pub fn sample<R: Rng>(&self, x: &[f64], rng: &mut R, n: usize) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.x_dim {
            return Err(Error::ShapeMismatch {
                op: "flow sample",
                left: vec![self.x_dim],
                right: vec![x.len()],
            });
        }
        let mut samples = Vec::with_capacity(n);
        let mut kn = Knots::new(self.bins);
        let per = params_per_dim(self.bins);
        let mut done = 0;
        while done < n {
            let rows = (n - done).min(CHUNK);
            let mut cols: Vec<Vec<f64>> = (0..self.theta_dim)
                .map(|_| (0..rows).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            for layer in self.layers.iter().rev() {
                let width = layer.conditioning.len() + self.x_dim;
                let mut cin = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    cin.extend(layer.conditioning.iter().map(|&d| cols[d][r]));
                    cin.extend_from_slice(x);
                }
                let params = layer.conditioner.eval(&Tensor::matrix(rows, width, cin)?)?;
                let m = layer.transformed.len();
                for r in 0..rows {
                    let prow = params.row(r);
                    for (i, &d) in layer.transformed.iter().enumerate() {
                        kn.fill(&prow[i * per..(i + 1) * per], self.bound);
                        cols[d][r] = kn.inverse(cols[d][r]).0;
                    }
                }
                debug_assert_eq!(params.cols(), m * per);
            }
            for r in 0..rows {
                let inner: Vec<f64> = cols.iter().map(|c| c[r]).collect();
                let theta = match &self.prior_map {
                    Some(pm) => pm.forward(&inner).0,
                    None => inner,
                };
                if !theta.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite { op: "flow sample" });
                }
                samples.push(theta);
            }
            done += rows;
        }
        Ok(samples)
    }
}

/// Repeats one observation into an `n × len` matrix.
pub(crate) fn tile(x: &[f64], n: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * x.len());
    for _ in 0..n {
        data.extend_from_slice(x);
    }
    Tensor::matrix(n, x.len(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> FlowConfig {
        FlowConfig {
            transforms: 3,
            hidden: 16,
            depth: 2,
            bins: 8,
            bound: 5.0,
        }
    }

    fn box_map() -> PriorMapTransform {
        PriorMapTransform::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn masks_alternate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = ConditionalFlow::new(2, 3, &small(), None, &mut rng).unwrap();
        assert_eq!(f.layers()[0].transformed, vec![0]);
        assert_eq!(f.layers()[1].transformed, vec![1]);
        assert_eq!(f.layers()[2].transformed, vec![0]);
        for w in f.layers().windows(2) {
            let mut all: Vec<usize> = w[0].transformed.iter().chain(&w[1].transformed).copied().collect();
            all.sort();
            all.dedup();
            assert_eq!(all, vec![0, 1]);
        }
    }

    #[test]
    fn exact_zero_with_prior_map_is_the_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = ConditionalFlow::new(2, 2, &small(), Some(box_map()), &mut rng).unwrap();
        f.init_identity(InitScheme::ExactZero);
        for &(a, b) in &[(0.0, 0.0), (0.9, -0.99), (-0.3, 0.5)] {
            let lp = f.log_prob(&[a, b], &[3.0, -1.0]).unwrap();
            assert!((lp + 4f64.ln()).abs() < 1e-12, "{lp}");
        }
        assert_eq!(f.log_prob(&[1.5, 0.0], &[0.0, 0.0]).unwrap(), LOG_ZERO);
    }

    #[test]
    fn change_of_variables_is_consistent_with_sampling_direction() {
        // log q(θ) from the density pass equals base log-prob of z minus the
        // forward log-det, evaluated at the pre-image.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = ConditionalFlow::new(2, 1, &small(), None, &mut rng).unwrap();
        let x = [0.4];
        let samples = f.sample(&x, &mut rng, 50).unwrap();
        let thetas = Tensor::from_rows(&samples).unwrap();
        let xs = tile(&x, 50).unwrap();
        let (z, ld) = f.transform(&thetas, &xs).unwrap();
        let lp = f.log_prob_batch(&thetas, &xs).unwrap();
        for r in 0..50 {
            let base: f64 = z.row(r).iter().map(|v| -0.5 * v * v - HALF_LN_2PI).sum();
            assert!((lp[r] - (base + ld[r])).abs() < 1e-9);
        }
    }

    #[test]
    fn tape_and_batch_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = ConditionalFlow::new(2, 2, &small(), Some(box_map()), &mut rng).unwrap();
        let thetas = Tensor::matrix(3, 2, vec![0.1, 0.2, -0.7, 0.9, 0.0, -0.4]).unwrap();
        let xs = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.5, 0.5, -1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let vars = f.register(&mut tape);
        let lp = f.log_prob_tape(&mut tape, &vars, &thetas, &xs).unwrap();
        let batch = f.log_prob_batch(&thetas, &xs).unwrap();
        for (a, b) in tape.value(lp).data().iter().zip(&batch) {
            assert_eq!(a, b);
        }
        let outside = Tensor::matrix(1, 2, vec![2.0, 0.0]).unwrap();
        let x1 = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let err = f.log_prob_tape(&mut tape, &vars, &outside, &x1).unwrap_err();
        assert!(matches!(err, Error::OutsideSupport(_)));
    }
}
