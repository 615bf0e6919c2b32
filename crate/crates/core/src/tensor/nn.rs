use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Affine layer `y = x·W + b` with `W: in × out` and `b: 1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Multilayer perceptron; the activation is applied between layers, never
/// after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
}

impl Mlp {
    /// Fan-in scaled uniform init, `U(−1/√fan_in, 1/√fan_in)` for weights and
    /// biases. `sizes` lists every layer width including input and output.
    pub fn new<R: Rng>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(sizes, activation)?;
        for layer in &mut mlp.layers {
            let bound = 1.0 / (layer.in_dim().max(1) as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
            for b in layer.bias.data_mut() {
                *b = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(invalid("an MLP needs at least two positive layer sizes"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Linear {
                weight: Tensor::zeros(vec![w[0], w[1]]),
                bias: Tensor::zeros(vec![1, w[1]]),
            })
            .collect();
        Ok(Mlp { layers, activation })
    }

    /// Rebuilds from explicit layers, checking that consecutive shapes compose.
    pub fn from_layers(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Malformed("MLP without layers".into()));
        }
        for l in &layers {
            if !l.weight.is_matrix() || l.bias.shape() != [1, l.out_dim()] {
                return Err(Error::Malformed("layer weight/bias shapes disagree".into()));
            }
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::ShapeMismatch {
                    op: "mlp",
                    left: w[0].weight.shape().to_vec(),
                    right: w[1].weight.shape().to_vec(),
                });
            }
        }
        Ok(Mlp { layers, activation })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Records every weight and bias as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Records the parameters as constants (inference only).
    pub fn register_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// Forward pass given the leaves returned by [`Mlp::register`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var> {
        if vars.len() != 2 * self.layers.len() {
            return Err(invalid("parameter handle count does not match the MLP"));
        }
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, pair) in vars.chunks(2).enumerate() {
            h = tape.matmul(h, pair[0])?;
            h = tape.add_row(h, pair[1])?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        Ok(h)
    }

    /// Inference on a batch `n × in`.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register_constant(&mut tape);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }

    /// Multiplies every weight by `factor`.
    pub fn scale_weights(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(|w| *w *= factor);
        }
    }

    pub fn zero_biases(&mut self) {
        for l in &mut self.layers {
            l.bias.data_mut().fill(0.0);
        }
    }

    pub fn zero_output_layer(&mut self) {
        if let Some(l) = self.layers.last_mut() {
            l.weight.data_mut().fill(0.0);
            l.bias.data_mut().fill(0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Largest absolute parameter, handy for sanity checks.
    pub fn max_abs_param(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
