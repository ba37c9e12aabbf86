//! Layer stacks over vectors, used as generic test subjects for the
//! gradient machinery and the attribution axioms.

use rand::Rng;

use crate::autodiff::func::{DifferentiableFn, ShapeSpec};
use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `W x + b` with `W` of shape `out×in`.
    Linear {
        weight: Tensor,
        bias: Tensor,
    },
    Relu,
    Tanh,
    Softmax,
    Sum,
    SquaredNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// A feed-forward chain of [`Layer`]s over a 1-D input.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut width = input_dim;
        for layer in &layers {
            if let Layer::Linear { weight, bias } = layer {
                if weight.rank() != 2 || weight.cols() != width || bias.len() != weight.rows() {
                    return Err(Error::shape(format!("[_, {}] weight", width), weight.shape()));
                }
                width = weight.rows();
            }
        }
        Ok(Self { input_dim, layers })
    }

    /// Dense layers of the given widths with `activation` between them and
    /// weights drawn from `N(0, 1/fan_in)`.
    pub fn random_mlp(widths: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (1.0 / fan_in as f64).sqrt();
            let weight = random_normal(&[fan_out, fan_in], std, rng);
            let bias = random_normal(&[fan_out], 0.1, rng);
            layers.push(Layer::Linear { weight, bias });
            if i + 2 < widths.len() {
                layers.push(match activation {
                    Activation::Relu => Layer::Relu,
                    Activation::Tanh => Layer::Tanh,
                });
            }
        }
        Self::new(widths[0], layers).expect("widths are consistent")
    }

    pub fn push(mut self, layer: Layer) -> Result<Self> {
        self.layers.push(layer);
        Self::new(self.input_dim, self.layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Smallest `|pre-activation|` feeding any relu at `x`; infinite without relus.
    pub fn min_relu_margin(&self, x: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let mut cur = tape.constant(x.clone());
        let mut margin = f64::INFINITY;
        for layer in &self.layers {
            if matches!(layer, Layer::Relu) {
                margin = tape.value(cur).data().iter().fold(margin, |m, v| m.min(v.abs()));
            }
            cur = apply(&mut tape, cur, layer)?;
        }
        Ok(margin)
    }
}

fn apply(tape: &mut Tape, x: Var, layer: &Layer) -> Result<Var> {
    Ok(match layer {
        Layer::Linear { weight, bias } => {
            let w = tape.constant(weight.clone());
            let b = tape.constant(bias.clone());
            let y = tape.matvec(w, x)?;
            tape.add(y, b)?
        }
        Layer::Relu => tape.relu(x),
        Layer::Tanh => tape.tanh(x),
        Layer::Softmax => tape.softmax(x),
        Layer::Sum => tape.sum(x),
        Layer::SquaredNorm => tape.squared_norm(x),
    })
}

impl DifferentiableFn for Sequential {
    fn input_shape(&self) -> ShapeSpec {
        ShapeSpec::exact(&[self.input_dim])
    }

    fn record(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let mut cur = input;
        for layer in &self.layers {
            cur = apply(tape, cur, layer)?;
        }
        // Reductions yield rank-0 tensors; keep vector outputs as they are.
        Ok(cur)
    }
}

/// Tensor of i.i.d. `N(0, std²)` entries.
pub fn random_normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
