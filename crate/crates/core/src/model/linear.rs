//! Closed-form bag models used as attribution fixtures.

use crate::autodiff::{DifferentiableFn, ShapeSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Logits `W · mean_k(x_k) + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBagModel {
    weight: Tensor,
    bias: Tensor,
}

impl LinearBagModel {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.len() != weight.rows() {
            return Err(Error::shape(format!("bias of length {}", weight.rows()), bias.shape()));
        }
        Ok(Self { weight, bias })
    }

    pub fn without_bias(weight: Tensor) -> Self {
        let m = weight.rows();
        Self {
            weight,
            bias: Tensor::zeros(&[m]),
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}

impl DifferentiableFn for LinearBagModel {
    fn input_shape(&self) -> ShapeSpec {
        ShapeSpec::rows_of(self.weight.cols())
    }

    fn record(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let mean = tape.mean_rows(input)?;
        let w = tape.constant(self.weight.clone());
        let b = tape.constant(self.bias.clone());
        let y = tape.matvec(w, mean)?;
        tape.add(y, b)
    }
}

/// The same function as [`LinearBagModel`], recorded as
/// `(W/2)·m + (W/2)·m + b` so its graph differs structurally.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitLinearBagModel {
    half: Tensor,
    bias: Tensor,
}

impl SplitLinearBagModel {
    pub fn from_linear(model: &LinearBagModel) -> Self {
        Self {
            half: model.weight.scale(0.5),
            bias: model.bias.clone(),
        }
    }
}

impl DifferentiableFn for SplitLinearBagModel {
    fn input_shape(&self) -> ShapeSpec {
        ShapeSpec::rows_of(self.half.cols())
    }

    fn record(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let mean = tape.mean_rows(input)?;
        let w1 = tape.constant(self.half.clone());
        let w2 = tape.constant(self.half.clone());
        let b = tape.constant(self.bias.clone());
        let y1 = tape.matvec(w1, mean)?;
        let y2 = tape.matvec(w2, mean)?;
        let y = tape.add(y1, y2)?;
        tape.add(y, b)
    }
}
