//! A smooth attention-pooling bag model used to exercise quadrature
//! convergence, where relu kinks would spoil the error rates.

use rand::Rng;

use crate::autodiff::layers::random_normal;
use crate::autodiff::{DifferentiableFn, ShapeSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-patch tanh layers, tanh attention pooling, linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct TanhBagMlp {
    hidden: Vec<(Tensor, Tensor)>,
    attention_v: Tensor,
    attention_w: Tensor,
    head_weight: Tensor,
    head_bias: Tensor,
}

impl TanhBagMlp {
    /// Weights from `N(0, 1/fan_in)`; `widths` starts at the feature dimension.
    pub fn random(widths: &[usize], attention_dim: usize, n_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) || attention_dim == 0 || n_classes == 0 {
            return Err(Error::param(
                "widths",
                "need an input width, one hidden layer and nonzero sizes",
            ));
        }
        let hidden = widths
            .windows(2)
            .map(|p| {
                let std = (1.0 / p[0] as f64).sqrt();
                (random_normal(&[p[1], p[0]], std, rng), random_normal(&[p[1]], 0.1, rng))
            })
            .collect();
        let h = *widths.last().unwrap();
        let std = (1.0 / h as f64).sqrt();
        Ok(Self {
            hidden,
            attention_v: random_normal(&[attention_dim, h], std, rng),
            attention_w: random_normal(&[attention_dim], (1.0 / attention_dim as f64).sqrt(), rng),
            head_weight: random_normal(&[n_classes, h], std, rng),
            head_bias: random_normal(&[n_classes], 0.1, rng),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden[0].0.cols()
    }

    /// Zeroes input column `j`, making the model independent of feature `j`.
    pub fn zero_input_column(&mut self, j: usize) {
        let w = &mut self.hidden[0].0;
        let cols = w.cols();
        for r in 0..w.rows() {
            w.data_mut()[r * cols + j] = 0.0;
        }
    }
}

impl DifferentiableFn for TanhBagMlp {
    fn input_shape(&self) -> ShapeSpec {
        ShapeSpec::rows_of(self.input_dim())
    }

    fn record(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let mut h = input;
        for (w, b) in &self.hidden {
            let w = tape.constant(w.clone());
            let b = tape.constant(b.clone());
            let z = tape.matmul_t(h, w)?;
            let z = tape.add_row(z, b)?;
            h = tape.tanh(z);
        }
        let v = tape.constant(self.attention_v.clone());
        let a = tape.matmul_t(h, v)?;
        let a = tape.tanh(a);
        let w = tape.constant(self.attention_w.clone());
        let scores = tape.matvec(a, w)?;
        let weights = tape.softmax(scores);
        let pooled = tape.weighted_row_sum(weights, h)?;
        let c = tape.constant(self.head_weight.clone());
        let cb = tape.constant(self.head_bias.clone());
        let y = tape.matvec(c, pooled)?;
        tape.add(y, cb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_gradient, gradient, max_relative_error, ScalarSelector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = TanhBagMlp::random(&[4, 6], 3, 2, &mut rng).unwrap();
        let x = random_normal(&[5, 4], 1.0, &mut rng);
        let sel = ScalarSelector::Component(1);
        let g = gradient(&model, &x, &sel).unwrap();
        let fd = finite_diff_gradient(&model, &x, &sel, 1e-5).unwrap();
        assert!(max_relative_error(&g, &fd, 1e-8) < 1e-6);
    }

    #[test]
    fn zeroed_column_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = TanhBagMlp::random(&[3, 5, 4], 3, 2, &mut rng).unwrap();
        model.zero_input_column(1);
        let x = random_normal(&[4, 3], 1.0, &mut rng);
        let g = gradient(&model, &x, &ScalarSelector::Sum).unwrap();
        for k in 0..4 {
            assert_eq!(g.get2(k, 1), 0.0);
        }
    }
}
