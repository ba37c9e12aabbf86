//! Reverse-mode differentiation over dense tensors, with the finite-difference
//! and power-iteration oracles used to check it.

pub mod func;
pub mod layers;
pub mod spectral;
pub mod tape;

pub use func::{
    evaluate, finite_diff_gradient, gradient, max_relative_error, value_and_gradient, DifferentiableFn, Evaluation,
    FnGraph, ScalarSelector, ShapeSpec,
};
pub use layers::{Activation, Layer, Sequential};
pub use spectral::spectral_norm;
pub use tape::{softmax, Gradients, Tape, Var};
