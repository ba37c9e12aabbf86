//! Contrastive path attribution for attention-pooled multiple-instance
//! classifiers over whole-slide feature bags.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod autodiff;
pub mod axioms;
pub mod baseline;
pub(crate) mod binfmt;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod seed;
pub mod tensor;

pub use binfmt::atomic_write;
pub use error::{Error, Result};
pub use tensor::Tensor;
