//! Path-integral and gradient attribution methods for bag classifiers.

mod methods;
mod path;
mod result;

pub use methods::{
    cig, cig_with, completeness_residual, contrastive_objective, expected_gradients, idg, idg_slope_weights,
    integrated_gradients, predicted_class, vanilla_gradient, CigVariant,
};
pub use path::{straight_line, PathSpec, QuadratureRule};
pub use result::{
    decode_attribution, encode_attribution, patch_saliency, read_attribution, write_attribution, write_saliency_csv,
    AttributionResult, Method, StoredAttribution,
};

use crate::autodiff::DifferentiableFn;
use crate::baseline::ReferencePool;
use crate::error::{Error, Result};
use crate::eval::{random_saliency, RandomMode};
use crate::seed::derive;
use crate::tensor::Tensor;

/// Settings shared by every method in a run.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSettings {
    pub steps: usize,
    pub rule: QuadratureRule,
    pub eg_samples: usize,
    pub cig_variant: CigVariant,
    pub random_mode: RandomMode,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            steps: PathSpec::DEFAULT_STEPS,
            rule: QuadratureRule::Trapezoid,
            eg_samples: PathSpec::DEFAULT_STEPS,
            cig_variant: CigVariant::Interpolated,
            random_mode: RandomMode::Uniform,
        }
    }
}

/// Runs `method` on one slide. Comparison methods attribute the class the
/// model predicts at `x`; `seed` is the slide's seed, from which EG and
/// random scores derive their own streams. Random scores come back as an
/// `n × 1` attribution matrix whose saliency equals the scores.
pub fn run_method<F: DifferentiableFn + ?Sized>(
    method: Method,
    f: &F,
    x: &Tensor,
    baseline: &Tensor,
    pool: Option<&ReferencePool>,
    settings: &MethodSettings,
    seed: u64,
) -> Result<AttributionResult> {
    let path = || PathSpec::with(x.clone(), baseline.clone(), settings.steps, settings.rule);
    match method {
        Method::Cig => cig_with(f, &path()?, settings.cig_variant, &mut |_, _| {}),
        Method::Ig => integrated_gradients(f, &path()?, predicted_class(f, x)?),
        Method::Idg => idg(f, &path()?, predicted_class(f, x)?),
        Method::Gradient => vanilla_gradient(f, x, predicted_class(f, x)?),
        Method::Eg => {
            let pool = pool.ok_or_else(|| Error::Pool("expected gradients needs a reference pool".into()))?;
            expected_gradients(
                f,
                x,
                pool,
                settings.eg_samples,
                predicted_class(f, x)?,
                derive(seed, "eg"),
            )
        }
        Method::Random => {
            if x.rank() != 2 {
                return Err(Error::shape("[n, d]", x.shape()));
            }
            let scores = random_saliency(x.rows(), derive(seed, "random"), settings.random_mode);
            AttributionResult::new(Method::Random, Tensor::matrix(x.rows(), 1, scores)?, 0)
        }
    }
}
