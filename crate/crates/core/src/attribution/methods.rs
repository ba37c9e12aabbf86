use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::path::PathSpec;
use crate::attribution::result::{AttributionResult, Method};
use crate::autodiff::{evaluate, value_and_gradient, DifferentiableFn, Evaluation, ScalarSelector};
use crate::baseline::ReferencePool;
use crate::error::{Error, Result};
use crate::model::Prediction;
use crate::tensor::Tensor;

/// Which derivative the contrastive integrand uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CigVariant {
    /// `∇_z D(z; x')` at `z = γ(α)`. Attributions sum to `D(x)`.
    #[default]
    Interpolated,
    /// Derivative with respect to the endpoint `x` through `γ(α)`, which
    /// multiplies the integrand by `α`. For linear logits the sum is `⅔ D(x)`.
    EndpointDerivative,
}

/// `D(z) = ‖f(z) − f(x')‖²`.
pub fn contrastive_objective<F: DifferentiableFn + ?Sized>(f: &F, z: &Tensor, baseline: &Tensor) -> Result<f64> {
    z.expect_same_shape(baseline)?;
    let fz = evaluate(f, z)?;
    let fb = evaluate(f, baseline)?;
    Ok(fz.sub(&fb)?.squared_norm())
}

/// Class with the largest logit at `x`, lowest index on ties.
pub fn predicted_class<F: DifferentiableFn + ?Sized>(f: &F, x: &Tensor) -> Result<usize> {
    Ok(Prediction::from_logits(evaluate(f, x)?.data()).class)
}

fn checked_gradient<F: DifferentiableFn + ?Sized>(
    f: &F,
    z: &Tensor,
    selector: &ScalarSelector,
    alpha: f64,
) -> Result<Evaluation> {
    let e = value_and_gradient(f, z, selector)?;
    if !e.scalar.is_finite() || !e.gradient.is_finite() {
        return Err(Error::Numeric { alpha });
    }
    Ok(e)
}

fn check_target<F: DifferentiableFn + ?Sized>(f: &F, x: &Tensor, target: usize) -> Result<Tensor> {
    let out = evaluate(f, x)?;
    if target >= out.len() {
        return Err(Error::param(
            "target_class",
            format!("class {} out of range for {} outputs", target, out.len()),
        ));
    }
    Ok(out)
}

/// `(x − x') ⊙ Σ_j w_j · c(α_j) · ∇s(γ(α_j))`, calling `observe(α_j, term_j)`
/// with each unweighted term in ascending α.
fn path_integral<F: DifferentiableFn + ?Sized>(
    f: &F,
    path: &PathSpec,
    selector: &ScalarSelector,
    factor: impl Fn(f64) -> f64,
    observe: &mut dyn FnMut(f64, &Tensor),
) -> Result<Tensor> {
    path.validate()?;
    let delta = path.delta();
    let mut acc = Tensor::zeros(delta.shape());
    for (alpha, weight) in path.rule.nodes(path.steps)? {
        let z = path.point(alpha)?;
        let e = checked_gradient(f, &z, selector, alpha)?;
        let c = factor(alpha);
        let term = delta.zip_map(&e.gradient, |d, g| d * g * c)?;
        observe(alpha, &term);
        for (a, t) in acc.data_mut().iter_mut().zip(term.data()) {
            *a += weight * t;
        }
    }
    Ok(acc)
}

/// Contrastive integrated gradients against the logits of the baseline.
pub fn cig<F: DifferentiableFn + ?Sized>(f: &F, path: &PathSpec) -> Result<AttributionResult> {
    cig_with(f, path, CigVariant::Interpolated, &mut |_, _| {})
}

/// [`cig`] with a choice of integrand and a per-node observer receiving
/// `(α, (x − x') ⊙ ∂D)` before quadrature weighting.
pub fn cig_with<F: DifferentiableFn + ?Sized>(
    f: &F,
    path: &PathSpec,
    variant: CigVariant,
    observe: &mut dyn FnMut(f64, &Tensor),
) -> Result<AttributionResult> {
    path.validate()?;
    let reference = evaluate(f, &path.baseline)?;
    let selector = ScalarSelector::SquaredDistance(reference.clone());
    let a = match variant {
        CigVariant::Interpolated => path_integral(f, path, &selector, |_| 1.0, observe)?,
        CigVariant::EndpointDerivative => path_integral(f, path, &selector, |a| a, observe)?,
    };
    let d_x = evaluate(f, &path.input)?.sub(&reference)?.squared_norm();
    let mut result = AttributionResult::new(Method::Cig, a, path.steps)?;
    result.residual = Some((result.sum() - d_x).abs());
    if variant == CigVariant::EndpointDerivative {
        result.notes.push("endpoint-derivative integrand".into());
    }
    Ok(result)
}

/// Integrated gradients of logit `target`.
pub fn integrated_gradients<F: DifferentiableFn + ?Sized>(
    f: &F,
    path: &PathSpec,
    target: usize,
) -> Result<AttributionResult> {
    path.validate()?;
    let fx = check_target(f, &path.input, target)?;
    let fb = evaluate(f, &path.baseline)?;
    let a = path_integral(f, path, &ScalarSelector::Component(target), |_| 1.0, &mut |_, _| {})?;
    let mut result = AttributionResult::new(Method::Ig, a, path.steps)?;
    result.residual = Some((result.sum() - (fx.data()[target] - fb.data()[target])).abs());
    result.target_class = Some(target);
    Ok(result)
}

/// Expected gradients: each of `n_samples` draws pairs a fresh baseline bag
/// from `pool` with `α ~ U[0, 1)`.
pub fn expected_gradients<F: DifferentiableFn + ?Sized>(
    f: &F,
    x: &Tensor,
    pool: &ReferencePool,
    n_samples: usize,
    target: usize,
    seed: u64,
) -> Result<AttributionResult> {
    if n_samples == 0 {
        return Err(Error::param("n_samples", "need at least one sample"));
    }
    if pool.is_empty() {
        return Err(Error::Pool("pool has no rows".into()));
    }
    if x.rank() != 2 || x.cols() != pool.dim() {
        return Err(Error::shape(format!("[n, {}]", pool.dim()), x.shape()));
    }
    check_target(f, x, target)?;
    let selector = ScalarSelector::Component(target);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Tensor::zeros(x.shape());
    for _ in 0..n_samples {
        let baseline = pool.sample_with(x.rows(), &mut rng)?;
        let alpha: f64 = rng.random();
        let z = crate::attribution::straight_line(x, &baseline, alpha)?;
        let e = checked_gradient(f, &z, &selector, alpha)?;
        for ((a, (xi, bi)), g) in acc
            .data_mut()
            .iter_mut()
            .zip(x.data().iter().zip(baseline.data()))
            .zip(e.gradient.data())
        {
            *a += (xi - bi) * g;
        }
    }
    let acc = acc.scale(1.0 / n_samples as f64);
    let mut result = AttributionResult::new(Method::Eg, acc, n_samples)?;
    result.target_class = Some(target);
    result.approximate = true;
    result.notes.push("reconstructed formula".into());
    Ok(result)
}

/// Slope weights `ŝ_j` over `α_j = j/m`, `j < m`, and whether the uniform
/// fallback was taken, together with the gradients at those nodes.
fn idg_nodes<F: DifferentiableFn + ?Sized>(
    f: &F,
    path: &PathSpec,
    target: usize,
) -> Result<(Vec<f64>, bool, Vec<Tensor>)> {
    path.validate()?;
    let m = path.steps;
    if m < 2 {
        return Err(Error::param("steps", "IDG needs at least two steps"));
    }
    let fx = check_target(f, &path.input, target)?;
    let selector = ScalarSelector::Component(target);

    let mut values = Vec::with_capacity(m + 1);
    let mut grads = Vec::with_capacity(m);
    for j in 0..m {
        let alpha = j as f64 / m as f64;
        let e = checked_gradient(f, &path.point(alpha)?, &selector, alpha)?;
        values.push(e.scalar);
        grads.push(e.gradient);
    }
    values.push(fx.data()[target]);

    let denom = values[m] - values[0];
    if denom.abs() < 1e-12 {
        return Ok((vec![1.0 / m as f64; m], true, grads));
    }
    let weights = values.windows(2).map(|w| (w[1] - w[0]) / denom).collect();
    Ok((weights, false, grads))
}

/// IDG slope weights along `path`; the flag reports the uniform fallback.
pub fn idg_slope_weights<F: DifferentiableFn + ?Sized>(
    f: &F,
    path: &PathSpec,
    target: usize,
) -> Result<(Vec<f64>, bool)> {
    idg_nodes(f, path, target).map(|(w, flag, _)| (w, flag))
}

/// Integrated decision gradients over the grid `α_j = j/m`, weighting the
/// gradient at `α_j` by the normalized forward difference of logit
/// `target` to `α_{j+1}`. Falls back to uniform weights when the logit
/// barely changes along the path.
pub fn idg<F: DifferentiableFn + ?Sized>(f: &F, path: &PathSpec, target: usize) -> Result<AttributionResult> {
    let (weights, fallback, grads) = idg_nodes(f, path, target)?;
    let delta = path.delta();
    let mut acc = Tensor::zeros(delta.shape());
    for (g, w) in grads.iter().zip(&weights) {
        for (a, gi) in acc.data_mut().iter_mut().zip(g.data()) {
            *a += w * gi;
        }
    }
    let a = acc.mul(&delta)?;
    let mut result = AttributionResult::new(Method::Idg, a, path.steps)?;
    result.target_class = Some(target);
    result.approximate = true;
    result.notes.push("reconstructed formula".into());
    if fallback {
        result.notes.push("uniform slope fallback".into());
    }
    Ok(result)
}

/// Plain gradient of logit `target` at `x`.
pub fn vanilla_gradient<F: DifferentiableFn + ?Sized>(f: &F, x: &Tensor, target: usize) -> Result<AttributionResult> {
    check_target(f, x, target)?;
    let e = checked_gradient(f, x, &ScalarSelector::Component(target), 1.0)?;
    let mut result = AttributionResult::new(Method::Gradient, e.gradient, 0)?;
    result.target_class = Some(target);
    Ok(result)
}

/// `|Σ A − D(x)|`, recomputed from the model.
pub fn completeness_residual<F: DifferentiableFn + ?Sized>(
    result: &AttributionResult,
    f: &F,
    x: &Tensor,
    baseline: &Tensor,
) -> Result<f64> {
    Ok((result.sum() - contrastive_objective(f, x, baseline)?).abs())
}
