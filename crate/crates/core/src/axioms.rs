//! Executable checks of the attribution axioms on fixtures with known answers.
//!
//! Each check draws its own seeded fixtures and reports the worst observed
//! metric against a fixed tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attribution::{
    cig, cig_with, integrated_gradients, predicted_class, run_method, CigVariant, Method, MethodSettings, PathSpec,
    QuadratureRule,
};
use crate::autodiff::layers::random_normal;
use crate::autodiff::{
    evaluate, finite_diff_gradient, gradient, max_relative_error, spectral_norm, Activation, DifferentiableFn,
    ScalarSelector, Sequential,
};
use crate::baseline::{build_reference_pool, PoolConfig, ReferencePool};
use crate::data::FeatureBag;
use crate::error::Result;
use crate::model::{LinearBagModel, MilModel, ModelConfig, SplitLinearBagModel, TanhBagMlp};
use crate::seed::derive;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxiomReport {
    pub checks: Vec<CheckOutcome>,
}

impl AxiomReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "[{}] {:<26} {}\n",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                )
            })
            .collect()
    }
}

/// Runs every check with fixtures derived from `seed`.
pub fn run_axioms(seed: u64) -> Result<AxiomReport> {
    Ok(AxiomReport {
        checks: vec![
            completeness(derive(seed, "completeness"), 50)?,
            linear_closed_form(derive(seed, "linear"), 20)?,
            ig_completeness(derive(seed, "completeness"), 50)?,
            sensitivity(derive(seed, "sensitivity"), 20)?,
            implementation_invariance(derive(seed, "invariance"), 20)?,
            lipschitz_bound(derive(seed, "lipschitz"), 100)?,
            endpoint_ablation(derive(seed, "lipschitz"), 100)?,
            gradient_check(derive(seed, "gradient"), 100)?,
        ],
    })
}

/// A random smooth bag model with a random bag and baseline.
pub fn smooth_fixture(rng: &mut ChaCha8Rng) -> Result<(TanhBagMlp, Tensor, Tensor)> {
    let d = rng.random_range(3..=6);
    let n = rng.random_range(2..=6);
    let hidden = rng.random_range(4..=8);
    let model = TanhBagMlp::random(&[d, hidden], 4, 3, rng)?;
    let x = random_normal(&[n, d], 1.0, rng);
    let b = random_normal(&[n, d], 1.0, rng);
    Ok((model, x, b))
}

fn relative_cig_residual<F: DifferentiableFn + ?Sized>(f: &F, x: &Tensor, b: &Tensor, m: usize) -> Result<f64> {
    let r = cig(f, &PathSpec::with(x.clone(), b.clone(), m, QuadratureRule::Trapezoid)?)?;
    let d = r.sum() - r.residual.unwrap_or(0.0);
    Ok(r.residual.unwrap_or(0.0) / d.abs().max(1.0))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Attributions sum to `D(x)`, and the trapezoid error shrinks like `1/m²`.
pub fn completeness(seed: u64, n_models: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let (mut r200, mut r400) = (Vec::new(), Vec::new());
    for _ in 0..n_models {
        let (model, x, b) = smooth_fixture(&mut rng)?;
        worst = worst.max(relative_cig_residual(&model, &x, &b, 300)?);
        r200.push(relative_cig_residual(&model, &x, &b, 200)?);
        r400.push(relative_cig_residual(&model, &x, &b, 400)?);
    }
    let ratio = median(r200) / median(r400);
    Ok(CheckOutcome::new(
        "completeness",
        worst <= 1e-3 && (3.0..=5.0).contains(&ratio),
        format!(
            "max relative residual {:.3e} at m=300; median drop m=200->400 {:.2}x",
            worst, ratio
        ),
    ))
}

/// IG sums to the change in the predicted-class logit.
pub fn ig_completeness(seed: u64, n_models: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_models {
        let (model, x, b) = smooth_fixture(&mut rng)?;
        let target = predicted_class(&model, &x)?;
        let r = integrated_gradients(
            &model,
            &PathSpec::with(x.clone(), b.clone(), 300, QuadratureRule::Trapezoid)?,
            target,
        )?;
        let delta = evaluate(&model, &x)?.data()[target] - evaluate(&model, &b)?.data()[target];
        worst = worst.max(r.residual.unwrap_or(f64::INFINITY) / delta.abs().max(1.0));
    }
    Ok(CheckOutcome::new(
        "ig-completeness",
        worst <= 1e-3,
        format!("max relative residual {:.3e} at m=300", worst),
    ))
}

fn random_linear(rng: &mut ChaCha8Rng) -> (Tensor, Tensor, Tensor) {
    let d = rng.random_range(2..=6);
    let c = rng.random_range(1..=4);
    let w = random_normal(&[c, d], 1.0, rng);
    let x = random_normal(&[1, d], 1.0, rng);
    let b = random_normal(&[1, d], 1.0, rng);
    (w, x, b)
}

/// `(x − x') ⊙ WᵀW(x − x')` for a one-patch bag under `W`.
fn linear_cig_oracle(w: &Tensor, x: &Tensor, b: &Tensor) -> Vec<f64> {
    let d: Vec<f64> = x.data().iter().zip(b.data()).map(|(p, q)| p - q).collect();
    let wd: Vec<f64> = (0..w.rows())
        .map(|r| w.row(r).iter().zip(&d).map(|(a, b)| a * b).sum())
        .collect();
    (0..d.len())
        .map(|j| d[j] * (0..w.rows()).map(|r| w.get2(r, j) * wd[r]).sum::<f64>())
        .collect()
}

/// Closed form for linear logits, plus the worked two-feature fixture.
pub fn linear_closed_form(seed: u64, n_models: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_models {
        let (w, x, b) = random_linear(&mut rng);
        let oracle = linear_cig_oracle(&w, &x, &b);
        let r = cig(&LinearBagModel::without_bias(w), &PathSpec::new(x, b)?)?;
        for (a, o) in r.attributions.data().iter().zip(&oracle) {
            worst = worst.max((a - o).abs());
        }
    }
    let fixture = cig(
        &LinearBagModel::without_bias(Tensor::diag(&[1.0, 2.0])),
        &PathSpec::new(Tensor::from_rows(&[[1.0, 1.0]])?, Tensor::zeros(&[1, 2]))?,
    )?;
    let exact = fixture.attributions.data() == [1.0, 4.0] && fixture.sum() == 5.0;
    Ok(CheckOutcome::new(
        "linear-closed-form",
        worst <= 1e-10 && exact,
        format!(
            "max deviation {:.3e}; diag(1,2) fixture {:?}",
            worst,
            fixture.attributions.data()
        ),
    ))
}

/// Zeroing an input column zeroes every attribution in it.
pub fn sensitivity(seed: u64, n_seeds: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nonzero = 0usize;
    let settings = MethodSettings::default();
    for s in 0..n_seeds {
        let (mut smooth, x, b) = smooth_fixture(&mut rng)?;
        let j = rng.random_range(0..smooth.input_dim());
        smooth.zero_input_column(j);

        let d = x.cols();
        let mut mil = MilModel::init(ModelConfig::desk(d, 2), derive(seed, &s.to_string()))?;
        let first = mil.first_layer_mut();
        let cols = first.weight.cols();
        for r in 0..first.weight.rows() {
            first.weight.data_mut()[r * cols + j] = 0.0;
        }

        for method in [Method::Gradient, Method::Ig, Method::Cig] {
            for a in [
                run_method(method, &smooth, &x, &b, None, &settings, s as u64)?.attributions,
                run_method(method, &mil, &x, &b, None, &settings, s as u64)?.attributions,
            ] {
                nonzero += (0..a.rows()).filter(|&k| a.get2(k, j) != 0.0).count();
            }
        }
    }
    Ok(CheckOutcome::new(
        "sensitivity",
        nonzero == 0,
        format!("{} nonzero entries in ignored columns", nonzero),
    ))
}

fn pool_from(rng: &mut ChaCha8Rng, d: usize) -> Result<ReferencePool> {
    let bags: Vec<FeatureBag> = (0..3)
        .map(|i| {
            let feats: Vec<f32> = (0..4 * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            FeatureBag::new(
                format!("ref{}", i),
                format!("ref{}", i),
                0,
                feats,
                d,
                (0..4).map(|k| (k, 0)).collect(),
            )
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&FeatureBag> = bags.iter().collect();
    build_reference_pool(
        &refs,
        1,
        &PoolConfig {
            n_slides: 3,
            per_slide: Some(4),
        },
        0,
    )
}

/// `W·m` and `(W/2)·m + (W/2)·m` receive the same attributions.
pub fn implementation_invariance(seed: u64, n_seeds: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let settings = MethodSettings::default();
    for s in 0..n_seeds {
        let d = rng.random_range(2..=6);
        let n = rng.random_range(1..=5);
        let a = LinearBagModel::new(
            random_normal(&[3, d], 1.0, &mut rng),
            random_normal(&[3], 1.0, &mut rng),
        )?;
        let b = SplitLinearBagModel::from_linear(&a);
        let x = random_normal(&[n, d], 1.0, &mut rng);
        let base = random_normal(&[n, d], 1.0, &mut rng);
        let pool = pool_from(&mut rng, d)?;
        for method in Method::ALL {
            let ra = run_method(method, &a, &x, &base, Some(&pool), &settings, s as u64)?;
            let rb = run_method(method, &b, &x, &base, Some(&pool), &settings, s as u64)?;
            worst = worst.max(ra.attributions.sub(&rb.attributions)?.max_abs());
        }
    }
    Ok(CheckOutcome::new(
        "implementation-invariance",
        worst <= 1e-8,
        format!("max difference {:.3e} across all methods", worst),
    ))
}

/// `|A_i| ≤ c·L²‖x − x'‖|x_i − x'_i|` with `c = 1`.
pub fn lipschitz_bound(seed: u64, n_models: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_slack = f64::INFINITY;
    for _ in 0..n_models {
        let (w, x, b) = random_linear(&mut rng);
        let l = spectral_norm(&w, 10_000, 1e-14)?;
        let r = cig(&LinearBagModel::without_bias(w), &PathSpec::new(x.clone(), b.clone())?)?;
        worst_slack = worst_slack.min(bound_slack(&r.attributions, &x, &b, l, 1.0));
    }
    Ok(CheckOutcome::new(
        "lipschitz-bound",
        worst_slack >= 0.0,
        format!("minimum slack {:.3e}", worst_slack),
    ))
}

/// Smallest `c·L²‖d‖|d_i| + 1e-9 − |A_i|` over features.
pub fn bound_slack(a: &Tensor, x: &Tensor, b: &Tensor, l: f64, c: f64) -> f64 {
    let d = x.sub(b).expect("same shape");
    let norm = d.norm();
    a.data()
        .iter()
        .zip(d.data())
        .map(|(ai, di)| c * l * l * norm * di.abs() + 1e-9 - ai.abs())
        .fold(f64::INFINITY, f64::min)
}

/// Endpoint-derivative integrand: the ⅔ bound holds and the sum is `⅔ D(x)`.
pub fn endpoint_ablation(seed: u64, n_models: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_slack = f64::INFINITY;
    let mut worst_sum: f64 = 0.0;
    for _ in 0..n_models {
        let (w, x, b) = random_linear(&mut rng);
        let l = spectral_norm(&w, 10_000, 1e-14)?;
        let model = LinearBagModel::without_bias(w);
        let path = PathSpec::with(x.clone(), b.clone(), 50, QuadratureRule::Simpson)?;
        let r = cig_with(&model, &path, CigVariant::EndpointDerivative, &mut |_, _| {})?;
        let d_x = crate::attribution::contrastive_objective(&model, &x, &b)?;
        worst_slack = worst_slack.min(bound_slack(&r.attributions, &x, &b, l, 2.0 / 3.0));
        worst_sum = worst_sum.max((r.sum() - 2.0 / 3.0 * d_x).abs());
    }
    Ok(CheckOutcome::new(
        "endpoint-ablation",
        worst_slack >= 0.0 && worst_sum <= 1e-8,
        format!("minimum slack {:.3e}; max |sum - 2/3 D| {:.3e}", worst_slack, worst_sum),
    ))
}

/// Reverse-mode gradients against central differences, away from relu kinks.
pub fn gradient_check(seed: u64, n_pairs: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for i in 0..n_pairs {
        let (g, fd) = match i % 3 {
            0 => {
                let (model, x, _) = smooth_fixture(&mut rng)?;
                let sel = ScalarSelector::Component(rng.random_range(0..3));
                (gradient(&model, &x, &sel)?, finite_diff_gradient(&model, &x, &sel, h)?)
            }
            1 => {
                let d = rng.random_range(3..=6);
                let cfg = ModelConfig {
                    input_dim: d,
                    hidden: vec![8, 6],
                    attention_dim: 4,
                    n_classes: 2,
                };
                let model = MilModel::init(cfg, rng.random())?;
                let n = rng.random_range(2..=6);
                let x = away_from_kinks(&mut rng, &[n, d], |x| model.min_relu_margin(x))?;
                let reference = random_normal(&[2], 1.0, &mut rng);
                let sel = ScalarSelector::SquaredDistance(reference);
                (gradient(&model, &x, &sel)?, finite_diff_gradient(&model, &x, &sel, h)?)
            }
            _ => {
                let d = rng.random_range(2..=6);
                let act = if rng.random() {
                    Activation::Relu
                } else {
                    Activation::Tanh
                };
                let model = Sequential::random_mlp(&[d, 7, 5, 2], act, &mut rng);
                let x = away_from_kinks(&mut rng, &[d], |x| model.min_relu_margin(x))?;
                let sel = ScalarSelector::Component(0);
                (gradient(&model, &x, &sel)?, finite_diff_gradient(&model, &x, &sel, h)?)
            }
        };
        worst = worst.max(max_relative_error(&g, &fd, 1e-8));
    }
    Ok(CheckOutcome::new(
        "gradient-vs-finite-diff",
        worst <= 1e-5,
        format!("max relative error {:.3e}", worst),
    ))
}

/// Redraws a standard-normal input until every relu pre-activation is
/// farther than `1e-3` from zero.
pub fn away_from_kinks(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    margin: impl Fn(&Tensor) -> Result<f64>,
) -> Result<Tensor> {
    loop {
        let x = random_normal(shape, 1.0, rng);
        if margin(&x)? > 1e-3 {
            return Ok(x);
        }
    }
}
