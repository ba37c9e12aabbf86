use cig_core::attribution::{
    cig, expected_gradients, idg, idg_slope_weights, integrated_gradients, patch_saliency, predicted_class, run_method,
    vanilla_gradient, Method, MethodSettings, PathSpec, QuadratureRule,
};
use cig_core::autodiff::layers::random_normal;
use cig_core::autodiff::{finite_diff_gradient, max_relative_error, FnGraph, ScalarSelector, ShapeSpec};
use cig_core::baseline::{build_reference_pool, PoolConfig};
use cig_core::data::FeatureBag;
use cig_core::eval::rank;
use cig_core::model::{LinearBagModel, SplitLinearBagModel, TanhBagMlp};
use cig_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn smooth(seed: u64) -> (TanhBagMlp, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = TanhBagMlp::random(&[4, 6], 3, 3, &mut rng).unwrap();
    (
        model,
        random_normal(&[5, 4], 1.0, &mut rng),
        random_normal(&[5, 4], 1.0, &mut rng),
    )
}

fn cig_residual(model: &TanhBagMlp, x: &Tensor, b: &Tensor, m: usize) -> f64 {
    cig(
        model,
        &PathSpec::with(x.clone(), b.clone(), m, QuadratureRule::Trapezoid).unwrap(),
    )
    .unwrap()
    .residual
    .unwrap()
}

/// Reference `(x − x') ⊙ WᵀW(x − x')` for a single-patch bag.
fn closed_form(w: &Tensor, d: &[f64]) -> Vec<f64> {
    let wd: Vec<f64> = (0..w.rows())
        .map(|r| (0..d.len()).map(|j| w.get2(r, j) * d[j]).sum())
        .collect();
    (0..d.len())
        .map(|j| d[j] * (0..w.rows()).map(|r| w.get2(r, j) * wd[r]).sum::<f64>())
        .collect()
}

#[test]
fn trapezoid_residual_is_second_order() {
    let ms = [50, 100, 200, 400];
    let mut per_m: Vec<Vec<f64>> = vec![Vec::new(); ms.len()];
    for seed in 0..20 {
        let (model, x, b) = smooth(seed);
        for (i, &m) in ms.iter().enumerate() {
            per_m[i].push(cig_residual(&model, &x, &b, m));
        }
    }
    let medians: Vec<f64> = per_m
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            0.5 * (v[9] + v[10])
        })
        .collect();
    for w in medians.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.0..=5.0).contains(&ratio), "ratio {} in {:?}", ratio, medians);
    }
}

#[test]
fn eg_converges_to_zero_baseline_ig() {
    let bag = FeatureBag::new("zero", "zero", 0, vec![0.0; 12], 3, (0..4).map(|i| (i, 0)).collect()).unwrap();
    let pool = build_reference_pool(
        &[&bag],
        1,
        &PoolConfig {
            n_slides: 1,
            per_slide: Some(4),
        },
        0,
    )
    .unwrap();
    let w = Tensor::from_rows(&[[0.7, -1.3, 2.0]]).unwrap();
    let model = LinearBagModel::without_bias(w.clone());
    let x = Tensor::from_rows(&[[1.5, 0.5, -1.0]]).unwrap();
    let r = expected_gradients(&model, &x, &pool, 2000, 0, 9).unwrap();
    for j in 0..3 {
        let want = w.data()[j] * x.data()[j];
        assert!((r.attributions.data()[j] - want).abs() <= 0.02 * want.abs());
    }
    assert_eq!(r, expected_gradients(&model, &x, &pool, 2000, 0, 9).unwrap());
}

#[test]
fn eg_is_zero_when_input_matches_the_only_pool_row() {
    let bag = FeatureBag::new("r", "r", 0, vec![0.5, -0.25], 2, vec![(0, 0)]).unwrap();
    let pool = build_reference_pool(
        &[&bag],
        1,
        &PoolConfig {
            n_slides: 1,
            per_slide: Some(1),
        },
        0,
    )
    .unwrap();
    let model = LinearBagModel::without_bias(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
    let x = Tensor::from_rows(&[[0.5, -0.25], [0.5, -0.25]]).unwrap();
    let r = expected_gradients(&model, &x, &pool, 10, 0, 1).unwrap();
    assert_eq!(r.attributions.max_abs(), 0.0);
}

#[test]
fn vanilla_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let (model, x, _) = smooth(seed);
        let target = predicted_class(&model, &x).unwrap();
        let g = vanilla_gradient(&model, &x, target).unwrap().attributions;
        let fd = finite_diff_gradient(&model, &x, &ScalarSelector::Component(target), 1e-5).unwrap();
        assert!(max_relative_error(&g, &fd, 1e-8) <= 1e-5);
    }
}

fn monotone_model() -> impl cig_core::autodiff::DifferentiableFn {
    let w = Tensor::vector(vec![0.8, -0.4, 1.1]);
    FnGraph::new(ShapeSpec::rows_of(3), move |t, x| {
        let m = t.mean_rows(x)?;
        let wv = t.constant(w.clone());
        let p = t.mul(m, wv)?;
        let s = t.sum(p);
        Ok(t.tanh(s))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_cig_matches_closed_form_for_exact_rules(
        seed in any::<u64>(),
        rule in prop::sample::select(vec![QuadratureRule::Trapezoid, QuadratureRule::Midpoint, QuadratureRule::Simpson]),
        m in 1usize..30,
    ) {
        let m = 2 * m;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_normal(&[3, 4], 1.0, &mut rng);
        let x = random_normal(&[1, 4], 1.0, &mut rng);
        let b = random_normal(&[1, 4], 1.0, &mut rng);
        let d: Vec<f64> = x.sub(&b).unwrap().into_data();
        let model = LinearBagModel::without_bias(w.clone());
        let path = PathSpec::with(x.clone(), b.clone(), m, rule).unwrap();
        let a = cig(&model, &path).unwrap();
        for (got, want) in a.attributions.data().iter().zip(closed_form(&w, &d)) {
            prop_assert!((got - want).abs() <= 1e-10);
        }
        let ig = integrated_gradients(&model, &path, 1).unwrap();
        for (j, dj) in d.iter().enumerate() {
            prop_assert!((ig.attributions.data()[j] - dj * w.get2(1, j)).abs() <= 1e-12);
        }
    }

    #[test]
    fn sensitivity_zero_column(seed in any::<u64>(), j in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = TanhBagMlp::random(&[4, 5], 3, 2, &mut rng).unwrap();
        model.zero_input_column(j);
        let x = random_normal(&[3, 4], 1.0, &mut rng);
        let b = random_normal(&[3, 4], 1.0, &mut rng);
        for method in [Method::Gradient, Method::Ig, Method::Cig] {
            let a = run_method(method, &model, &x, &b, None, &MethodSettings::default(), seed).unwrap().attributions;
            for k in 0..3 {
                prop_assert_eq!(a.get2(k, j), 0.0);
            }
        }
    }

    #[test]
    fn implementation_invariance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = LinearBagModel::new(random_normal(&[2, 3], 1.0, &mut rng), random_normal(&[2], 1.0, &mut rng)).unwrap();
        let b = SplitLinearBagModel::from_linear(&a);
        let x = random_normal(&[4, 3], 1.0, &mut rng);
        let base = random_normal(&[4, 3], 1.0, &mut rng);
        let src = FeatureBag::new("r", "r", 0, (0..9).map(|i| i as f32 * 0.1).collect(), 3, (0..3).map(|i| (i, 0)).collect()).unwrap();
        let pool = build_reference_pool(&[&src], 1, &PoolConfig::default(), 0).unwrap();
        for method in Method::ALL {
            let ra = run_method(method, &a, &x, &base, Some(&pool), &MethodSettings::default(), seed).unwrap();
            let rb = run_method(method, &b, &x, &base, Some(&pool), &MethodSettings::default(), seed).unwrap();
            prop_assert!(ra.attributions.sub(&rb.attributions).unwrap().max_abs() <= 1e-8);
        }
    }

    #[test]
    fn saliency_scale_equivariance(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_normal(&[6, 3], 1.0, &mut rng);
        let s = patch_saliency(&a).unwrap();
        let sc = patch_saliency(&a.scale(c)).unwrap();
        for (x, y) in s.iter().zip(&sc) {
            prop_assert!((x * c - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        prop_assert_eq!(rank(&s), rank(&sc));
    }

    #[test]
    fn idg_weights_sum_to_one(seed in any::<u64>(), m in 2usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = monotone_model();
        let x = random_normal(&[2, 3], 1.0, &mut rng);
        let b = random_normal(&[2, 3], 1.0, &mut rng);
        let path = PathSpec::with(x, b, m, QuadratureRule::Trapezoid).unwrap();
        let (w, fallback) = idg_slope_weights(&f, &path, 0).unwrap();
        if !fallback {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn idg_equals_ig_on_linear_logits(seed in any::<u64>(), m in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LinearBagModel::without_bias(random_normal(&[2, 3], 1.0, &mut rng));
        let x = random_normal(&[3, 3], 1.0, &mut rng);
        let b = random_normal(&[3, 3], 1.0, &mut rng);
        let path = PathSpec::with(x, b, m, QuadratureRule::Trapezoid).unwrap();
        let a = idg(&model, &path, 0).unwrap().attributions;
        let g = integrated_gradients(&model, &path, 0).unwrap().attributions;
        prop_assert!(a.sub(&g).unwrap().max_abs() <= 1e-10 * g.max_abs().max(1.0));
    }
}
