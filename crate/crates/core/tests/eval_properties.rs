use cig_core::attribution::Method;
use cig_core::autodiff::layers::random_normal;
use cig_core::eval::{auc, info_bins, mil_curves, rank, reveal, CurveInput, THRESHOLDS, TOP_K};
use cig_core::model::{LinearBagModel, MilModel, ModelConfig};
use cig_core::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

proptest! {
    #[test]
    fn bins_are_well_formed(n in 1usize..3000) {
        let bins = info_bins(n);
        let ks = bins.ks();
        prop_assert!(ks.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ks[0] >= 1);
        prop_assert_eq!(*ks.last().unwrap(), n);
        for k in TOP_K.iter().filter(|&&k| k <= n) {
            prop_assert!(ks.contains(k));
        }
        for t in THRESHOLDS {
            // Oracle: smallest integer k with k >= t·n, computed in exact rationals.
            let num = (t * 100.0).round() as usize;
            let k = (num * n).div_ceil(100).max(1);
            prop_assert!(ks.contains(&k), "t={} n={} k={}", t, n, k);
        }
    }

    #[test]
    fn auc_is_monotone(base in proptest::collection::vec(0.0f64..1.0, 1..40), bumps in proptest::collection::vec(0.0f64..1.0, 40)) {
        let upper: Vec<f64> = base.iter().zip(&bumps).map(|(v, b)| (v + b).min(1.0)).collect();
        prop_assert!(auc(&upper) >= auc(&base));
        prop_assert!((0.0..=1.0).contains(&auc(&base)));
    }

    #[test]
    fn reveal_full_is_identity(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_normal(&[n, 3], 1.0, &mut rng);
        let c = random_normal(&[n, 3], 1.0, &mut rng);
        let s = random_normal(&[n], 1.0, &mut rng).into_data();
        let order = rank(&s);
        prop_assert_eq!(reveal(&t, &c, &order, n).unwrap(), t.clone());
        prop_assert_eq!(reveal(&t, &c, &order, 0).unwrap(), c.clone());
        let one = reveal(&t, &c, &order, 1).unwrap();
        let top = order[0];
        for k in 0..n {
            prop_assert_eq!(one.row(k), if k == top { t.row(k) } else { c.row(k) });
        }
    }

    #[test]
    fn curves_ignore_patch_order(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MilModel::init(ModelConfig { input_dim: 4, hidden: vec![6], attention_dim: 3, n_classes: 2 }, seed).unwrap();
        let t = random_normal(&[n, 4], 1.0, &mut rng);
        let c = random_normal(&[n, 4], 1.0, &mut rng);
        let s = random_normal(&[n], 1.0, &mut rng).into_data();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (tp, cp) = (permute_rows(&t, &perm), permute_rows(&c, &perm));
        let sp: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
        let bins = info_bins(n);
        let input = CurveInput { slide_id: "s", method: Method::Cig, label: 1, target: &t, control: &c, saliency: &s };
        let permuted = CurveInput { target: &tp, control: &cp, saliency: &sp, ..input };
        let (a1, s1) = mil_curves(&model, &input, &bins).unwrap();
        let (a2, s2) = mil_curves(&model, &permuted, &bins).unwrap();
        prop_assert_eq!(a1.values, a2.values);
        prop_assert_eq!(s1.values, s2.values);
    }

    #[test]
    fn constant_model_gives_identical_curves(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = LinearBagModel::new(Tensor::zeros(&[2, 3]), Tensor::vector(vec![0.2, -0.1])).unwrap();
        let t = random_normal(&[n, 3], 1.0, &mut rng);
        let c = random_normal(&[n, 3], 1.0, &mut rng);
        let bins = info_bins(n);
        let mut seen = None;
        for _ in 0..3 {
            let s = random_normal(&[n], 1.0, &mut rng).into_data();
            let input = CurveInput { slide_id: "s", method: Method::Random, label: 0, target: &t, control: &c, saliency: &s };
            let (a, sic) = mil_curves(&model, &input, &bins).unwrap();
            let cur = (a.values, sic.values);
            if let Some(prev) = &seen {
                prop_assert_eq!(prev, &cur);
            }
            seen = Some(cur);
        }
    }
}

#[test]
fn constant_saliency_uses_index_order() {
    let model = LinearBagModel::without_bias(Tensor::from_rows(&[[-1.0], [1.0]]).unwrap());
    let t = Tensor::matrix(3, 1, vec![3.0, 3.0, 3.0]).unwrap();
    let c = Tensor::matrix(3, 1, vec![-2.0, -2.0, -2.0]).unwrap();
    let s = [0.5; 3];
    let input = CurveInput {
        slide_id: "s",
        method: Method::Random,
        label: 1,
        target: &t,
        control: &c,
        saliency: &s,
    };
    let (a, _) = mil_curves(&model, &input, &info_bins(3)).unwrap();
    // Means after revealing k rows: -1/3, 4/3, 3.
    assert_eq!(a.values, vec![0.0, 1.0, 1.0]);
    assert_eq!(rank(&s), vec![0, 1, 2]);
}
