use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::layers::random_normal;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Seed for the fallback start vector, used only when the uniform start
/// lies in the null space of `W`.
const RESTART_SEED: u64 = 0x5bd1_e995;

/// Largest singular value of `w` by power iteration on `WᵀW`.
///
/// Starts from the all-equal unit vector and stops once successive
/// estimates agree to `tol` (relative to `max(σ, 1)`).
pub fn spectral_norm(w: &Tensor, max_iters: usize, tol: f64) -> Result<f64> {
    if w.is_empty() || w.rank() != 2 {
        return Err(Error::param("w", "expected a nonempty matrix"));
    }
    if max_iters == 0 {
        return Err(Error::param("max_iters", "must be at least 1"));
    }
    let n = w.cols();
    let wt = w.transpose();

    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    if w.matvec(&v)?.iter().all(|&x| x == 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(RESTART_SEED);
        let r = random_normal(&[n], 1.0, &mut rng);
        let norm = r.norm();
        v = r.data().iter().map(|x| x / norm).collect();
    }

    let mut estimate = f64::NAN;
    for _ in 0..max_iters {
        let u = w.matvec(&v)?;
        let sigma = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sigma == 0.0 {
            return Ok(0.0);
        }
        let z = wt.matvec(&u)?;
        let z_norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = z.iter().map(|x| x / z_norm).collect();
        if (sigma - estimate).abs() <= tol * sigma.max(1.0) {
            return Ok(sigma);
        }
        estimate = sigma;
    }
    Err(Error::Convergence {
        iterations: max_iters,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(w: &Tensor) -> f64 {
        spectral_norm(w, 10_000, 1e-13).unwrap()
    }

    #[test]
    fn diagonal() {
        assert!((norm(&Tensor::diag(&[1.0, 2.0])) - 2.0).abs() < 1e-10);
        assert!((norm(&Tensor::eye(3)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nilpotent_shift() {
        let w = Tensor::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert!((norm(&w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_start_in_null_space() {
        let w = Tensor::from_rows(&[[1.0, -1.0]]).unwrap();
        assert!((norm(&w) - 2f64.sqrt()).abs() < 1e-10);
        assert_eq!(norm(&Tensor::zeros(&[2, 3])), 0.0);
    }

    #[test]
    fn reports_non_convergence() {
        let w = Tensor::diag(&[1.0, 0.999]);
        match spectral_norm(&w, 2, 1e-15) {
            Err(Error::Convergence {
                iterations: 2,
                estimate,
            }) => assert!(estimate > 0.9),
            other => panic!("unexpected {:?}", other),
        }
        assert!(spectral_norm(&w, 0, 1e-6).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn homogeneous(seed in 0u64..10_000, c in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_normal(&[4, 3], 1.0, &mut rng);
            let a = norm(&w.scale(c));
            let b = c.abs() * norm(&w);
            prop_assert!((a - b).abs() <= 1e-8 * b.max(1.0));
        }
    }
}
