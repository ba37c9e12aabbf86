use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Node placement and weights for approximating `∫₀¹ g(α) dα` with `m` steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureRule {
    /// `α_j = j/m` for `j = 0..=m`, half weight at both ends.
    #[default]
    Trapezoid,
    /// `α_j = j/m` for `j = 0..m`.
    Left,
    /// `α_j = j/m` for `j = 1..=m`.
    Right,
    /// `α_j = (j + ½)/m` for `j = 0..m`.
    Midpoint,
    /// Composite Simpson over `j = 0..=m`; `m` must be even.
    Simpson,
}

impl QuadratureRule {
    pub const ALL: [QuadratureRule; 5] = [
        QuadratureRule::Trapezoid,
        QuadratureRule::Left,
        QuadratureRule::Right,
        QuadratureRule::Midpoint,
        QuadratureRule::Simpson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuadratureRule::Trapezoid => "trapezoid",
            QuadratureRule::Left => "left",
            QuadratureRule::Right => "right",
            QuadratureRule::Midpoint => "midpoint",
            QuadratureRule::Simpson => "simpson",
        }
    }

    /// `(α, weight)` pairs in ascending α. Weights sum to 1.
    pub fn nodes(self, m: usize) -> Result<Vec<(f64, f64)>> {
        if m == 0 {
            return Err(Error::param("steps", "need at least one step"));
        }
        let mf = m as f64;
        let h = 1.0 / mf;
        Ok(match self {
            QuadratureRule::Trapezoid => (0..=m)
                .map(|j| {
                    let w = if j == 0 || j == m { 0.5 * h } else { h };
                    (j as f64 / mf, w)
                })
                .collect(),
            QuadratureRule::Left => (0..m).map(|j| (j as f64 / mf, h)).collect(),
            QuadratureRule::Right => (1..=m).map(|j| (j as f64 / mf, h)).collect(),
            QuadratureRule::Midpoint => (0..m).map(|j| ((j as f64 + 0.5) / mf, h)).collect(),
            QuadratureRule::Simpson => {
                if !m.is_multiple_of(2) {
                    return Err(Error::param(
                        "steps",
                        format!("Simpson's rule needs an even step count, got {}", m),
                    ));
                }
                (0..=m)
                    .map(|j| {
                        let c = if j == 0 || j == m {
                            1.0
                        } else if j % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        (j as f64 / mf, c * h / 3.0)
                    })
                    .collect()
            }
        })
    }
}

impl std::str::FromStr for QuadratureRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QuadratureRule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::param("rule", format!("unknown quadrature rule `{}`", s)))
    }
}

/// A straight-line path from `baseline` to `input` and how to integrate along it.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSpec {
    pub input: Tensor,
    pub baseline: Tensor,
    pub steps: usize,
    pub rule: QuadratureRule,
}

impl PathSpec {
    pub const DEFAULT_STEPS: usize = 50;

    pub fn new(input: Tensor, baseline: Tensor) -> Result<Self> {
        Self::with(input, baseline, Self::DEFAULT_STEPS, QuadratureRule::Trapezoid)
    }

    pub fn with(input: Tensor, baseline: Tensor, steps: usize, rule: QuadratureRule) -> Result<Self> {
        let spec = Self {
            input,
            baseline,
            steps,
            rule,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("steps", "need at least one step"));
        }
        self.input.expect_same_shape(&self.baseline)
    }

    /// `x − x'`.
    pub fn delta(&self) -> Tensor {
        self.input
            .sub(&self.baseline)
            .expect("PathSpec endpoints share a shape")
    }

    pub fn point(&self, alpha: f64) -> Result<Tensor> {
        straight_line(&self.input, &self.baseline, alpha)
    }
}

/// `γ(α) = x' + α (x − x')`.
pub fn straight_line(x: &Tensor, baseline: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("must lie in [0, 1], got {}", alpha)));
    }
    baseline.zip_map(x, |b, v| b + alpha * (v - b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let x = Tensor::vector(vec![2.0, 4.0]);
        let b = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(straight_line(&x, &b, 0.0).unwrap(), b);
        assert_eq!(straight_line(&x, &b, 1.0).unwrap(), x);
        assert_eq!(straight_line(&x, &b, 0.5).unwrap().data(), &[1.0, 2.0]);
        assert!(straight_line(&x, &b, 1.5).is_err());
        assert!(straight_line(&x, &b, -0.1).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        for rule in QuadratureRule::ALL {
            for m in [2, 4, 50] {
                let total: f64 = rule.nodes(m).unwrap().iter().map(|n| n.1).sum();
                assert!((total - 1.0).abs() < 1e-12, "{:?} m={}", rule, m);
            }
        }
    }

    #[test]
    fn simpson_integrates_cubics() {
        let q: f64 = QuadratureRule::Simpson
            .nodes(4)
            .unwrap()
            .iter()
            .map(|&(a, w)| w * a * a * a)
            .sum();
        assert!((q - 0.25).abs() < 1e-15);
        assert!(QuadratureRule::Simpson.nodes(3).is_err());
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(QuadratureRule::Trapezoid.nodes(0).is_err());
        let t = Tensor::vector(vec![1.0]);
        assert!(PathSpec::with(t.clone(), t, 0, QuadratureRule::Left).is_err());
    }

    #[test]
    fn mismatched_endpoints_rejected() {
        let a = Tensor::vector(vec![1.0]);
        let b = Tensor::vector(vec![1.0, 2.0]);
        assert!(matches!(PathSpec::new(a, b), Err(Error::InputShape { .. })));
    }

    #[test]
    fn rule_names_parse() {
        for rule in QuadratureRule::ALL {
            assert_eq!(rule.name().parse::<QuadratureRule>().unwrap(), rule);
        }
        assert!("gauss".parse::<QuadratureRule>().is_err());
    }
}
