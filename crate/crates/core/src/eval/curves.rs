use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::Method;
use crate::autodiff::{evaluate, DifferentiableFn};
use crate::error::{Error, Result};
use crate::eval::bins::InfoBins;
use crate::model::Prediction;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurveKind {
    /// 1 when the revealed bag is classified correctly, else 0.
    #[serde(rename = "mil-aic")]
    Aic,
    /// Softmax confidence of the true class.
    #[serde(rename = "mil-sic")]
    Sic,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Aic => "mil-aic",
            CurveKind::Sic => "mil-sic",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub slide_id: String,
    pub method: Method,
    pub kind: CurveKind,
    pub bins: InfoBins,
    pub values: Vec<f64>,
    pub auc: f64,
}

impl EvalCurve {
    /// `bin,k,value` per bin, values at full round-trip precision.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin", "k", "value"])?;
        for (i, (k, v)) in self.bins.ks().iter().zip(&self.values).enumerate() {
            w.write_record([i.to_string(), k.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Patch indices by descending saliency, ties by ascending index.
pub fn rank(saliency: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..saliency.len()).collect();
    order.sort_by(|&a, &b| saliency[b].total_cmp(&saliency[a]).then(a.cmp(&b)));
    order
}

/// The control bag with the target's rows restored at the first `k` positions of `order`.
pub fn reveal(target: &Tensor, control: &Tensor, order: &[usize], k: usize) -> Result<Tensor> {
    target.expect_same_shape(control)?;
    if target.rank() != 2 {
        return Err(Error::shape("[n, d]", target.shape()));
    }
    let (n, d) = (target.rows(), target.cols());
    if order.len() != n {
        return Err(Error::param(
            "order",
            format!("expected a permutation of {} indices", n),
        ));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::param("order", "not a permutation"));
        }
    }
    if k > n {
        return Err(Error::param("k", format!("{} exceeds the bag size {}", k, n)));
    }
    let mut out = control.clone();
    for &i in &order[..k] {
        out.data_mut()[i * d..(i + 1) * d].copy_from_slice(target.row(i));
    }
    Ok(out)
}

/// Trapezoidal area over unit-spaced bins, normalized to `[0, 1]` for values in `[0, 1]`.
pub fn auc(values: &[f64]) -> f64 {
    match values.len() {
        0 => f64::NAN,
        1 => values[0],
        b => {
            let area: f64 = values.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
            area / (b - 1) as f64
        }
    }
}

/// Reading of "uniform scores" used for the random baseline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomMode {
    /// I.i.d. `U(0, 1)` scores.
    #[default]
    Uniform,
    /// Every patch scores `0.5`, so ranking falls back to patch index.
    Constant,
}

pub fn random_saliency(n: usize, seed: u64, mode: RandomMode) -> Vec<f64> {
    match mode {
        RandomMode::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.sample(rand::distr::Open01)).collect()
        }
        RandomMode::Constant => vec![0.5; n],
    }
}

/// One slide's inputs to the insertion curves.
#[derive(Clone, Copy, Debug)]
pub struct CurveInput<'a> {
    pub slide_id: &'a str,
    pub method: Method,
    pub label: usize,
    pub target: &'a Tensor,
    pub control: &'a Tensor,
    pub saliency: &'a [f64],
}

/// MIL-AIC and MIL-SIC from one pass over the bins.
pub fn mil_curves<F: DifferentiableFn + ?Sized>(
    f: &F,
    input: &CurveInput<'_>,
    bins: &InfoBins,
) -> Result<(EvalCurve, EvalCurve)> {
    if input.saliency.len() != input.target.rows() {
        return Err(Error::shape(
            format!("{} saliency scores", input.target.rows()),
            &[input.saliency.len()],
        ));
    }
    let order = rank(input.saliency);
    let mut aic = Vec::with_capacity(bins.len());
    let mut sic = Vec::with_capacity(bins.len());
    for &k in bins.ks() {
        let bag = reveal(input.target, input.control, &order, k)?;
        let logits = evaluate(f, &bag)?;
        if input.label >= logits.len() {
            return Err(Error::param("label", format!("class {} out of range", input.label)));
        }
        let p = Prediction::from_logits(logits.data());
        aic.push(if p.class == input.label { 1.0 } else { 0.0 });
        sic.push(p.confidence_of(input.label));
    }
    let make = |kind, values: Vec<f64>| EvalCurve {
        slide_id: input.slide_id.to_string(),
        method: input.method,
        kind,
        bins: bins.clone(),
        auc: auc(&values),
        values,
    };
    Ok((make(CurveKind::Aic, aic), make(CurveKind::Sic, sic)))
}

pub fn mil_aic<F: DifferentiableFn + ?Sized>(f: &F, input: &CurveInput<'_>, bins: &InfoBins) -> Result<EvalCurve> {
    mil_curves(f, input, bins).map(|c| c.0)
}

pub fn mil_sic<F: DifferentiableFn + ?Sized>(f: &F, input: &CurveInput<'_>, bins: &InfoBins) -> Result<EvalCurve> {
    mil_curves(f, input, bins).map(|c| c.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::info_bins;
    use crate::model::LinearBagModel;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[1.0; 7]), 1.0);
        assert_eq!(auc(&[0.0, 1.0]), 0.5);
        let ramp: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        assert!((auc(&ramp) - 0.5).abs() < 1e-15);
        assert_eq!(auc(&[0.3]), 0.3);
    }

    #[test]
    fn rank_breaks_ties_by_index() {
        assert_eq!(rank(&[0.1, 0.9, 0.5, 0.9]), vec![1, 3, 2, 0]);
        assert_eq!(rank(&[0.5; 4]), vec![0, 1, 2, 3]);
    }

    #[test]
    fn reveal_examples() {
        let t = Tensor::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
        let c = Tensor::zeros(&[3, 2]);
        let order = rank(&[0.2, 0.7, 0.1]);
        assert_eq!(reveal(&t, &c, &order, 0).unwrap(), c);
        assert_eq!(reveal(&t, &c, &order, 3).unwrap(), t);
        let one = reveal(&t, &c, &order, 1).unwrap();
        assert_eq!(one.data(), &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            reveal(&t, &c, &order, 4),
            Err(Error::Parameter { name: "k", .. })
        ));
        assert!(reveal(&t, &c, &[0, 0, 1], 1).is_err());
    }

    #[test]
    fn random_scores() {
        let a = random_saliency(100, 3, RandomMode::Uniform);
        assert_eq!(a, random_saliency(100, 3, RandomMode::Uniform));
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_ne!(rank(&a), rank(&random_saliency(100, 4, RandomMode::Uniform)));
        assert_eq!(random_saliency(3, 0, RandomMode::Constant), vec![0.5; 3]);
    }

    #[test]
    fn curves_on_linear_model() {
        // Class 1 wins once the mean of column 0 exceeds zero.
        let w = Tensor::from_rows(&[[-1.0, 0.0], [1.0, 0.0]]).unwrap();
        let model = LinearBagModel::without_bias(w);
        let target = Tensor::from_rows(&[[5.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]).unwrap();
        let control = Tensor::from_rows(&[[-1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let saliency = [1.0, 0.0, 0.0, 0.0];
        let input = CurveInput {
            slide_id: "s",
            method: Method::Cig,
            label: 1,
            target: &target,
            control: &control,
            saliency: &saliency,
        };
        let bins = info_bins(4);
        let (aic, sic) = mil_curves(&model, &input, &bins).unwrap();
        // k=1: mean x0 = (5 − 3)/4 > 0.
        assert_eq!(aic.values, vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(aic.auc, 1.0);
        let full = Prediction::from_logits(evaluate(&model, &target).unwrap().data());
        assert_eq!(*sic.values.last().unwrap(), full.confidence_of(1));
        assert!(sic.values.iter().all(|v| (0.0..=1.0).contains(v)));

        let mut buf = Vec::new();
        aic.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("bin,k,value\n0,1,1\n"));
    }
}
