use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{run_method, CigVariant, Method, MethodSettings, QuadratureRule};
use crate::autodiff::DifferentiableFn;
use crate::baseline::{build_reference_pool, BaselineKind, PoolConfig, ReferencePool};
use crate::binfmt::atomic_write;
use crate::data::{Dataset, FeatureBag, Split};
use crate::error::{Error, Result};
use crate::eval::bins::{info_bins_with, InfoBins, THRESHOLDS};
use crate::eval::curves::{mil_curves, CurveInput, EvalCurve, RandomMode};
use crate::seed::derive;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub steps: usize,
    pub rule: QuadratureRule,
    pub eg_samples: usize,
    pub cig_variant: CigVariant,
    pub random_mode: RandomMode,
    pub baseline: BaselineKind,
    pub pool: PoolConfig,
    pub thresholds: Vec<f64>,
    /// Split whose positive-class slides are evaluated.
    pub split: Split,
    /// Split the reference pools are drawn from.
    pub pool_split: Split,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec![
                Method::Gradient,
                Method::Ig,
                Method::Eg,
                Method::Idg,
                Method::Cig,
                Method::Random,
            ],
            steps: 50,
            rule: QuadratureRule::Trapezoid,
            eg_samples: 50,
            cig_variant: CigVariant::Interpolated,
            random_mode: RandomMode::Uniform,
            baseline: BaselineKind::Opposite,
            pool: PoolConfig::default(),
            thresholds: THRESHOLDS.to_vec(),
            split: Split::Test,
            pool_split: Split::Train,
            seed: 11,
        }
    }
}

impl EvalConfig {
    pub fn settings(&self) -> MethodSettings {
        MethodSettings {
            steps: self.steps,
            rule: self.rule,
            eg_samples: self.eg_samples,
            cig_variant: self.cig_variant,
            random_mode: self.random_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::param("methods", "list is empty"));
        }
        if self.steps == 0 {
            return Err(Error::param("steps", "need at least one step"));
        }
        if self.eg_samples == 0 {
            return Err(Error::param("eg_samples", "need at least one sample"));
        }
        self.rule.nodes(self.steps)?;
        info_bins_with(1, &self.thresholds)?;
        Ok(())
    }
}

/// Per-slide quantities shared by every method.
#[derive(Clone, Debug)]
pub struct SlideSetup {
    pub seed: u64,
    pub input: Tensor,
    /// Features occupying unrevealed positions.
    pub control: Tensor,
    /// Reference endpoint for path methods.
    pub baseline: Tensor,
    pub bins: InfoBins,
}

/// Seeds, control and baseline for one slide; identical across methods.
pub fn prepare_slide(bag: &FeatureBag, pool: &ReferencePool, config: &EvalConfig) -> Result<SlideSetup> {
    let seed = derive(config.seed, &bag.slide_id);
    Ok(SlideSetup {
        seed,
        input: bag.to_tensor(),
        control: pool.sample(bag.len(), derive(seed, "control"))?,
        baseline: config.baseline.build(pool, bag.len(), derive(seed, "baseline"))?,
        bins: info_bins_with(bag.len(), &config.thresholds)?,
    })
}

/// The reference pool for slides of `class`, from `pool_split` slides of other classes.
pub fn pool_for_class(dataset: &Dataset, class: usize, config: &EvalConfig) -> Result<ReferencePool> {
    let candidates: Vec<&FeatureBag> = dataset
        .split_bags(config.pool_split)
        .into_iter()
        .filter(|b| b.label != class)
        .collect();
    build_reference_pool(
        &candidates,
        class,
        &config.pool,
        derive(config.seed, &format!("pool/{}", class)),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideCurves {
    pub slide_id: String,
    pub label: usize,
    pub method: Method,
    pub aic: EvalCurve,
    pub sic: EvalCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub method: Method,
    pub class: usize,
    pub class_name: String,
    pub n_slides: usize,
    pub aic_mean: f64,
    pub aic_std: f64,
    pub sic_mean: f64,
    pub sic_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub class: usize,
    pub seed: u64,
    pub per_slide: usize,
    pub rows: usize,
    pub source_slides: Vec<String>,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideRecordOut {
    pub slide_id: String,
    pub label: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub summaries: Vec<ClassSummary>,
    pub slides: Vec<SlideRecordOut>,
    pub pools: Vec<PoolRecord>,
    /// Slide-major, methods in config order.
    #[serde(skip)]
    pub curves: Vec<SlideCurves>,
    #[serde(skip)]
    pub pool_objects: Vec<ReferencePool>,
}

/// Mean and population standard deviation, summed in slice order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every configured method on the positive-class slides of
/// `config.split` and aggregates per-class AUC statistics.
pub fn evaluate<F: DifferentiableFn + ?Sized>(dataset: &Dataset, model: &F, config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let eligible: Vec<&FeatureBag> = dataset
        .split_bags(config.split)
        .into_iter()
        .filter(|b| b.label != 0)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Evaluation(
            "no positive-class slides in the evaluation split".into(),
        ));
    }
    let mut classes: Vec<usize> = eligible.iter().map(|b| b.label).collect();
    classes.sort_unstable();
    classes.dedup();
    let pools: Vec<ReferencePool> = classes
        .iter()
        .map(|&c| pool_for_class(dataset, c, config))
        .collect::<Result<_>>()?;
    let settings = config.settings();

    let per_slide: Vec<Vec<SlideCurves>> = eligible
        .par_iter()
        .map(|bag| {
            let pool = &pools[classes.binary_search(&bag.label).expect("class has a pool")];
            let setup = prepare_slide(bag, pool, config)?;
            config
                .methods
                .iter()
                .map(|&method| {
                    let result = run_method(
                        method,
                        model,
                        &setup.input,
                        &setup.baseline,
                        Some(pool),
                        &settings,
                        setup.seed,
                    )?;
                    let input = CurveInput {
                        slide_id: &bag.slide_id,
                        method,
                        label: bag.label,
                        target: &setup.input,
                        control: &setup.control,
                        saliency: &result.saliency,
                    };
                    let (aic, sic) = mil_curves(model, &input, &setup.bins)?;
                    Ok(SlideCurves {
                        slide_id: bag.slide_id.clone(),
                        label: bag.label,
                        method,
                        aic,
                        sic,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let curves: Vec<SlideCurves> = per_slide.into_iter().flatten().collect();

    let summaries = summarize(&curves, &config.methods, &classes, &dataset.manifest().class_names);
    Ok(EvalReport {
        config: config.clone(),
        summaries,
        slides: eligible
            .iter()
            .map(|b| SlideRecordOut {
                slide_id: b.slide_id.clone(),
                label: b.label,
                seed: derive(config.seed, &b.slide_id),
            })
            .collect(),
        pools: classes
            .iter()
            .zip(&pools)
            .map(|(&class, p)| PoolRecord {
                class,
                seed: p.seed(),
                per_slide: p.per_slide(),
                rows: p.len(),
                source_slides: p.source_slides().iter().map(|s| s.slide_id.clone()).collect(),
                warning: p.warning().map(str::to_string),
            })
            .collect(),
        curves,
        pool_objects: pools,
    })
}

/// Per (method, class) statistics over slide AUCs, in curve order.
pub fn summarize(
    curves: &[SlideCurves],
    methods: &[Method],
    classes: &[usize],
    class_names: &[String],
) -> Vec<ClassSummary> {
    let mut out = Vec::new();
    for &method in methods {
        for &class in classes {
            let sel: Vec<&SlideCurves> = curves
                .iter()
                .filter(|c| c.method == method && c.label == class)
                .collect();
            let (aic_mean, aic_std) = mean_std(&sel.iter().map(|c| c.aic.auc).collect::<Vec<_>>());
            let (sic_mean, sic_std) = mean_std(&sel.iter().map(|c| c.sic.auc).collect::<Vec<_>>());
            out.push(ClassSummary {
                method,
                class,
                class_name: class_names.get(class).cloned().unwrap_or_else(|| class.to_string()),
                n_slides: sel.len(),
                aic_mean,
                aic_std,
                sic_mean,
                sic_std,
            });
        }
    }
    out
}

impl EvalReport {
    pub fn summary(&self, method: Method, class: usize) -> Option<&ClassSummary> {
        self.summaries.iter().find(|s| s.method == method && s.class == class)
    }

    /// Aligned plain-text table, one row per method and class.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<18} {:<12} {:>6}  {:<15}  {:<15}",
            "Method", "Class", "Slides", "MIL-AIC", "MIL-SIC"
        );
        for r in &self.summaries {
            let _ = writeln!(
                s,
                "{:<18} {:<12} {:>6}  {:<15}  {:<15}",
                r.method.label(),
                r.class_name,
                r.n_slides,
                format!("{:.3} ± {:.3}", r.aic_mean, r.aic_std),
                format!("{:.3} ± {:.3}", r.sic_mean, r.sic_std),
            );
        }
        s
    }

    /// Writes `summary.json`, `table.txt`, one curve CSV per
    /// (method, kind, slide) under `curves/` and pool provenance under `pools/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for c in &self.curves {
            for curve in [&c.aic, &c.sic] {
                let mut buf = Vec::new();
                curve.write_csv(&mut buf)?;
                let path = dir
                    .join("curves")
                    .join(c.method.name())
                    .join(curve.kind.name())
                    .join(format!("{}.csv", c.slide_id));
                atomic_write(&path, &buf)?;
            }
        }
        for (record, pool) in self.pools.iter().zip(&self.pool_objects) {
            let mut buf = Vec::new();
            pool.write_provenance_csv(&mut buf)?;
            atomic_write(&dir.join("pools").join(format!("class_{}.csv", record.class)), &buf)?;
        }
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        atomic_write(&dir.join("summary.json"), &json)?;
        atomic_write(&dir.join("table.txt"), self.render_table().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        let bad = EvalConfig {
            methods: vec![],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = EvalConfig {
            rule: QuadratureRule::Simpson,
            steps: 3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
