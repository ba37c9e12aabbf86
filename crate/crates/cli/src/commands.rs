use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use cig_core::attribution::{
    cig_with, patch_saliency, read_attribution, run_method, write_attribution, write_saliency_csv, AttributionResult,
    Method, PathSpec,
};
use cig_core::axioms::run_axioms;
use cig_core::baseline::ReferencePool;
use cig_core::data::{generate_synthetic, read_bag, Dataset, DatasetManifest, FeatureBag, Split};
use cig_core::eval::{evaluate, pool_for_class, prepare_slide};
use cig_core::model::{accuracy, load_checkpoint, save_checkpoint, train, MilModel, ModelConfig, TrainingMetadata};
use cig_core::{atomic_write, Error};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::heatmap::render_heatmap;
use crate::CliError;

type CmdResult = Result<(), CliError>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn load_model(cfg: &RunConfig, dataset: &Dataset) -> Result<MilModel, CliError> {
    let model = load_checkpoint(&cfg.paths.checkpoint)?.model;
    if dataset.dim() != Some(model.input_dim()) {
        return Err(Error::Dataset(format!(
            "checkpoint expects {} features but the dataset has {:?}",
            model.input_dim(),
            dataset.dim()
        ))
        .into());
    }
    Ok(model)
}

pub fn cmd_synth(cfg: &RunConfig) -> CmdResult {
    let dataset = generate_synthetic(&cfg.synth)?;
    dataset.write(&cfg.paths.dataset)?;
    let m = dataset.manifest();
    println!(
        "wrote {} slides ({} train / {} val / {} test) to {}",
        m.slides.len(),
        m.slides_in(Split::Train).count(),
        m.slides_in(Split::Val).count(),
        m.slides_in(Split::Test).count(),
        cfg.paths.dataset.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainLog<'a> {
    model: &'a ModelConfig,
    history: &'a [cig_core::model::EpochStats],
    accuracy: BTreeMap<Split, f64>,
}

pub fn cmd_train(cfg: &RunConfig) -> CmdResult {
    let dataset = Dataset::load(&cfg.paths.dataset)?;
    let dim = dataset
        .dim()
        .ok_or_else(|| Error::Dataset("dataset has no slides".into()))?;
    let model_cfg = cfg
        .model
        .clone()
        .unwrap_or_else(|| ModelConfig::desk(dim, dataset.class_count()));
    let bags: Vec<FeatureBag> = dataset.split_bags(Split::Train).into_iter().cloned().collect();
    let (model, history) = train(&bags, &model_cfg, &cfg.train)?;
    let metadata = TrainingMetadata {
        seed: cfg.train.seed,
        epochs: cfg.train.epochs as u32,
        dropout: cfg.train.dropout as f32,
        final_losses: history.iter().map(|h| h.loss as f32).collect(),
    };
    save_checkpoint(&model, &metadata, &cfg.paths.checkpoint)?;

    let mut acc = BTreeMap::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let bags: Vec<FeatureBag> = dataset.split_bags(split).into_iter().cloned().collect();
        if !bags.is_empty() {
            acc.insert(split, accuracy(&model, &bags)?);
        }
    }
    write_json(
        &cfg.paths.output.join("train.json"),
        &TrainLog {
            model: &model_cfg,
            history: &history,
            accuracy: acc.clone(),
        },
    )?;
    let mut line = format!("saved {}", cfg.paths.checkpoint.display());
    for (split, a) in &acc {
        let _ = write!(line, "; {:?} accuracy {:.3}", split, a);
    }
    println!("{}", line);
    Ok(())
}

struct SlideAttributions<'a> {
    bag: &'a FeatureBag,
    results: Vec<AttributionResult>,
    steps: Vec<(f64, Vec<f64>)>,
}

fn attribute_slide<'a>(
    cfg: &RunConfig,
    model: &MilModel,
    bag: &'a FeatureBag,
    pool: &ReferencePool,
    emit_steps: bool,
) -> Result<SlideAttributions<'a>, Error> {
    let setup = prepare_slide(bag, pool, &cfg.eval)?;
    let settings = cfg.eval.settings();
    let mut steps = Vec::new();
    let mut results = Vec::with_capacity(cfg.eval.methods.len());
    for &method in &cfg.eval.methods {
        let result = if method == Method::Cig && emit_steps {
            let path = PathSpec::with(
                setup.input.clone(),
                setup.baseline.clone(),
                settings.steps,
                settings.rule,
            )?;
            let mut failure = None;
            let r = cig_with(
                model,
                &path,
                settings.cig_variant,
                &mut |alpha, term| match patch_saliency(term) {
                    Ok(s) => steps.push((alpha, s)),
                    Err(e) => failure = Some(e),
                },
            )?;
            if let Some(e) = failure {
                return Err(e);
            }
            r
        } else {
            run_method(
                method,
                model,
                &setup.input,
                &setup.baseline,
                Some(pool),
                &settings,
                setup.seed,
            )?
        };
        results.push(result.with_baseline_ref(format!("pool/class_{}", bag.label)));
    }
    Ok(SlideAttributions { bag, results, steps })
}

pub fn cmd_attribute(cfg: &RunConfig, slide_ids: &[String], emit_steps: bool) -> CmdResult {
    if emit_steps && !cfg.eval.methods.contains(&Method::Cig) {
        return Err(CliError::config("--emit-steps", "requires cig among the methods"));
    }
    let dataset = Dataset::load(&cfg.paths.dataset)?;
    let model = load_model(cfg, &dataset)?;
    let selected: Vec<&FeatureBag> = if slide_ids.is_empty() {
        dataset
            .split_bags(cfg.eval.split)
            .into_iter()
            .filter(|b| b.label != 0)
            .collect()
    } else {
        slide_ids
            .iter()
            .map(|id| {
                dataset
                    .bags()
                    .iter()
                    .find(|b| &b.slide_id == id)
                    .ok_or_else(|| CliError::config("--slide", format!("no slide named `{}`", id)))
            })
            .collect::<Result<_, _>>()?
    };
    if selected.is_empty() {
        return Err(Error::Evaluation("no slides selected".into()).into());
    }

    let mut labels: Vec<usize> = selected.iter().map(|b| b.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let pools: BTreeMap<usize, ReferencePool> = labels
        .into_iter()
        .map(|c| Ok((c, pool_for_class(&dataset, c, &cfg.eval)?)))
        .collect::<Result<_, Error>>()?;
    let computed: Vec<SlideAttributions> = selected
        .par_iter()
        .map(|bag| attribute_slide(cfg, &model, bag, &pools[&bag.label], emit_steps))
        .collect::<Result<_, _>>()?;

    let root = cfg.paths.output.join("attributions");
    let mut index = String::from("slide_id,method,target_class,sum,residual\n");
    for slide in &computed {
        let dir = root.join(&slide.bag.slide_id);
        for r in &slide.results {
            let name = r.method.name();
            write_attribution(r, &dir.join(format!("{}.attr", name)))?;
            let mut csv = Vec::new();
            write_saliency_csv(&r.saliency, slide.bag.coords(), &mut csv)?;
            atomic_write(&dir.join(format!("{}.csv", name)), &csv)?;
            render_heatmap(slide.bag.coords(), &r.saliency, &cfg.heatmap)?
                .save(&dir.join(format!("{}.ppm", name)), cfg.heatmap.png)?;
            let opt = |v: Option<String>| v.unwrap_or_default();
            let _ = writeln!(
                index,
                "{},{},{},{},{}",
                slide.bag.slide_id,
                name,
                opt(r.target_class.map(|c| c.to_string())),
                r.sum(),
                opt(r.residual.map(|v| v.to_string()))
            );
        }
        if !slide.steps.is_empty() {
            let steps_dir = dir.join("cig_steps");
            let mut alphas = String::from("step,alpha\n");
            for (j, (alpha, s)) in slide.steps.iter().enumerate() {
                render_heatmap(slide.bag.coords(), s, &cfg.heatmap)?
                    .save(&steps_dir.join(format!("step_{:03}.ppm", j)), cfg.heatmap.png)?;
                let _ = writeln!(alphas, "{},{}", j, alpha);
            }
            atomic_write(&steps_dir.join("alphas.csv"), alphas.as_bytes())?;
        }
    }
    atomic_write(&root.join("index.csv"), index.as_bytes())?;
    println!(
        "attributed {} slides with {} methods under {}",
        computed.len(),
        cfg.eval.methods.len(),
        root.display()
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig) -> CmdResult {
    let dataset = Dataset::load(&cfg.paths.dataset)?;
    let model = load_model(cfg, &dataset)?;
    let report = evaluate(&dataset, &model, &cfg.eval)?;
    report.write(&cfg.paths.output)?;
    for pool in &report.pools {
        if let Some(w) = &pool.warning {
            eprintln!("warning: pool for class {}: {}", pool.class, w);
        }
    }
    print!("{}", report.render_table());
    Ok(())
}

pub fn cmd_render(cfg: &RunConfig, attribution: &Path, slide_id: &str, out: Option<&Path>) -> CmdResult {
    let stored = read_attribution(attribution)?;
    let manifest = DatasetManifest::read(&cfg.paths.dataset.join("manifest.json"))?;
    let record = manifest
        .slides
        .iter()
        .find(|r| r.slide_id == slide_id)
        .ok_or_else(|| CliError::config("--slide", format!("no slide named `{}`", slide_id)))?;
    let bag = read_bag(&cfg.paths.dataset.join(&record.path))?;
    let heatmap = render_heatmap(bag.coords(), &stored.saliency, &cfg.heatmap)?;
    let default_path = cfg
        .paths
        .output
        .join("heatmaps")
        .join(format!("{}_{}.ppm", slide_id, stored.method.name()));
    let path = out.unwrap_or(&default_path);
    heatmap.save(path, cfg.heatmap.png)?;
    println!(
        "wrote {}×{} heatmap to {}",
        heatmap.width,
        heatmap.height,
        path.display()
    );
    Ok(())
}

pub fn cmd_axioms(cfg: &RunConfig) -> CmdResult {
    let report = run_axioms(cfg.axiom_seed)?;
    let text = report.render();
    print!("{}", text);
    atomic_write(&cfg.paths.output.join("axioms.txt"), text.as_bytes())?;
    if report.all_passed() {
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(CliError::Failed(format!("{} axiom check(s) failed", failed)))
    }
}
