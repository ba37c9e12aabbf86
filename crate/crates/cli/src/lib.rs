//! The `cig` command line: synthesize bags, train a MIL classifier,
//! attribute and evaluate, render heatmaps, and run the axiom battery.

pub mod commands;
pub mod config;
pub mod heatmap;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Paths, RunConfig, THREADS_ENV};
pub use heatmap::{render_heatmap, Colormap, Heatmap, HeatmapSpec};

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration; `field` names the offending key or flag.
    Config {
        field: String,
        reason: String,
    },
    Run(cig_core::Error),
    /// The command ran but its checks did not pass.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn config(field: &str, reason: impl fmt::Display) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { field, reason } => write!(f, "config error in `{}`: {}", field, reason),
            CliError::Run(e) => write!(f, "{}", e),
            CliError::Failed(msg) => write!(f, "{}", msg),
        }
    }
}

impl std::error::Error for CliError {}

impl From<cig_core::Error> for CliError {
    fn from(e: cig_core::Error) -> Self {
        CliError::Run(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cig",
    version,
    about = "Contrastive integrated gradients for MIL bag classifiers"
)]
pub struct Cli {
    /// JSON run configuration; flags below override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Seed of the stage the command runs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted tumor regions.
    Synth(SynthArgs),
    /// Train the attention MIL classifier on the training split.
    Train(TrainArgs),
    /// Write per-slide attributions, saliency CSVs and heatmaps.
    Attribute(AttributeArgs),
    /// Run the MIL-AIC / MIL-SIC protocol and print the summary table.
    Eval(EvalArgs),
    /// Render a stored attribution as a heatmap.
    Render(RenderArgs),
    /// Check the attribution axioms on closed-form and random fixtures.
    Axioms,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub slides_per_class: Option<usize>,
    /// Patches per slide (sets both bounds).
    #[arg(long)]
    pub patches: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MethodArgs {
    /// Comma-separated subset of gradient,ig,eg,idg,cig,random.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// trapezoid, left, right, midpoint or simpson.
    #[arg(long)]
    pub rule: Option<String>,
}

#[derive(Debug, Args)]
pub struct HeatArgs {
    #[arg(long, value_enum)]
    pub colormap: Option<Colormap>,
    #[arg(long)]
    pub cell_size: Option<u32>,
    /// Also write PNG copies of every heatmap.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub methods: MethodArgs,
    #[command(flatten)]
    pub heatmap: HeatArgs,
    /// Slides to attribute; defaults to the positive slides of the evaluation split.
    #[arg(long = "slide")]
    pub slides: Vec<String>,
    /// Write one heatmap per interpolation step of the CIG path.
    #[arg(long)]
    pub emit_steps: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub methods: MethodArgs,
    /// Reference slides per pool.
    #[arg(long)]
    pub pool_slides: Option<usize>,
    #[arg(long)]
    pub per_slide: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// An ATTR1 file written by `attribute`.
    #[arg(long)]
    pub attribution: PathBuf,
    /// Slide whose patch coordinates place the cells.
    #[arg(long)]
    pub slide: String,
    /// Destination PPM; defaults to `<output>/heatmaps/<slide>_<method>.ppm`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub heatmap: HeatArgs,
}

fn apply_methods(cfg: &mut RunConfig, args: &MethodArgs) -> Result<(), CliError> {
    if let Some(list) = &args.methods {
        cfg.eval.methods = list
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::config("--methods", e))?;
    }
    if let Some(steps) = args.steps {
        cfg.eval.steps = steps;
    }
    if let Some(rule) = &args.rule {
        cfg.eval.rule = rule.parse().map_err(|e| CliError::config("--rule", e))?;
    }
    Ok(())
}

fn apply_heatmap(cfg: &mut RunConfig, args: &HeatArgs) {
    if let Some(c) = args.colormap {
        cfg.heatmap.colormap = c;
    }
    if let Some(c) = args.cell_size {
        cfg.heatmap.cell_size = c;
    }
    cfg.heatmap.png |= args.png;
}

/// The config file (or defaults) with every flag applied.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &cli.dataset {
        cfg.paths.dataset = p.clone();
    }
    if let Some(p) = &cli.checkpoint {
        cfg.paths.checkpoint = p.clone();
    }
    if let Some(p) = &cli.output {
        cfg.paths.output = p.clone();
    }
    match &cli.command {
        Command::Synth(a) => {
            if let Some(s) = cli.seed {
                cfg.synth.seed = s;
            }
            if let Some(v) = a.slides_per_class {
                cfg.synth.slides_per_class = v;
            }
            if let Some(v) = a.patches {
                cfg.synth.patches_min = v;
                cfg.synth.patches_max = v;
            }
            if let Some(v) = a.dim {
                cfg.synth.dim = v;
            }
        }
        Command::Train(a) => {
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            if let Some(v) = a.epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = a.learning_rate {
                cfg.train.learning_rate = v;
            }
        }
        Command::Attribute(a) => {
            if let Some(s) = cli.seed {
                cfg.eval.seed = s;
            }
            apply_methods(&mut cfg, &a.methods)?;
            apply_heatmap(&mut cfg, &a.heatmap);
        }
        Command::Eval(a) => {
            if let Some(s) = cli.seed {
                cfg.eval.seed = s;
            }
            apply_methods(&mut cfg, &a.methods)?;
            if let Some(v) = a.pool_slides {
                cfg.eval.pool.n_slides = v;
            }
            if let Some(v) = a.per_slide {
                cfg.eval.pool.per_slide = Some(v);
            }
        }
        Command::Render(a) => apply_heatmap(&mut cfg, &a.heatmap),
        Command::Axioms => {
            if let Some(s) = cli.seed {
                cfg.axiom_seed = s;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Resolves the configuration and runs the command on a dedicated pool of
/// `threads` workers.
pub fn run(cli: &Cli, env_threads: Option<&str>) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let threads = cfg.resolved_threads(env_threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Failed(format!("cannot start worker threads: {}", e)))?;
    pool.install(|| match &cli.command {
        Command::Synth(_) => commands::cmd_synth(&cfg),
        Command::Train(_) => commands::cmd_train(&cfg),
        Command::Attribute(a) => commands::cmd_attribute(&cfg, &a.slides, a.emit_steps),
        Command::Eval(_) => commands::cmd_eval(&cfg),
        Command::Render(a) => commands::cmd_render(&cfg, &a.attribution, &a.slide, a.out.as_deref()),
        Command::Axioms => commands::cmd_axioms(&cfg),
    })
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 on failure, 2 on configuration or usage errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let env = std::env::var(THREADS_ENV).ok();
    match run(&cli, env.as_deref()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
