//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_grid, Stage, TrainConfig};
use crate::data::{self, Dataset, Subset};
use crate::eval::{evaluate, measure_latency, model_size_mb, EvalOptions};
use crate::grid::run_grid;
use crate::model::{build, Checkpoint, CidisConfig};
use crate::rng::Rng;
use crate::synth::{generate_dataset, Domain, GenOptions, ImageFormat};
use crate::tensor::Tensor;
use crate::train::{train_from_scratch, transfer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cidis", version, about = "Banana ripeness CNN: synthetic data, transfer learning, evaluation")]
pub struct Cli {
    /// Seed for generation and splitting; overrides the seed in run configs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset to level_X/ directories with a manifest.
    Gen(GenArgs),
    /// Read a directory of level_X/ or day_NN/ images into a dataset cache.
    Ingest(IngestArgs),
    /// Assign a stratified 60/20/20 train/test/validation split.
    Split(SplitArgs),
    /// Train a network from scratch (stages cnn1 and scratch-real).
    Train(TrainArgs),
    /// Train a new head over the frozen features of a stage-1 checkpoint.
    Transfer(TransferArgs),
    /// Evaluate a checkpoint on one subset of a dataset.
    Eval(EvalArgs),
    /// Run a grid of transfer configurations from one stage-1 checkpoint.
    Grid(GridArgs),
    /// Measure single-image inference latency and model size.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub per_level: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 224)]
    pub size: u32,
    #[arg(long, default_value = "png")]
    pub format: String,
    /// Apply the photographic domain shift to every image.
    #[arg(long)]
    pub real_like: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// File of paths (relative to the root) to leave out.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    #[arg(long, default_value_t = 224)]
    pub size: u32,
    /// Where to list files that could not be used.
    #[arg(long)]
    pub skip_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset cache with a split assignment.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub stage1: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub subset: String,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    #[command(flatten)]
    pub timing: TimingArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub stage1: PathBuf,
    /// Real-image dataset cache with a split assignment.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub timing: TimingArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark this checkpoint; without it a freshly initialized network is used.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Input side of the fresh network (filter widths scale with it).
    #[arg(long, default_value_t = 224, conflicts_with = "ckpt")]
    pub input_size: usize,
    #[command(flatten)]
    pub timing: TimingArgs,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::load_cache(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = TrainConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn timing(t: &TimingArgs, batch_size: usize) -> EvalOptions {
    EvalOptions {
        batch_size,
        warmup: t.warmup,
        timed_runs: t.runs,
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Gen(a) => {
            let format: ImageFormat = a.format.parse()?;
            let opts = GenOptions {
                per_level: a.per_level,
                image_size: a.size,
                domain: if a.real_like { Domain::RealLike } else { Domain::Clean },
                seed: seed.unwrap_or(0),
            };
            let manifest = generate_dataset(&a.out, &opts, format)?;
            println!("wrote {} images; manifest {}", 4 * a.per_level, manifest.display());
        }
        Command::Ingest(a) => {
            let exclusions = match &a.exclude {
                Some(p) => data::read_exclusions(p)?,
                None => Default::default(),
            };
            let (ds, skipped) = data::ingest_real(&a.root, &exclusions, a.size)?;
            ds.save_cache(&a.out)?;
            let [ca, cb, cc, cd] = ds.class_counts();
            println!("ingested {} images (A {ca}, B {cb}, C {cc}, D {cd}); skipped {}", ds.len(), skipped.len());
            match &a.skip_report {
                Some(p) => fs::write(p, skipped.to_text()).with_context(|| format!("writing {}", p.display()))?,
                None => eprint!("{}", skipped.to_text()),
            }
        }
        Command::Split(a) => {
            let ds = load_dataset(&a.data)?;
            let plan = data::split_assignment(&ds.labels(), seed.unwrap_or(0))?;
            for w in &plan.warnings {
                eprintln!("warning: {w}");
            }
            let (tr, te, va) = plan.counts();
            Dataset::with_split(ds.into_samples(), plan.assignment)?.save_cache(&a.out)?;
            println!("train {tr}, test {te}, validation {va}");
        }
        Command::Train(a) => {
            let cfg = load_config(&a.config, seed)?;
            if cfg.stage == Stage::Cnn2 {
                bail!("config '{}' is a cnn2 run; use `cidis transfer --stage1 <ckpt>`", cfg.id);
            }
            let ds = load_dataset(&a.data)?;
            let (ckpt, log) = train_from_scratch(&ds, &cfg)?;
            finish_training(&ckpt, &log, &a.out, a.log.as_deref())?;
        }
        Command::Transfer(a) => {
            let cfg = load_config(&a.config, seed)?;
            if cfg.stage != Stage::Cnn2 {
                bail!("config '{}' has stage {}; transfer needs stage = cnn2", cfg.id, cfg.stage);
            }
            let stage1 = Checkpoint::load(&a.stage1)?;
            let ds = load_dataset(&a.data)?;
            let (ckpt, log) = transfer(stage1.network(), &ds, &cfg)?;
            finish_training(&ckpt, &log, &a.out, a.log.as_deref())?;
        }
        Command::Eval(a) => {
            let subset: Subset = a.subset.parse()?;
            let ckpt = Checkpoint::load(&a.ckpt)?;
            let ds = load_dataset(&a.data)?;
            let report = evaluate(ckpt.network(), &ds, subset, &timing(&a.timing, a.batch_size))?;
            let text = report.to_text();
            print!("{text}");
            if let Some(p) = &a.out {
                fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Grid(a) => {
            let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
            let mut cells = parse_grid(&text).with_context(|| format!("parsing {}", a.spec.display()))?;
            if let Some(s) = seed {
                cells.iter_mut().for_each(|c| c.seed = s);
            }
            let stage1 = Checkpoint::load(&a.stage1)?;
            let ds = load_dataset(&a.data)?;
            let report = run_grid(&cells, stage1.network(), &ds, Some(&a.out), &timing(&a.timing, 50))?;
            print!("{}", report.summary_text());
            if report.best().is_none() {
                bail!("every grid cell failed");
            }
        }
        Command::Bench(a) => {
            let net = match &a.ckpt {
                Some(p) => Checkpoint::load(p)?.into_network(),
                None => build(&CidisConfig::scaled(a.input_size), &mut Rng::new(seed.unwrap_or(0)))?,
            };
            let [c, h, w] = net.input_shape();
            let mut rng = Rng::new(seed.unwrap_or(0));
            let probe = Tensor::uniform(&[1, c, h, w], 0.0, 1.0, &mut rng)?;
            let ms = measure_latency(&net, &probe, a.timing.warmup, a.timing.runs)?;
            println!("input = {c}x{h}x{w}");
            println!("parameters = {}", net.param_count());
            println!("size_mb = {:.6}", model_size_mb(&net));
            println!("latency_ms = {ms:.4}");
        }
    }
    Ok(())
}

fn finish_training(ckpt: &Checkpoint, log: &crate::train::RunLog, out: &Path, log_path: Option<&Path>) -> anyhow::Result<()> {
    ckpt.save(out)?;
    if let Some(p) = log_path {
        log.write_csv(p)?;
    }
    if let Some(last) = log.last() {
        println!(
            "{}: epoch {} train_acc {:.4} val_acc {:.4}; checkpoint {}",
            log.config_id,
            last.epoch,
            last.train_acc,
            last.val_acc,
            out.display()
        );
    }
    Ok(())
}
