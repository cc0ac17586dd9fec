//! Command-line entry: `generate`, `train`, `eval` and `report`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use motpose_core::model::{Checkpoint, Model};

use crate::config::{Overrides, RunConfig};
use crate::data::{self, TEST_FILE, TRAIN_FILE};
use crate::error::{HarnessError, Result};
use crate::eval::{self, EvalJob, CURVES_FILE, REPORT_FILE};
use crate::manifest::{hash_file, RunManifest};
use crate::report;
use crate::train::{self, BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE, VALIDATION_FILE};

/// Copy of the effective settings written next to a run's outputs.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "motpose", version, about = "Multi-object 6D pose estimation with temporal fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render train and test scene sequences.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a generated training split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory or training file; defaults to the output directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from this checkpoint's weights and optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        fusion: Fusion,
    },
    /// Score a checkpoint (or the ground-truth oracle) on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Dataset directory or file; a directory means its test split.
        #[arg(long)]
        data: PathBuf,
        /// Echo the ground truth instead of running a model.
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        fusion: Fusion,
    },
    /// Compare evaluation reports of several runs.
    Report {
        /// Run directories or report files; deltas are against the first.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to $MOTPOSE_OUT, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct Fusion {
    /// Temporal window length; 1 disables fusion.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    no_tefm: bool,
    #[arg(long)]
    no_tofm: bool,
    #[arg(long)]
    no_rfe: bool,
}

impl Fusion {
    fn any(&self) -> bool {
        self.window.is_some() || self.no_tefm || self.no_tofm || self.no_rfe
    }
}

fn load_config(common: &Common, fusion: Option<&Fusion>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut o = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        workers: common.workers,
        ..Overrides::default()
    };
    if let Some(f) = fusion {
        o.window = f.window;
        o.no_tefm = f.no_tefm;
        o.no_tofm = f.no_tofm;
        o.no_rfe = f.no_rfe;
    }
    cfg.apply(&o)?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_toml()).map_err(|e| HarnessError::io(&path, e))
}

/// A dataset argument: a file, or a directory holding `default_file`.
fn dataset_file(path: &Path, default_file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_file)
    } else {
        path.to_path_buf()
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        motpose_core::Error::Io(io) => HarnessError::io(path, io),
        other => HarnessError::malformed(path, other.to_string()),
    })
}

fn generate(common: &Common) -> Result<String> {
    let cfg = load_config(common, None)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_config(&cfg, &out)?;
    let m = data::generate(&cfg, &out)?;
    Ok(format!(
        "wrote {} train and {} test sequences to {} ({:.1} s)",
        cfg.data.train_sequences,
        cfg.data.test_sequences,
        out.display(),
        m.timings.values().sum::<f64>()
    ))
}

fn train_cmd(common: &Common, data_arg: Option<&Path>, resume: Option<&Path>, fusion: &Fusion) -> Result<String> {
    let cfg = load_config(common, Some(fusion))?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let data_path = dataset_file(data_arg.unwrap_or(&out), TRAIN_FILE);
    let t0 = Instant::now();
    let ds = data::load(&data_path)?;
    data::check_compatible(&ds, &cfg.model, &data_path)?;
    let (train_seqs, val_seqs) = data::split(ds.sequences, cfg.data.val_fraction);
    let ckpt = resume.map(load_checkpoint).transpose()?;
    let mut manifest = RunManifest::new("train", Some(cfg.hash()), vec![cfg.seed]);
    manifest.time("load", t0.elapsed().as_secs_f64());
    write_config(&cfg, &out)?;
    let t1 = Instant::now();
    let outcome = train::train(&cfg, &train_seqs, &val_seqs, &out, ckpt.as_ref())?;
    manifest.time("train", t1.elapsed().as_secs_f64());
    for name in [CONFIG_FILE, LOG_FILE, VALIDATION_FILE, BEST_CHECKPOINT, LAST_CHECKPOINT] {
        manifest.add_file(&out, name)?;
    }
    manifest.write(&out)?;
    let best = match (outcome.best_step, outcome.best_auc) {
        (Some(s), Some(a)) => format!(", best validation AUC ADD(-S) {a:.4} at step {s}"),
        _ => String::new(),
    };
    Ok(format!(
        "trained {} steps to step {}{best}; outputs in {}",
        outcome.steps_taken,
        outcome.last_step,
        out.display()
    ))
}

fn eval_cmd(common: &Common, checkpoint: Option<&Path>, data_arg: &Path, oracle: bool, fusion: &Fusion) -> Result<String> {
    let cfg = load_config(common, Some(fusion))?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let data_path = dataset_file(data_arg, TEST_FILE);
    let t0 = Instant::now();
    let ds = data::load(&data_path)?;
    let (dataset_sha256, _) = hash_file(&data_path)?;
    let (model, checkpoint_sha256) = match (checkpoint, oracle) {
        (Some(path), false) => {
            let (mut model, _) = load_checkpoint(path)?.restore()?;
            if fusion.any() {
                let c = &model.config;
                let window = fusion.window.unwrap_or(c.window);
                let (tefm, tofm, rfe) = (c.use_tefm && !fusion.no_tefm, c.use_tofm && !fusion.no_tofm, c.use_rfe && !fusion.no_rfe);
                model.set_fusion(window, tefm, tofm, rfe)?;
            }
            (Some(model), Some(hash_file(path)?.0))
        }
        (None, true) => (None, None),
        _ => return Err(HarnessError::Usage("give exactly one of --checkpoint and --oracle".into())),
    };
    let config = model.as_ref().map_or(&cfg.model, |m: &Model| &m.config).clone();
    let job = EvalJob {
        dataset: &ds,
        dataset_path: &data_path,
        dataset_sha256,
        checkpoint_sha256,
        min_visibility: cfg.data.min_visibility,
        workers: cfg.workers,
    };
    let report = eval::evaluate_dataset(model.as_ref(), &config, job)?;
    eval::write_outputs(&report, &out)?;
    let mut manifest = RunManifest::new("eval", Some(cfg.hash()), vec![cfg.seed]);
    manifest.time("eval", t0.elapsed().as_secs_f64());
    manifest.add_file(&out, REPORT_FILE)?;
    manifest.add_file(&out, CURVES_FILE)?;
    manifest.write(&out)?;
    let m = &report.metrics;
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    Ok(format!(
        "AUC ADD-S {} ADD(-S) {} CE {} FN {} over {} frames; report in {}",
        show(m.mean_auc_adds),
        show(m.mean_auc_add_s),
        show(m.cardinality_error),
        show(m.false_negative_rate),
        m.frames_evaluated,
        out.display()
    ))
}

fn report_cmd(runs: &[PathBuf], out: Option<&Path>) -> Result<String> {
    let cmp = report::compare(runs)?;
    if let Some(path) = out {
        cmp.write_csv(path)?;
    }
    Ok(cmp.to_text().trim_end().to_string())
}

/// Parses `args` (program name first) and runs the command. Returns the summary
/// to print on success.
pub fn execute<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            return Ok(e.to_string().trim_end().to_string());
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return Err(HarnessError::Usage(first));
        }
    };
    match &cli.command {
        Command::Generate { common } => generate(common),
        Command::Train {
            common,
            data,
            resume,
            fusion,
        } => train_cmd(common, data.as_deref(), resume.as_deref(), fusion),
        Command::Eval {
            common,
            checkpoint,
            data,
            oracle,
            fusion,
        } => eval_cmd(common, checkpoint.as_deref(), data, *oracle, fusion),
        Command::Report { runs, out } => report_cmd(runs, out.as_deref()),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match execute(args) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
