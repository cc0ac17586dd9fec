//! The training loop: deterministic batches, per-step log, periodic validation,
//! best and last checkpoints, resume.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use motpose_core::geometry::ObjectCatalog;
use motpose_core::metrics::MetricsReport;
use motpose_core::model::{train_step, AdamW, Checkpoint, Model, TrainingWindow};
use motpose_core::scenes::SceneSequence;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::eval::metrics_for;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt.json";
pub const LAST_CHECKPOINT: &str = "last.ckpt.json";

/// Windows of `batch` for 1-based `step`: consecutive entries of a per-epoch
/// shuffle of `0..n`. A pure function of its arguments, so a resumed run draws
/// the batches the uninterrupted run would have drawn.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    assert!(n > 0 && step > 0);
    let mut perm_epoch = u64::MAX;
    let mut perm: Vec<usize> = Vec::new();
    (0..batch)
        .map(|k| {
            let g = (step - 1) * batch as u64 + k as u64;
            let epoch = g / n as u64;
            if epoch != perm_epoch {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch);
                perm = (0..n).collect();
                perm.shuffle(&mut rng);
                perm_epoch = epoch;
            }
            perm[(g % n as u64) as usize]
        })
        .collect()
}

/// Every window of every sequence, as (sequence, last frame).
fn window_index(seqs: &[SceneSequence]) -> Vec<(usize, usize)> {
    seqs.iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.len()).map(move |end| (i, end)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: u64,
    pub auc_add_s: Option<f64>,
    pub auc_adds: Option<f64>,
    pub cardinality_error: Option<f64>,
    pub false_negative_rate: Option<f64>,
    /// Became the best checkpoint.
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Optimizer steps taken by this call.
    pub steps_taken: u64,
    pub last_step: u64,
    pub best_step: Option<u64>,
    pub best_auc: Option<f64>,
    pub stopped_early: bool,
}

fn validate(model: &Model, cfg: &RunConfig, val: &[SceneSequence], catalog: &ObjectCatalog) -> Result<MetricsReport> {
    metrics_for(Some(model), &model.config, val, catalog, cfg.data.min_visibility, cfg.workers)
}

fn open_log(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn write_line<T: Serialize>(out: &mut BufWriter<File>, path: &Path, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, record).expect("log record serializes");
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| HarnessError::io(path, e))
}

fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let json = ckpt.to_json()?;
    std::fs::write(path, json).map_err(|e| HarnessError::io(path, e))
}

/// Lines of a JSON-lines log whose `step` is at most `step`, in order. A missing
/// file has none.
fn lines_up_to(path: &Path, step: u64) -> Result<Vec<String>> {
    #[derive(Deserialize)]
    struct Step {
        step: u64,
    }
    let Ok(file) = File::open(path) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        let s: Step =
            serde_json::from_str(&line).map_err(|e| HarnessError::malformed(path, format!("line {}: {e}", i + 1)))?;
        if s.step <= step {
            out.push(line);
        }
    }
    Ok(out)
}

/// Opens a log for appending after keeping only its first `keep` lines.
fn reopen_log(path: &Path, keep: &[String]) -> Result<BufWriter<File>> {
    let mut out = open_log(path)?;
    for line in keep {
        writeln!(out, "{line}").map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(out)
}

/// Trains on `train`, validating on `val`, writing logs and checkpoints to `out`.
/// With `resume`, continues from that checkpoint's model and optimizer state up to
/// `cfg.train.steps` total steps.
pub fn train(
    cfg: &RunConfig,
    train: &[SceneSequence],
    val: &[SceneSequence],
    out: &Path,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let catalog = crate::data::catalog_for(cfg.model.num_classes);
    let (mut model, mut opt) = match resume {
        Some(ckpt) => {
            if ckpt.model != cfg.model {
                return Err(HarnessError::Mismatch("checkpoint model settings differ from the run config".into()));
            }
            let (model, opt) = ckpt.restore()?;
            let opt = opt.ok_or_else(|| HarnessError::Mismatch("checkpoint has no optimizer state to resume".into()))?;
            (model, opt)
        }
        None => {
            let model = Model::new(cfg.model.clone(), cfg.seed)?;
            let opt = AdamW::new(cfg.optimizer.clone(), &model.params)?;
            (model, opt)
        }
    };
    // The resumed optimizer keeps its own settings; the schedule must match the file.
    opt.config = cfg.optimizer.clone();
    let objective = cfg.objective();
    let index = window_index(train);
    if index.is_empty() {
        return Err(HarnessError::Usage("no training windows: the training split is empty".into()));
    }

    let first_step = opt.step + 1;
    let log_path = out.join(LOG_FILE);
    let val_path = out.join(VALIDATION_FILE);
    // A resumed run rewinds both logs to the checkpoint, so they read as if the
    // run had never stopped.
    let (old_log, old_val) = if resume.is_some() {
        (lines_up_to(&log_path, opt.step)?, lines_up_to(&val_path, opt.step)?)
    } else {
        (Vec::new(), Vec::new())
    };
    let history = old_val
        .iter()
        .map(|l| serde_json::from_str::<ValidationRecord>(l).map_err(|e| HarnessError::malformed(&val_path, e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut log = reopen_log(&log_path, &old_log)?;
    let mut val_log = reopen_log(&val_path, &old_val)?;

    let mut best = history.iter().rfind(|r| r.best).map(|r| (r.step, r.auc_add_s.unwrap_or(0.0)));
    let mut stale = history.iter().rev().take_while(|r| !r.best).count();
    let mut stopped_early = false;
    let mut step = opt.step;
    let mut last_validated = history.last().map(|r| r.step);

    let run_validation = |model: &Model,
                          opt: &AdamW,
                          step: u64,
                          best: &mut Option<(u64, f64)>,
                          stale: &mut usize,
                          val_log: &mut BufWriter<File>|
     -> Result<()> {
        let report = validate(model, cfg, val, &catalog)?;
        let score = report.mean_auc_add_s.unwrap_or(0.0);
        let improved = best.is_none_or(|(_, b)| score > b);
        if improved {
            *best = Some((step, score));
            *stale = 0;
            save_checkpoint(&Checkpoint::capture(model, Some(opt), cfg.seed), &out.join(BEST_CHECKPOINT))?;
        } else {
            *stale += 1;
        }
        let record = ValidationRecord {
            step,
            auc_add_s: report.mean_auc_add_s,
            auc_adds: report.mean_auc_adds,
            cardinality_error: report.cardinality_error,
            false_negative_rate: report.false_negative_rate,
            best: improved,
        };
        write_line(val_log, &val_path, &record)
    };

    for s in first_step..=cfg.train.steps {
        let batch: Vec<TrainingWindow> = batch_indices(cfg.seed, s, cfg.train.batch_size, index.len())
            .into_iter()
            .map(|k| {
                let (q, end) = index[k];
                train[q]
                    .window_at(end, cfg.model.window, cfg.data.min_visibility)
                    .expect("indexed window exists")
            })
            .collect();
        let report = train_step(&mut model, &mut opt, &batch, &catalog, &objective)?;
        write_line(&mut log, &log_path, &report)?;
        step = s;
        let due = cfg.train.validate_every > 0 && s % cfg.train.validate_every == 0;
        if due && !val.is_empty() {
            run_validation(&model, &opt, s, &mut best, &mut stale, &mut val_log)?;
            last_validated = Some(s);
            if cfg.train.patience > 0 && stale >= cfg.train.patience {
                stopped_early = true;
                break;
            }
        }
    }
    if !val.is_empty() && last_validated != Some(step) {
        run_validation(&model, &opt, step, &mut best, &mut stale, &mut val_log)?;
    }
    let last = Checkpoint::capture(&model, Some(&opt), cfg.seed);
    save_checkpoint(&last, &out.join(LAST_CHECKPOINT))?;
    if val.is_empty() {
        // Nothing to select on: the last state is the best one.
        save_checkpoint(&last, &out.join(BEST_CHECKPOINT))?;
    }
    Ok(TrainOutcome {
        steps_taken: step + 1 - first_step,
        last_step: step,
        best_step: best.map(|b| b.0),
        best_auc: best.map(|b| b.1),
        stopped_early,
    })
}
