//! Sliding-window inference over a dataset and the metrics report.

use std::path::Path;

use motpose_core::annotation::PredictionSet;
use motpose_core::geometry::ObjectCatalog;
use motpose_core::metrics::{evaluate, write_accuracy_curves, EvalConfig, EvalSequence, MetricsReport};
use motpose_core::model::{Model, ModelConfig};
use motpose_core::scenes::{Dataset, SceneSequence};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub version: u32,
    /// Model settings in effect, after command-line changes.
    pub model: ModelConfig,
    /// Ground truth was echoed instead of running the model.
    pub oracle: bool,
    pub dataset_sha256: String,
    pub checkpoint_sha256: Option<String>,
    pub sequences: usize,
    /// Leading frames of each sequence left out.
    pub skip_frames: usize,
    pub metrics: MetricsReport,
}

impl EvalReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let report: EvalReport = serde_json::from_str(&text).map_err(|e| HarnessError::malformed(path, e.to_string()))?;
        if report.version != REPORT_VERSION {
            return Err(HarnessError::malformed(
                path,
                format!("report version {}, expected {REPORT_VERSION}", report.version),
            ));
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json).map_err(|e| HarnessError::io(path, e))
    }
}

/// Streaming predictions for every frame of every sequence, sequences spread over
/// `workers` threads. The result does not depend on the worker count.
pub fn predict_sequences(model: &Model, seqs: &[SceneSequence], workers: usize) -> Result<Vec<Vec<PredictionSet>>> {
    let workers = workers.clamp(1, seqs.len().max(1));
    let results: Vec<(usize, motpose_core::Result<Vec<PredictionSet>>)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..seqs.len())
                        .step_by(workers)
                        .map(|i| (i, model.predict_sequence(&seqs[i].rasters)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation thread"))
            .collect()
    });
    let mut out: Vec<Option<Vec<PredictionSet>>> = vec![None; seqs.len()];
    for (i, r) in results {
        out[i] = Some(r?);
    }
    Ok(out.into_iter().map(|p| p.expect("every sequence predicted")).collect())
}

/// Ground truth above the visibility cut, echoed into `slots` prediction slots.
pub fn oracle_predictions(seq: &SceneSequence, slots: usize, num_classes: usize, min_visibility: f64) -> Vec<PredictionSet> {
    seq.annotations
        .iter()
        .map(|a| PredictionSet::oracle(&a.visible(min_visibility), slots, num_classes))
        .collect()
}

/// Metrics of `model` (or of the oracle when `None`) on `seqs`, leaving out the
/// first `window - 1` frames of each sequence.
pub fn metrics_for(
    model: Option<&Model>,
    config: &ModelConfig,
    seqs: &[SceneSequence],
    catalog: &ObjectCatalog,
    min_visibility: f64,
    workers: usize,
) -> Result<MetricsReport> {
    let predictions = match model {
        Some(m) => predict_sequences(m, seqs, workers)?,
        None => seqs
            .iter()
            .map(|s| oracle_predictions(s, config.num_queries, config.num_classes, min_visibility))
            .collect(),
    };
    let eval_seqs: Vec<EvalSequence> = seqs
        .iter()
        .zip(predictions)
        .map(|(s, p)| EvalSequence {
            annotations: s.annotations.clone(),
            predictions: p,
        })
        .collect();
    let mut cfg = EvalConfig::new(config.num_classes, config.window);
    cfg.min_visibility = min_visibility;
    Ok(evaluate(&eval_seqs, catalog, &cfg)?)
}

/// Writes `report.json` and `curves.csv` into `out`.
pub fn write_outputs(report: &EvalReport, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    report.save(&out.join(REPORT_FILE))?;
    let curves = out.join(CURVES_FILE);
    let max = motpose_core::metrics::AUC_MAX_THRESHOLD;
    write_accuracy_curves(&report.metrics, max, &curves).map_err(|e| match e {
        motpose_core::Error::Io(io) => HarnessError::io(&curves, io),
        other => HarnessError::Core(other),
    })
}

/// Inputs of one evaluation besides the model.
pub struct EvalJob<'a> {
    pub dataset: &'a Dataset,
    pub dataset_path: &'a Path,
    pub dataset_sha256: String,
    pub checkpoint_sha256: Option<String>,
    pub min_visibility: f64,
    pub workers: usize,
}

/// Builds a report, checking first that the model can read the dataset.
pub fn evaluate_dataset(model: Option<&Model>, config: &ModelConfig, job: EvalJob<'_>) -> Result<EvalReport> {
    let ds = job.dataset;
    crate::data::check_compatible(ds, config, job.dataset_path)?;
    let catalog = crate::data::catalog_for(config.num_classes);
    let metrics = metrics_for(model, config, &ds.sequences, &catalog, job.min_visibility, job.workers)?;
    Ok(EvalReport {
        version: REPORT_VERSION,
        model: config.clone(),
        oracle: model.is_none(),
        dataset_sha256: job.dataset_sha256,
        checkpoint_sha256: job.checkpoint_sha256,
        sequences: ds.sequences.len(),
        skip_frames: config.window.saturating_sub(1),
        metrics,
    })
}
