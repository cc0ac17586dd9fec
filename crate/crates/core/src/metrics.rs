//! Pose accuracy (ADD, ADD-S and their AUCs), set cardinality errors and
//! COCO-style detection AP/AR.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use crate::annotation::{FrameAnnotation, ObjectPrediction, PredictionSet};
use crate::error::{Error, Result};
use crate::geometry::{ObjectCatalog, ObjectModel, Pose};

/// Objects less visible than this are left out of evaluation and supervision.
pub const MIN_VISIBILITY: f64 = 0.3;
/// Upper integration limit of the metric-threshold AUCs, meters.
pub const AUC_MAX_THRESHOLD: f64 = 0.1;
/// Points on the accuracy-vs-threshold curve written to CSV.
pub const CURVE_STEPS: usize = 100;

fn check_points(model: &ObjectModel) -> Result<()> {
    if model.points.is_empty() {
        return Err(Error::Model(format!("class {} has no points", model.class_id)));
    }
    Ok(())
}

/// Mean distance between corresponding model points under the two poses.
pub fn add_metric(pred: &Pose, gt: &Pose, model: &ObjectModel) -> Result<f64> {
    check_points(model)?;
    let pts = model.points();
    let sum: f64 = pts.iter().map(|x| (pred.apply(x) - gt.apply(x)).norm()).sum();
    Ok(sum / pts.len() as f64)
}

/// Mean distance from each predicted point to the closest ground-truth point.
pub fn adds_metric(pred: &Pose, gt: &Pose, model: &ObjectModel) -> Result<f64> {
    check_points(model)?;
    let pts = model.points();
    let target: Vec<_> = pts.iter().map(|x| gt.apply(x)).collect();
    let sum: f64 = pts
        .iter()
        .map(|x| {
            let p = pred.apply(x);
            target
                .iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(sum / pts.len() as f64)
}

/// ADD-S for symmetric models, ADD otherwise.
pub fn add_s_combined(pred: &Pose, gt: &Pose, model: &ObjectModel) -> Result<f64> {
    if model.symmetric {
        adds_metric(pred, gt, model)
    } else {
        add_metric(pred, gt, model)
    }
}

/// Area under the accuracy-vs-threshold curve on `[0, max_threshold]`, normalized.
///
/// The curve is a step function of the sorted errors, so the integral is exact.
/// Infinite errors (missed detections) contribute zero. `None` for an empty list.
pub fn auc(errors: &[f64], max_threshold: f64) -> Result<Option<f64>> {
    if !(max_threshold > 0.0) {
        return Err(Error::Contract(format!(
            "AUC threshold must be positive, got {max_threshold}"
        )));
    }
    if errors.is_empty() {
        return Ok(None);
    }
    // Normalize per error so a run of zeros sums to exactly `n`.
    let sum: f64 = errors
        .iter()
        .map(|&e| ((max_threshold - e.max(0.0)) / max_threshold).max(0.0))
        .sum();
    Ok(Some(sum / errors.len() as f64))
}

/// AUC with the threshold set to a tenth of the object diameter.
pub fn auc_at_01d(errors: &[f64], model: &ObjectModel) -> Result<Option<f64>> {
    auc(errors, 0.1 * model.diameter)
}

/// Fraction of errors at or below `threshold`.
pub fn accuracy(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e <= threshold).count() as f64 / errors.len() as f64
}

fn label_counts<I: IntoIterator<Item = usize>>(labels: I) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

/// Sizes of `Y - Ŷ` and `Ŷ - Y` on class-label multisets.
fn multiset_differences(gts: &FrameAnnotation, preds: &PredictionSet) -> (usize, usize) {
    let y = label_counts(gts.objects.iter().map(|o| o.class_id));
    let y_hat = label_counts(preds.detections().map(|(_, p)| p.label().expect("detection")));
    let missing = y
        .iter()
        .map(|(c, &n)| n.saturating_sub(*y_hat.get(c).unwrap_or(&0)))
        .sum();
    let extra = y_hat
        .iter()
        .map(|(c, &n)| n.saturating_sub(*y.get(c).unwrap_or(&0)))
        .sum();
    (missing, extra)
}

/// Symmetric multiset difference of class labels over `|Y|`; `None` when `Y` is empty.
pub fn cardinality_error(gts: &FrameAnnotation, preds: &PredictionSet) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let (missing, extra) = multiset_differences(gts, preds);
    Some((missing + extra) as f64 / gts.len() as f64)
}

/// Missing class labels over `|Y|`; `None` when `Y` is empty.
pub fn false_negative_rate(gts: &FrameAnnotation, preds: &PredictionSet) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let (missing, _) = multiset_differences(gts, preds);
    Some(missing as f64 / gts.len() as f64)
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    /// Mean over IoU thresholds and classes.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Mean over IoU thresholds and classes of the final recall.
    pub ar: f64,
    pub classes: usize,
}

/// Per-class, per-threshold average precision and final recall.
struct ClassCurve {
    ap: Vec<f64>,
    recall: Vec<f64>,
}

fn class_curve(frames: &[(&FrameAnnotation, &PredictionSet)], class_id: usize, thresholds: &[f64]) -> Option<ClassCurve> {
    let npos: usize = frames
        .iter()
        .map(|(g, _)| g.objects.iter().filter(|o| o.class_id == class_id).count())
        .sum();
    if npos == 0 {
        return None;
    }
    // Detections sorted by confidence; ties keep frame and slot order.
    let mut dets: Vec<(usize, usize, f64)> = Vec::new();
    for (f, (_, p)) in frames.iter().enumerate() {
        for (s, slot) in p.detections() {
            if slot.label() == Some(class_id) {
                dets.push((f, s, slot.confidence()));
            }
        }
    }
    dets.sort_by(|a, b| b.2.total_cmp(&a.2));

    let mut ap = Vec::with_capacity(thresholds.len());
    let mut recall = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut taken: Vec<Vec<bool>> = frames.iter().map(|(g, _)| vec![false; g.len()]).collect();
        let mut tp = 0usize;
        let mut rc = Vec::with_capacity(dets.len());
        let mut pr = Vec::with_capacity(dets.len());
        for (k, &(f, s, _)) in dets.iter().enumerate() {
            let (gts, preds) = frames[f];
            let b = preds.slots[s].bbox;
            let mut best: Option<(usize, f64)> = None;
            for (j, o) in gts.objects.iter().enumerate() {
                if o.class_id != class_id || taken[f][j] {
                    continue;
                }
                let iou = b.iou(&o.bbox);
                if iou >= t && best.is_none_or(|(_, bi)| iou > bi) {
                    best = Some((j, iou));
                }
            }
            if let Some((j, _)) = best {
                taken[f][j] = true;
                tp += 1;
            }
            rc.push(tp as f64 / npos as f64);
            pr.push(tp as f64 / (k + 1) as f64);
        }
        for i in (1..pr.len()).rev() {
            pr[i - 1] = pr[i - 1].max(pr[i]);
        }
        let mut sum = 0.0;
        for r in 0..=100 {
            let level = r as f64 / 100.0;
            let idx = rc.partition_point(|&v| v < level);
            if idx < pr.len() {
                sum += pr[idx];
            }
        }
        ap.push(sum / 101.0);
        recall.push(rc.last().copied().unwrap_or(0.0));
    }
    Some(ClassCurve { ap, recall })
}

/// COCO-style AP with 101-point interpolation and AR, averaged over the classes
/// that occur in the ground truth.
pub fn detection_ap_ar(
    frames: &[(&FrameAnnotation, &PredictionSet)],
    num_classes: usize,
    iou_thresholds: &[f64],
) -> DetectionSummary {
    let at = |x: f64| iou_thresholds.iter().position(|&t| (t - x).abs() < 1e-9);
    let (i50, i75) = (at(0.5), at(0.75));
    let mut out = DetectionSummary::default();
    for c in 0..num_classes {
        let Some(curve) = class_curve(frames, c, iou_thresholds) else {
            continue;
        };
        let n = iou_thresholds.len() as f64;
        out.ap += curve.ap.iter().sum::<f64>() / n;
        out.ar += curve.recall.iter().sum::<f64>() / n;
        out.ap50 += i50.map_or(0.0, |i| curve.ap[i]);
        out.ap75 += i75.map_or(0.0, |i| curve.ap[i]);
        out.classes += 1;
    }
    if out.classes > 0 {
        let k = out.classes as f64;
        out.ap /= k;
        out.ar /= k;
        out.ap50 /= k;
        out.ap75 /= k;
    }
    out
}

/// Ground-truth to detection pairs: same class, greedy by 2D box-center distance.
/// Entries are `(ground truth index, slot index)`.
pub fn associate(gts: &FrameAnnotation, preds: &PredictionSet) -> Vec<(usize, Option<usize>)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (j, o) in gts.objects.iter().enumerate() {
        for (s, p) in preds.detections() {
            if p.label() == Some(o.class_id) {
                let d = (p.bbox.cx - o.bbox.cx).hypot(p.bbox.cy - o.bbox.cy);
                candidates.push((d, j, s));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_of: Vec<Option<usize>> = vec![None; gts.len()];
    let mut used = vec![false; preds.len()];
    for (_, j, s) in candidates {
        if gt_of[j].is_none() && !used[s] {
            gt_of[j] = Some(s);
            used[s] = true;
        }
    }
    gt_of.into_iter().enumerate().collect()
}

/// Annotations and aligned predictions of one sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSequence {
    pub annotations: Vec<FrameAnnotation>,
    pub predictions: Vec<PredictionSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub num_classes: usize,
    pub min_visibility: f64,
    /// Leading frames of each sequence left out (no full temporal window yet).
    pub skip_frames: usize,
    pub max_threshold_m: f64,
}

impl EvalConfig {
    pub fn new(num_classes: usize, window: usize) -> Self {
        EvalConfig {
            num_classes,
            min_visibility: MIN_VISIBILITY,
            skip_frames: window.saturating_sub(1),
            max_threshold_m: AUC_MAX_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub instances: usize,
    pub auc_adds: Option<f64>,
    pub auc_add_s: Option<f64>,
    pub auc_adds_01d: Option<f64>,
    pub auc_add_s_01d: Option<f64>,
    /// ADD(-S) errors, meters; missed objects are infinite.
    #[serde(skip)]
    pub errors_add_s: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    /// Means over the classes present in the ground truth.
    pub mean_auc_adds: Option<f64>,
    pub mean_auc_add_s: Option<f64>,
    pub mean_auc_adds_01d: Option<f64>,
    pub mean_auc_add_s_01d: Option<f64>,
    pub cardinality_error: Option<f64>,
    pub false_negative_rate: Option<f64>,
    pub detection: DetectionSummary,
    pub frames_evaluated: usize,
    /// Evaluated frames without ground truth, left out of CE and FN.
    pub frames_without_objects: usize,
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregates every metric over the evaluated frames of all sequences.
pub fn evaluate(sequences: &[EvalSequence], catalog: &ObjectCatalog, cfg: &EvalConfig) -> Result<MetricsReport> {
    let mut adds: Vec<Vec<f64>> = vec![Vec::new(); cfg.num_classes];
    let mut add_s: Vec<Vec<f64>> = vec![Vec::new(); cfg.num_classes];
    let mut ce = Vec::new();
    let mut fnr = Vec::new();
    let mut report = MetricsReport::default();
    let mut visible = Vec::new();
    let mut aligned: Vec<&PredictionSet> = Vec::new();

    for (q, seq) in sequences.iter().enumerate() {
        if seq.annotations.len() != seq.predictions.len() {
            return Err(Error::Evaluation(format!(
                "sequence {q}: {} annotated frames but {} prediction sets",
                seq.annotations.len(),
                seq.predictions.len()
            )));
        }
        for (f, (ann, preds)) in seq.annotations.iter().zip(&seq.predictions).enumerate().skip(cfg.skip_frames) {
            if let Some(bad) = preds.slots.iter().find(|s| s.class_probs.len() != cfg.num_classes + 1) {
                return Err(Error::Evaluation(format!(
                    "sequence {q} frame {f}: {} class scores, expected {}",
                    bad.class_probs.len(),
                    cfg.num_classes + 1
                )));
            }
            let gts = ann.visible(cfg.min_visibility);
            report.frames_evaluated += 1;
            match (cardinality_error(&gts, preds), false_negative_rate(&gts, preds)) {
                (Some(c), Some(n)) => {
                    ce.push(c);
                    fnr.push(n);
                }
                _ => report.frames_without_objects += 1,
            }
            for (j, slot) in associate(&gts, preds) {
                let obj = &gts.objects[j];
                if obj.class_id >= cfg.num_classes {
                    return Err(Error::Evaluation(format!(
                        "sequence {q} frame {f}: class {} outside {} classes",
                        obj.class_id, cfg.num_classes
                    )));
                }
                let model = catalog.get(obj.class_id)?;
                // Degenerate rotation outputs count as misses.
                let pose = slot.and_then(|s| preds.slots[s].pose().ok());
                let (e_adds, e_comb) = match pose {
                    Some(p) => (adds_metric(&p, &obj.pose, model)?, add_s_combined(&p, &obj.pose, model)?),
                    None => (f64::INFINITY, f64::INFINITY),
                };
                adds[obj.class_id].push(e_adds);
                add_s[obj.class_id].push(e_comb);
            }
            visible.push(gts);
            aligned.push(preds);
        }
    }

    for c in 0..cfg.num_classes {
        if adds[c].is_empty() {
            continue;
        }
        let model = catalog.get(c)?;
        report.per_class.push(ClassMetrics {
            class_id: c,
            instances: adds[c].len(),
            auc_adds: auc(&adds[c], cfg.max_threshold_m)?,
            auc_add_s: auc(&add_s[c], cfg.max_threshold_m)?,
            auc_adds_01d: auc_at_01d(&adds[c], model)?,
            auc_add_s_01d: auc_at_01d(&add_s[c], model)?,
            errors_add_s: add_s[c].clone(),
        });
    }
    report.mean_auc_adds = mean_present(report.per_class.iter().map(|m| m.auc_adds));
    report.mean_auc_add_s = mean_present(report.per_class.iter().map(|m| m.auc_add_s));
    report.mean_auc_adds_01d = mean_present(report.per_class.iter().map(|m| m.auc_adds_01d));
    report.mean_auc_add_s_01d = mean_present(report.per_class.iter().map(|m| m.auc_add_s_01d));
    report.cardinality_error = mean_present(ce.into_iter().map(Some));
    report.false_negative_rate = mean_present(fnr.into_iter().map(Some));
    let pairs: Vec<(&FrameAnnotation, &PredictionSet)> = visible.iter().zip(aligned).collect();
    report.detection = detection_ap_ar(&pairs, cfg.num_classes, &coco_iou_thresholds());
    Ok(report)
}

/// Writes per-class ADD(-S) accuracy against threshold on `[0, max_threshold]`.
pub fn write_accuracy_curves(report: &MetricsReport, max_threshold: f64, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "class_id,threshold_m,accuracy")?;
    for m in &report.per_class {
        for k in 0..=CURVE_STEPS {
            let t = max_threshold * k as f64 / CURVE_STEPS as f64;
            writeln!(out, "{},{},{}", m.class_id, t, accuracy(&m.errors_add_s, t))?;
        }
    }
    out.flush()?;
    Ok(())
}
