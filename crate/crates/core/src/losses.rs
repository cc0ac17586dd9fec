//! Set-prediction training loss: class, box, keypoint, pose and temporal terms.
//!
//! Each term has a plain `f64` form and a differentiable form in [`diff`] that
//! records onto a [`Tape`]. The two are checked against each other in tests.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::annotation::{BBox, FrameAnnotation};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{
    cross_ratio_unsigned, ObjectCatalog, ObjectModel, CANONICAL_CROSS_RATIO, IBB_EDGE_QUADRUPLES,
    NORM_EPS, NUM_KEYPOINTS,
};
use crate::matcher::Assignment;

/// Probability floor inside the negative log-likelihood.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Factor on the class term of slots whose target is no-object.
    pub w_nll_null: f64,
    pub w_bbox_giou: f64,
    pub w_bbox_l1: f64,
    pub w_kpt_l1: f64,
    pub w_kpt_crossratio: f64,
    /// Applied to shapematch plus translation.
    pub w_pose: f64,
    pub w_temporal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_nll_null: 0.1,
            w_bbox_giou: 2.0,
            w_bbox_l1: 5.0,
            w_kpt_l1: 10.0,
            w_kpt_crossratio: 1.0,
            w_pose: 0.05,
            w_temporal: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("w_nll_null", self.w_nll_null),
            ("w_bbox_giou", self.w_bbox_giou),
            ("w_bbox_l1", self.w_bbox_l1),
            ("w_kpt_l1", self.w_kpt_l1),
            ("w_kpt_crossratio", self.w_kpt_crossratio),
            ("w_pose", self.w_pose),
            ("w_temporal", self.w_temporal),
        ];
        for (name, w) in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss components and their weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Includes the no-object down-weighting.
    pub class: f64,
    pub bbox_l1: f64,
    /// Mean of `1 - GIoU`.
    pub bbox_giou: f64,
    pub kpt_l1: f64,
    pub kpt_cross_ratio: f64,
    pub shapematch: f64,
    pub translation: f64,
    pub temporal: f64,
    /// Shapematch plus translation of the pose head fed ground-truth keypoints.
    /// Filled in by windowed training; not part of [`LossReport::weighted_total`].
    #[serde(default)]
    pub pose_teacher: f64,
    pub total: f64,
    pub matched: usize,
    /// Slots whose target probability hit the floor.
    pub saturated: usize,
    pub skipped_quadruples: usize,
}

impl LossReport {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.class
            + w.w_bbox_l1 * self.bbox_l1
            + w.w_bbox_giou * self.bbox_giou
            + w.w_kpt_l1 * self.kpt_l1
            + w.w_kpt_crossratio * self.kpt_cross_ratio
            + w.w_pose * (self.shapematch + self.translation)
            + w.w_temporal * self.temporal
    }
}

/// Mean negative log-likelihood of the target class, no-object slots scaled by
/// `null_weight`. Returns the loss and the number of saturated slots.
pub fn class_loss(probs: &[Vec<f64>], targets: &[usize], null_weight: f64) -> Result<(f64, usize)> {
    if probs.len() != targets.len() {
        return Err(Error::shape("class_loss", &[probs.len()], &[targets.len()]));
    }
    if probs.is_empty() {
        return Ok((0.0, 0));
    }
    let mut sum = 0.0;
    let mut saturated = 0;
    for (row, &t) in probs.iter().zip(targets) {
        let p = *row
            .get(t)
            .ok_or_else(|| Error::Contract(format!("target {t} outside {} classes", row.len())))?;
        if p < PROB_EPS {
            saturated += 1;
        }
        let w = if t + 1 == row.len() { null_weight } else { 1.0 };
        sum += -w * p.max(PROB_EPS).ln();
    }
    Ok((sum / probs.len() as f64, saturated))
}

pub fn giou(b1: &BBox, b2: &BBox) -> Result<f64> {
    b1.giou(b2)
}

/// Weighted box loss over matched `(predicted, ground truth)` pairs; zero when empty.
pub fn bbox_loss(pairs: &[(BBox, BBox)], w: &LossWeights) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let m = pairs.len() as f64;
    let mut l1 = 0.0;
    let mut g = 0.0;
    for (p, t) in pairs {
        l1 += p.l1(t);
        g += 1.0 - p.giou(t)?;
    }
    Ok(w.w_bbox_l1 * l1 / m + w.w_bbox_giou * g / m)
}

/// Unweighted keypoint terms of one batch of matched objects.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KeypointTerms {
    pub l1: f64,
    pub cross_ratio: f64,
    pub skipped: usize,
}

/// Mean absolute keypoint error and mean squared cross-ratio deviation of the
/// predicted edge quadruples. Rows are 16 interleaved `(x, y)` points.
pub fn keypoint_terms(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> Result<KeypointTerms> {
    if pred.len() != gt.len() {
        return Err(Error::shape("keypoint_loss", &[pred.len()], &[gt.len()]));
    }
    let mut out = KeypointTerms::default();
    if pred.is_empty() {
        return Ok(out);
    }
    let mut abs = 0.0;
    let mut cr_sum = 0.0;
    let mut cr_count = 0;
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != 2 * NUM_KEYPOINTS || g.len() != 2 * NUM_KEYPOINTS {
            return Err(Error::shape("keypoint_loss", &[p.len()], &[g.len()]));
        }
        abs += p.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let pt = |k: usize| [p[2 * k], p[2 * k + 1]];
        for q in IBB_EDGE_QUADRUPLES {
            match cross_ratio_unsigned(pt(q[0]), pt(q[1]), pt(q[2]), pt(q[3])) {
                Some(cr) => {
                    cr_sum += (cr - CANONICAL_CROSS_RATIO).powi(2);
                    cr_count += 1;
                }
                None => out.skipped += 1,
            }
        }
    }
    out.l1 = abs / (pred.len() * 2 * NUM_KEYPOINTS) as f64;
    if cr_count > 0 {
        out.cross_ratio = cr_sum / cr_count as f64;
    }
    Ok(out)
}

/// Weighted keypoint loss.
pub fn keypoint_loss(pred: &[Vec<f64>], gt: &[Vec<f64>], w: &LossWeights) -> Result<f64> {
    let t = keypoint_terms(pred, gt)?;
    Ok(w.w_kpt_l1 * t.l1 + w.w_kpt_crossratio * t.cross_ratio)
}

/// Point-matching rotation loss; symmetric models use closest-point distances.
pub fn shapematch_loss(r_pred: &Matrix3<f64>, r_gt: &Matrix3<f64>, model: &ObjectModel) -> Result<f64> {
    let pts = model.points();
    if pts.is_empty() {
        return Err(Error::Model(format!("class {} has no points", model.class_id)));
    }
    let moved: Vec<_> = pts.iter().map(|x| r_pred * x).collect();
    let target: Vec<_> = pts.iter().map(|x| r_gt * x).collect();
    let sum: f64 = if model.symmetric {
        moved
            .iter()
            .map(|a| {
                target
                    .iter()
                    .map(|b| (a - b).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    } else {
        moved
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).norm_squared())
            .sum()
    };
    Ok(sum / (2.0 * pts.len() as f64))
}

/// Mean Euclidean translation error over matched objects; zero when empty.
pub fn translation_loss(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("translation_loss", &[pred.len()], &[gt.len()]));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Mean over slots of the Euclidean distance between consecutive embeddings.
pub fn temporal_consistency_loss(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::shape(
            "temporal_consistency_loss",
            &[a.len(), a.first().map_or(0, Vec::len)],
            &[b.len(), b.first().map_or(0, Vec::len)],
        ));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(sum / a.len() as f64)
}

/// Per-slot outputs of one frame, recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FrameOutputs<'t> {
    /// `N × (C + 1)` class distribution.
    pub class_probs: Var<'t>,
    /// `N × 4` normalized `(cx, cy, w, h)`.
    pub boxes: Var<'t>,
    /// `N × 32` normalized keypoints.
    pub keypoints: Var<'t>,
    /// `N × 9`: translation then the 6D rotation.
    pub pose: Var<'t>,
    /// `N × D` decoder embeddings.
    pub embeddings: Var<'t>,
}

/// One supervised frame: outputs, visible ground truth and the matching.
pub struct SupervisedFrame<'a, 't> {
    pub outputs: FrameOutputs<'t>,
    pub targets: &'a FrameAnnotation,
    pub assignment: &'a Assignment,
}

/// Weighted training loss over supervised frames plus temporal consistency between
/// consecutive embedding sets. Each component is averaged over the frames.
pub fn hungarian_loss<'t>(
    tape: &'t Tape,
    frames: &[SupervisedFrame<'_, 't>],
    embeddings: &[Var<'t>],
    catalog: &ObjectCatalog,
    w: &LossWeights,
) -> Result<(Var<'t>, LossReport)> {
    if frames.is_empty() {
        return Err(Error::Contract("loss over zero frames".into()));
    }
    let zero = || tape.constant(Tensor::scalar(0.0));
    let mut report = LossReport::default();
    let mut class = Vec::new();
    let mut parts: [Vec<Var<'t>>; 6] = Default::default();
    for f in frames {
        let no_object = f.outputs.class_probs.shape()[1] - 1;
        let slots = f.outputs.class_probs.shape()[0];
        let targets = f.assignment.slot_targets(slots, f.targets, no_object);
        let (c, sat) = diff::class_loss(tape, f.outputs.class_probs, &targets, w.w_nll_null)?;
        class.push(c);
        report.saturated += sat;

        let pred_rows: Vec<usize> = f.assignment.pairs.iter().map(|p| p.0).collect();
        let objects: Vec<_> = f.assignment.pairs.iter().map(|p| &f.targets.objects[p.1]).collect();
        report.matched += objects.len();
        if objects.is_empty() {
            for p in parts.iter_mut() {
                p.push(zero());
            }
            continue;
        }
        let gt_boxes: Vec<[f64; 4]> = objects.iter().map(|o| o.bbox.as_array()).collect();
        let gt_kpts: Vec<_> = objects.iter().map(|o| o.keypoints_flat()).collect();
        let gt_t: Vec<[f64; 3]> = objects.iter().map(|o| o.pose.translation.into()).collect();
        let gt_r: Vec<Matrix3<f64>> = objects.iter().map(|o| o.pose.rotation).collect();
        let models = objects
            .iter()
            .map(|o| catalog.get(o.class_id))
            .collect::<Result<Vec<_>>>()?;

        let boxes = f.outputs.boxes.index_select(&pred_rows)?;
        let (l1, g) = diff::bbox_terms(tape, boxes, tape.constant(Tensor::from_rows(&gt_boxes)?))?;
        let kpts = f.outputs.keypoints.index_select(&pred_rows)?;
        let (kl1, cr, skipped) = diff::keypoint_terms(tape, kpts, tape.constant(Tensor::from_rows(&gt_kpts)?))?;
        report.skipped_quadruples += skipped;
        let pose = f.outputs.pose.index_select(&pred_rows)?;
        let t = diff::translation_loss(pose.slice(1, 0, 3)?, tape.constant(Tensor::from_rows(&gt_t)?))?;
        let s = diff::shapematch_loss(tape, pose.slice(1, 3, 9)?, &gt_r, &models)?;
        for (slot, v) in parts.iter_mut().zip([l1, g, kl1, cr, s, t]) {
            slot.push(v);
        }
    }
    let temporal = if embeddings.len() >= 2 {
        let terms = embeddings
            .windows(2)
            .map(|p| diff::temporal_consistency_loss(p[0], p[1]))
            .collect::<Result<Vec<_>>>()?;
        mean_of(tape, &terms)?
    } else {
        zero()
    };
    let class = mean_of(tape, &class)?;
    let [l1, g, kl1, cr, s, t] = parts.map(|p| mean_of(tape, &p).expect("one entry per frame"));

    report.class = class.item()?;
    report.bbox_l1 = l1.item()?;
    report.bbox_giou = g.item()?;
    report.kpt_l1 = kl1.item()?;
    report.kpt_cross_ratio = cr.item()?;
    report.shapematch = s.item()?;
    report.translation = t.item()?;
    report.temporal = temporal.item()?;

    let total = class
        .add(l1.scale(w.w_bbox_l1))?
        .add(g.scale(w.w_bbox_giou))?
        .add(kl1.scale(w.w_kpt_l1))?
        .add(cr.scale(w.w_kpt_crossratio))?
        .add(s.add(t)?.scale(w.w_pose))?
        .add(temporal.scale(w.w_temporal))?;
    report.total = total.item()?;
    Ok((total, report))
}

fn mean_of<'t>(tape: &'t Tape, terms: &[Var<'t>]) -> Result<Var<'t>> {
    if terms.is_empty() {
        return Err(Error::Contract("mean of zero terms".into()));
    }
    let scalars = terms
        .iter()
        .map(|v| v.reshape(&[1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(tape.concat(&scalars, 0)?.mean())
}

/// Differentiable forms of the loss terms.
pub mod diff {
    use super::*;

    /// Mean weighted negative log-likelihood of `targets` under `probs` (`N × (C+1)`).
    pub fn class_loss<'t>(
        tape: &'t Tape,
        probs: Var<'t>,
        targets: &[usize],
        null_weight: f64,
    ) -> Result<(Var<'t>, usize)> {
        let shape = probs.shape();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::shape("class_loss", &shape, &[targets.len()]));
        }
        let (n, k) = (shape[0], shape[1]);
        if n == 0 {
            return Ok((tape.constant(Tensor::scalar(0.0)), 0));
        }
        let mut onehot = Tensor::zeros(vec![n, k]);
        let mut weight = Tensor::zeros(vec![n, 1]);
        let mut saturated = 0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::Contract(format!("target {t} outside {k} classes")));
            }
            onehot.data_mut()[i * k + t] = 1.0;
            weight.data_mut()[i] = if t + 1 == k { null_weight } else { 1.0 };
            if probs.value().data()[i * k + t] < PROB_EPS {
                saturated += 1;
            }
        }
        let p = probs.mul(tape.constant(onehot))?.sum_axis(1)?;
        let nll = p.clamp_min(PROB_EPS).log().neg().mul(tape.constant(weight))?;
        Ok((nll.mean(), saturated))
    }

    /// Row-wise GIoU of two `M × 4` box tensors, shape `M × 1`.
    pub fn giou<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let corners = |v: Var<'t>| -> Result<[Var<'t>; 4]> {
            let (cx, cy) = (v.slice(1, 0, 1)?, v.slice(1, 1, 2)?);
            let (hw, hh) = (v.slice(1, 2, 3)?.scale(0.5), v.slice(1, 3, 4)?.scale(0.5));
            Ok([cx.sub(hw)?, cy.sub(hh)?, cx.add(hw)?, cy.add(hh)?])
        };
        let [a0, a1, a2, a3] = corners(a)?;
        let [b0, b1, b2, b3] = corners(b)?;
        let area = |v: Var<'t>| -> Result<Var<'t>> { v.slice(1, 2, 3)?.mul(v.slice(1, 3, 4)?) };
        let iw = a2.minimum(b2)?.sub(a0.maximum(b0)?)?.clamp_min(0.0);
        let ih = a3.minimum(b3)?.sub(a1.maximum(b1)?)?.clamp_min(0.0);
        let inter = iw.mul(ih)?;
        let union = area(a)?.add(area(b)?)?.sub(inter)?;
        let hull = a2
            .maximum(b2)?
            .sub(a0.minimum(b0)?)?
            .mul(a3.maximum(b3)?.sub(a1.minimum(b1)?)?)?;
        inter.div(union)?.sub(hull.sub(union)?.div(hull)?)
    }

    /// Mean per-box ℓ1 distance and mean `1 - GIoU` of matched boxes.
    pub fn bbox_terms<'t>(tape: &'t Tape, pred: Var<'t>, gt: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        if pred.shape()[0] == 0 {
            let z = tape.constant(Tensor::scalar(0.0));
            return Ok((z, z));
        }
        let l1 = pred.sub(gt)?.abs().sum_axis(1)?.mean();
        let g = giou(pred, gt)?.neg().add_scalar(1.0).mean();
        Ok((l1, g))
    }

    /// Selects keypoint `k` as an `M × 2` tensor from `M × 32`.
    fn point<'t>(tape: &'t Tape, kpts: Var<'t>, k: usize) -> Result<Var<'t>> {
        let mut sel = Tensor::zeros(vec![2 * NUM_KEYPOINTS, 2]);
        sel.data_mut()[(2 * k) * 2] = 1.0;
        sel.data_mut()[(2 * k + 1) * 2 + 1] = 1.0;
        kpts.matmul(tape.constant(sel))
    }

    fn dist<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        Ok(a.sub(b)?.square()?.sum_axis(1)?.sqrt())
    }

    /// Mean absolute keypoint error, mean squared cross-ratio deviation over
    /// non-degenerate edge quadruples, and the number of skipped quadruples.
    pub fn keypoint_terms<'t>(
        tape: &'t Tape,
        pred: Var<'t>,
        gt: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>, usize)> {
        let m = pred.shape()[0];
        let zero = tape.constant(Tensor::scalar(0.0));
        if m == 0 {
            return Ok((zero, zero, 0));
        }
        let l1 = pred.sub(gt)?.abs().mean();
        let values = pred.value().clone();
        let mut terms = Vec::new();
        let mut skipped = 0;
        for q in IBB_EDGE_QUADRUPLES {
            let rows: Vec<usize> = (0..m)
                .filter(|&i| {
                    let r = values.row(i);
                    let pt = |k: usize| [r[2 * k], r[2 * k + 1]];
                    cross_ratio_unsigned(pt(q[0]), pt(q[1]), pt(q[2]), pt(q[3])).is_some()
                })
                .collect();
            skipped += m - rows.len();
            if rows.is_empty() {
                continue;
            }
            let sub = pred.index_select(&rows)?;
            let [p1, p2, p3, p4] = q.map(|k| point(tape, sub, k).expect("valid keypoint index"));
            let num = dist(p1, p3)?.mul(dist(p2, p4)?)?;
            let den = dist(p2, p3)?.mul(dist(p1, p4)?)?;
            let dev = num.div(den)?.add_scalar(-CANONICAL_CROSS_RATIO).square()?;
            terms.push(dev.reshape(&[rows.len()])?);
        }
        let cr = if terms.is_empty() {
            zero
        } else {
            tape.concat(&terms, 0)?.mean()
        };
        Ok((l1, cr, skipped))
    }

    /// Rotation matrices from `M × 6` rows, returned transposed as `M × 3 × 3`
    /// (row `k` of each block is column `k` of the rotation).
    pub fn rot6d_transposed<'t>(tape: &'t Tape, r: Var<'t>) -> Result<Var<'t>> {
        let m = r.shape()[0];
        let normalize = |v: Var<'t>| -> Result<Var<'t>> {
            v.div(v.square()?.sum_axis(1)?.sqrt().clamp_min(NORM_EPS))
        };
        let b1 = normalize(r.slice(1, 0, 3)?)?;
        let a2 = r.slice(1, 3, 6)?;
        let b2 = normalize(a2.sub(b1.mul(b1.mul(a2)?.sum_axis(1)?)?)?)?;
        let c = |v: Var<'t>, k: usize| v.slice(1, k, k + 1);
        let b3 = tape.concat(
            &[
                c(b1, 1)?.mul(c(b2, 2)?)?.sub(c(b1, 2)?.mul(c(b2, 1)?)?)?,
                c(b1, 2)?.mul(c(b2, 0)?)?.sub(c(b1, 0)?.mul(c(b2, 2)?)?)?,
                c(b1, 0)?.mul(c(b2, 1)?)?.sub(c(b1, 1)?.mul(c(b2, 0)?)?)?,
            ],
            1,
        )?;
        let rows = [b1, b2, b3].map(|b| b.reshape(&[m, 1, 3]).expect("M x 3 rows"));
        tape.concat(&rows, 1)
    }

    /// Mean shapematch loss of `M × 6` predicted rotations against ground truth.
    pub fn shapematch_loss<'t>(
        tape: &'t Tape,
        rot6d: Var<'t>,
        gt: &[Matrix3<f64>],
        models: &[&ObjectModel],
    ) -> Result<Var<'t>> {
        let m = rot6d.shape()[0];
        if m != gt.len() || m != models.len() {
            return Err(Error::shape("shapematch_loss", &[m], &[gt.len(), models.len()]));
        }
        if m == 0 {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        }
        let rt = rot6d_transposed(tape, rot6d)?;
        let mut terms = Vec::with_capacity(m);
        for (k, (r_gt, model)) in gt.iter().zip(models).enumerate() {
            let pts = model.points();
            if pts.is_empty() {
                return Err(Error::Model(format!("class {} has no points", model.class_id)));
            }
            let n = pts.len();
            let x = Tensor::from_rows(&pts.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>())?;
            let target: Vec<[f64; 3]> = pts
                .iter()
                .map(|p| {
                    let q = r_gt * p;
                    [q.x, q.y, q.z]
                })
                .collect();
            let moved = tape.constant(x).matmul(rt.slice(0, k, k + 1)?.reshape(&[3, 3])?)?;
            let sq = if model.symmetric {
                let y = Tensor::from_rows(&target)?;
                let y_sq: Vec<f64> = target.iter().map(|q| q.iter().map(|v| v * v).sum()).collect();
                let cross = moved.matmul(tape.constant(y).transpose()?)?;
                let d = moved
                    .square()?
                    .sum_axis(1)?
                    .add(tape.constant(Tensor::new(vec![1, n], y_sq)?))?
                    .sub(cross.scale(2.0))?
                    .clamp_min(0.0);
                d.min_axis(1)?.sum()
            } else {
                moved.sub(tape.constant(Tensor::from_rows(&target)?))?.square()?.sum()
            };
            terms.push(sq.scale(1.0 / (2.0 * n as f64)));
        }
        mean_of(tape, &terms)
    }

    /// Mean Euclidean distance between rows of two `M × 3` tensors.
    pub fn translation_loss<'t>(pred: Var<'t>, gt: Var<'t>) -> Result<Var<'t>> {
        Ok(dist(pred, gt)?.mean())
    }

    /// Mean over slots of the Euclidean distance between rows of two `N × D` tensors.
    pub fn temporal_consistency_loss<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        if a.shape() != b.shape() {
            return Err(Error::shape("temporal_consistency_loss", &a.shape(), &b.shape()));
        }
        Ok(dist(a, b)?.mean())
    }
}

#[cfg(test)]
mod tests;
