//! Windowed training: matching, loss over per-frame and fused outputs, one
//! optimizer step per batch.

use serde::{Deserialize, Serialize};

use crate::annotation::FrameAnnotation;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::ObjectCatalog;
use crate::losses::{diff, hungarian_loss, FrameOutputs, LossReport, LossWeights, SupervisedFrame};
use crate::matcher::{match_sets, Assignment, MatchCostConfig};

use super::{outputs_to_predictions, AdamW, Model, WindowOutputs};

/// `window` consecutive rasters with the targets of every frame.
#[derive(Clone, Debug)]
pub struct TrainingWindow {
    pub rasters: Vec<Tensor>,
    pub targets: Vec<FrameAnnotation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossWeights,
    pub matching: MatchCostConfig,
    /// Supervise every frame's own outputs, not only the fused last frame.
    pub supervise_all_frames: bool,
    /// Use the fused last-frame embedding in the temporal consistency term.
    pub temporal_after_fusion: bool,
    /// Weight, relative to `loss.w_pose`, of the pose loss on ground-truth
    /// keypoints. Gives the pose head a target that does not move while the
    /// keypoint head is still learning.
    pub pose_teacher: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossWeights::default(),
            matching: MatchCostConfig::default(),
            supervise_all_frames: true,
            temporal_after_fusion: false,
            pose_teacher: 1.0,
        }
    }
}

/// Outputs that receive a loss, each with the index of its target frame.
fn supervised<'t>(out: &WindowOutputs<'t>, cfg: &TrainConfig) -> Vec<(FrameOutputs<'t>, usize)> {
    let last = out.per_frame.len() - 1;
    let mut v = Vec::new();
    if cfg.supervise_all_frames {
        v.extend(out.per_frame.iter().copied().zip(0..));
        if !out.fused_is_bypass() {
            v.push((out.fused, last));
        }
    } else {
        v.push((out.fused, last));
    }
    v
}

fn check_window(window: &TrainingWindow, out: &WindowOutputs<'_>) -> Result<()> {
    if window.targets.len() != out.per_frame.len() {
        return Err(Error::Contract(format!(
            "{} target frames for {} outputs",
            window.targets.len(),
            out.per_frame.len()
        )));
    }
    Ok(())
}

/// Optimal slot assignments for every supervised output of a window, in the order
/// [`window_loss`] expects them.
pub fn match_window(out: &WindowOutputs<'_>, window: &TrainingWindow, cfg: &TrainConfig) -> Result<Vec<Assignment>> {
    check_window(window, out)?;
    supervised(out, cfg)
        .iter()
        .map(|(o, i)| match_sets(&outputs_to_predictions(o)?, &window.targets[*i], &cfg.matching))
        .collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.pose_teacher >= 0.0 && self.pose_teacher.is_finite()) {
            return Err(Error::Config(format!("pose_teacher must be nonnegative, got {}", self.pose_teacher)));
        }
        Ok(())
    }
}

/// Pose loss of the pose head on the ground-truth keypoints of every target in
/// the window, or `None` when the window has no targets.
fn teacher_loss<'t>(
    tape: &'t Tape,
    model: &Model,
    store: &'t ParamStore,
    window: &TrainingWindow,
    catalog: &ObjectCatalog,
) -> Result<Option<Var<'t>>> {
    let objects: Vec<_> = window.targets.iter().flat_map(|f| &f.objects).collect();
    if objects.is_empty() {
        return Ok(None);
    }
    let kpts: Vec<_> = objects.iter().map(|o| o.keypoints_flat()).collect();
    let gt_t: Vec<[f64; 3]> = objects.iter().map(|o| o.pose.translation.into()).collect();
    let gt_r: Vec<_> = objects.iter().map(|o| o.pose.rotation).collect();
    let models = objects.iter().map(|o| catalog.get(o.class_id)).collect::<Result<Vec<_>>>()?;
    let pose = model.pose_from_keypoints(tape, store, tape.constant(Tensor::from_rows(&kpts)?))?;
    let t = diff::translation_loss(pose.slice(1, 0, 3)?, tape.constant(Tensor::from_rows(&gt_t)?))?;
    let s = diff::shapematch_loss(tape, pose.slice(1, 3, 9)?, &gt_r, &models)?;
    Ok(Some(s.add(t)?))
}

/// Total training loss of one window: the set loss over supervised outputs plus
/// the pose-teacher term.
#[allow(clippy::too_many_arguments)]
pub fn window_loss<'t>(
    tape: &'t Tape,
    model: &Model,
    store: &'t ParamStore,
    out: &WindowOutputs<'t>,
    window: &TrainingWindow,
    assignments: &[Assignment],
    catalog: &ObjectCatalog,
    cfg: &TrainConfig,
) -> Result<(Var<'t>, LossReport)> {
    check_window(window, out)?;
    let sup = supervised(out, cfg);
    if sup.len() != assignments.len() {
        return Err(Error::Contract(format!(
            "{} assignments for {} supervised outputs",
            assignments.len(),
            sup.len()
        )));
    }
    let frames: Vec<_> = sup
        .iter()
        .zip(assignments)
        .map(|(&(outputs, i), assignment)| SupervisedFrame {
            outputs,
            targets: &window.targets[i],
            assignment,
        })
        .collect();
    let mut embeddings: Vec<Var<'t>> = out.per_frame.iter().map(|f| f.embeddings).collect();
    if cfg.temporal_after_fusion {
        *embeddings.last_mut().expect("window has frames") = out.fused.embeddings;
    }
    let (mut total, mut report) = hungarian_loss(tape, &frames, &embeddings, catalog, &cfg.loss)?;
    if cfg.pose_teacher > 0.0 {
        if let Some(teacher) = teacher_loss(tape, model, store, window, catalog)? {
            report.pose_teacher = teacher.item()?;
            total = total.add(teacher.scale(cfg.pose_teacher * cfg.loss.w_pose))?;
            report.total = total.item()?;
        }
    }
    Ok((total, report))
}

/// Averages per-window reports; counters are summed.
fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let mut m = LossReport::default();
    for r in reports {
        m.class += r.class / n;
        m.bbox_l1 += r.bbox_l1 / n;
        m.bbox_giou += r.bbox_giou / n;
        m.kpt_l1 += r.kpt_l1 / n;
        m.kpt_cross_ratio += r.kpt_cross_ratio / n;
        m.shapematch += r.shapematch / n;
        m.translation += r.translation / n;
        m.temporal += r.temporal / n;
        m.pose_teacher += r.pose_teacher / n;
        m.total += r.total / n;
        m.matched += r.matched;
        m.saturated += r.saturated;
        m.skipped_quadruples += r.skipped_quadruples;
    }
    m
}

/// What one optimizer update saw and did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// 1-based index of the update.
    pub step: u64,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub loss: LossReport,
}

/// One optimizer update on the mean loss of `batch`.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut AdamW,
    batch: &[TrainingWindow],
    catalog: &ObjectCatalog,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    model.params.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let mut reports = Vec::with_capacity(batch.len());
    for (w, window) in batch.iter().enumerate() {
        let tape = Tape::new();
        let (grads, report) = {
            let out = model.forward_window(&tape, &window.rasters)?;
            let assignments = match_window(&out, window, cfg)?;
            let (loss, report) = window_loss(&tape, model, &model.params, &out, window, &assignments, catalog, cfg)?;
            if !report.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss in window {w}: {report:?}")));
            }
            (tape.param_gradients(loss)?, report)
        };
        for (pid, g) in grads {
            model.params.accumulate_grad(pid, &g, scale);
        }
        reports.push(report);
    }
    let grad_norm = optimizer.update(&mut model.params)?;
    Ok(StepReport {
        step: optimizer.step,
        lr: optimizer.config.lr_at(optimizer.step),
        grad_norm,
        loss: mean_report(&reports),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::model::{AdamWConfig, ModelConfig};
    use crate::scenes::{generate_sequence, SceneConfig};

    #[test]
    fn repeated_steps_on_one_window_reduce_the_loss() {
        let scenes = SceneConfig {
            num_classes: 2,
            min_objects: 2,
            max_objects: 2,
            frames: 2,
            camera: CameraIntrinsics { fx: 30.0, fy: 30.0, cx: 8.0, cy: 4.0, width: 16, height: 8 },
            ..SceneConfig::default()
        };
        let catalog = ObjectCatalog::synthetic(2);
        let seq = generate_sequence(&scenes, &catalog, 0).unwrap();
        let window = seq.window_at(1, 2, 0.0).unwrap();
        let mut model = Model::new(ModelConfig::micro(), 3).unwrap();
        let config = AdamWConfig { lr: 1e-2, warmup_steps: 0, ..AdamWConfig::default() };
        let mut opt = AdamW::new(config, &model.params).unwrap();
        let cfg = TrainConfig::default();
        let batch = [window];
        let first = train_step(&mut model, &mut opt, &batch, &catalog, &cfg).unwrap();
        let mut last = first.clone();
        for _ in 0..60 {
            last = train_step(&mut model, &mut opt, &batch, &catalog, &cfg).unwrap();
        }
        assert_eq!(last.step, 61);
        assert!(last.loss.total < 0.5 * first.loss.total, "{} -> {}", first.loss.total, last.loss.total);
    }
}
