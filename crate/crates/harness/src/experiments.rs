//! Fixed-budget training experiments: overfitting one sequence, and the paired
//! comparison of a fused window against single frames.

use std::time::Instant;

use motpose_core::geometry::ObjectCatalog;
use motpose_core::metrics::{
    add_s_combined, associate, cardinality_error, evaluate, false_negative_rate, EvalConfig, EvalSequence, MetricsReport,
    MIN_VISIBILITY,
};
use motpose_core::model::{train_step, AdamW, AdamWConfig, Model, ModelConfig, TrainConfig, TrainingWindow};
use motpose_core::scenes::{generate_dataset, generate_sequence, SceneConfig, SceneSequence};

use crate::data::{catalog_for, TEST_ID_OFFSET};
use crate::error::Result;
use crate::eval::predict_sequences;
use crate::train::batch_indices;

/// Optimizer settings shared by both experiments.
pub fn optimizer(steps: u64) -> AdamWConfig {
    let warmup = 50.min(steps);
    AdamWConfig {
        lr: 2e-3,
        warmup_steps: warmup,
        decay_steps: steps - warmup,
        min_lr_ratio: 0.02,
        ..AdamWConfig::default()
    }
}

/// Trains `model` for `steps` steps on every window of `seqs`, calling `check`
/// after each step; training stops early when it returns true.
pub fn fit(
    model: &mut Model,
    seqs: &[SceneSequence],
    steps: u64,
    batch: usize,
    seed: u64,
    mut check: impl FnMut(u64, &Model) -> Result<bool>,
) -> Result<u64> {
    let catalog = catalog_for(model.config.num_classes);
    let mut opt = AdamW::new(optimizer(steps), &model.params)?;
    let objective = TrainConfig::default();
    let window = model.config.window;
    let index: Vec<(usize, usize)> = seqs
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.len()).map(move |end| (i, end)))
        .collect();
    for step in 1..=steps {
        let windows: Vec<TrainingWindow> = batch_indices(seed, step, batch, index.len())
            .into_iter()
            .map(|k| {
                let (q, end) = index[k];
                seqs[q].window_at(end, window, MIN_VISIBILITY).expect("indexed window exists")
            })
            .collect();
        train_step(model, &mut opt, &windows, &catalog, &objective)?;
        if check(step, model)? {
            return Ok(step);
        }
    }
    Ok(steps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameScores {
    pub cardinality_error: f64,
    pub false_negative_rate: f64,
    /// Mean ADD(-S) over visible objects in units of each object's diameter;
    /// a missed object counts as infinite.
    pub mean_add_rel: f64,
}

/// Streaming predictions on every frame of `seq`, scored frame by frame.
pub fn score_every_frame(model: &Model, seq: &SceneSequence, catalog: &ObjectCatalog) -> Result<FrameScores> {
    let preds = model.predict_sequence(&seq.rasters)?;
    let (mut ce, mut fnr, mut frames) = (0.0, 0.0, 0usize);
    let (mut err, mut objects) = (0.0, 0usize);
    for (ann, p) in seq.annotations.iter().zip(&preds) {
        let gt = ann.visible(MIN_VISIBILITY);
        if let (Some(c), Some(f)) = (cardinality_error(&gt, p), false_negative_rate(&gt, p)) {
            ce += c;
            fnr += f;
            frames += 1;
        }
        for (j, slot) in associate(&gt, p) {
            let obj = &gt.objects[j];
            let model = catalog.get(obj.class_id)?;
            err += match slot.map(|s| p.slots[s].pose()) {
                Some(Ok(pose)) => add_s_combined(&pose, &obj.pose, model)? / model.diameter,
                _ => f64::INFINITY,
            };
            objects += 1;
        }
    }
    let frames = frames.max(1) as f64;
    Ok(FrameScores {
        cardinality_error: ce / frames,
        false_negative_rate: fnr / frames,
        mean_add_rel: if objects == 0 { 0.0 } else { err / objects as f64 },
    })
}

impl FrameScores {
    pub fn overfit(&self) -> bool {
        self.cardinality_error == 0.0 && self.false_negative_rate == 0.0 && self.mean_add_rel < 0.1
    }
}

#[derive(Clone, Debug)]
pub struct OverfitOutcome {
    pub seed: u64,
    pub steps: u64,
    pub scores: FrameScores,
    pub seconds: f64,
}

/// One 12-frame sequence with five unoccluded objects, trained on until every
/// frame is fit or `max_steps` run out. Progress is scored every `check_every`
/// steps.
pub fn overfit(seed: u64, max_steps: u64, check_every: u64) -> Result<OverfitOutcome> {
    let t0 = Instant::now();
    let scenes = SceneConfig {
        min_objects: 5,
        max_objects: 5,
        occlusion_prob: 0.0,
        seed,
        ..SceneConfig::default()
    };
    let catalog = catalog_for(scenes.num_classes);
    let seq = generate_sequence(&scenes, &catalog, 0)?;
    let mut model = Model::new(ModelConfig::default(), seed)?;
    let mut last = None;
    let steps = fit(&mut model, std::slice::from_ref(&seq), max_steps, 3, seed, |step, m| {
        if step % check_every != 0 && step != max_steps {
            return Ok(false);
        }
        let s = score_every_frame(m, &seq, &catalog)?;
        let done = s.overfit();
        last = Some(s);
        Ok(done)
    })?;
    Ok(OverfitOutcome {
        seed,
        steps,
        scores: last.expect("scored at least once"),
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Budget of one arm of the fusion comparison.
#[derive(Clone, Debug)]
pub struct FusionBudget {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub steps: u64,
    pub batch: usize,
}

#[derive(Clone, Debug)]
pub struct FusionArms {
    pub fused: MetricsReport,
    pub single: MetricsReport,
}

impl FusionArms {
    /// The fused arm is at least as accurate and miscounts no more often.
    pub fn fused_no_worse(&self) -> bool {
        let (f, s) = (&self.fused, &self.single);
        f.mean_auc_add_s.unwrap_or(0.0) >= s.mean_auc_add_s.unwrap_or(0.0)
            && f.cardinality_error.unwrap_or(f64::INFINITY) <= s.cardinality_error.unwrap_or(f64::INFINITY)
    }
}

/// Trains the default model with a 4-frame window and with single frames, same
/// seed, data and budget, then scores both on the same test frames.
pub fn fusion_benefit(seed: u64, budget: &FusionBudget, workers: usize) -> Result<FusionArms> {
    let scenes = SceneConfig {
        seed,
        ..SceneConfig::default()
    };
    let catalog = catalog_for(scenes.num_classes);
    let train = generate_dataset(&scenes, &catalog, 0, budget.train_sequences, workers)?;
    let test = generate_dataset(&scenes, &catalog, TEST_ID_OFFSET, budget.test_sequences, workers)?;
    let fused_cfg = ModelConfig::default();
    // Both arms skip the frames the fused one lacks history for.
    let skip = fused_cfg.window - 1;
    let arm = |window: usize| -> Result<MetricsReport> {
        let mut model = Model::new(ModelConfig { window, ..fused_cfg.clone() }, seed)?;
        fit(&mut model, &train, budget.steps, budget.batch, seed, |_, _| Ok(false))?;
        let preds = predict_sequences(&model, &test, workers)?;
        let seqs: Vec<EvalSequence> = test
            .iter()
            .zip(preds)
            .map(|(s, p)| EvalSequence {
                annotations: s.annotations.clone(),
                predictions: p,
            })
            .collect();
        let mut cfg = EvalConfig::new(scenes.num_classes, 1);
        cfg.skip_frames = skip;
        Ok(evaluate(&seqs, &catalog, &cfg)?)
    };
    let fused = arm(fused_cfg.window)?;
    let single = arm(1)?;
    Ok(FusionArms { fused, single })
}
