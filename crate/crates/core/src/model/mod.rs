//! Set-prediction pose network with temporal fusion.
//!
//! Each frame goes through a patch embedding, a transformer encoder and a decoder
//! driven by learned object queries; feed-forward heads then predict classes, boxes,
//! box keypoints and, from the keypoints, the pose. At the last frame of a window
//! the embeddings and predictions of earlier frames are fused in by cross-attention.

mod checkpoint;
mod encoding;
mod fusion;
mod layers;
mod optim;
mod train;


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{BBox, ObjectPrediction, PredictionSet};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::NUM_KEYPOINTS;
use crate::losses::FrameOutputs;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use encoding::{positional_encoding_2d, rfe};
pub use fusion::{BufferedFrame, HistoryFrame, TemporalBuffer};
pub use optim::{AdamW, AdamWConfig};
pub use train::{
    match_window, train_step, window_loss, StepReport, TrainConfig, TrainingWindow,
};

use fusion::{Tefm, Tofm};
use layers::{Builder, Ctx, DecoderLayer, EncoderLayer, Linear};

/// Keypoint head width.
pub const KEYPOINT_DIM: usize = 2 * NUM_KEYPOINTS;
/// Pose head width: translation then the 6D rotation.
pub const POSE_DIM: usize = 9;
/// Scale of centroid-relative keypoints fed to the pose head.
const OFFSET_GAIN: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Raster channels.
    pub in_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub num_queries: usize,
    pub window: usize,
    pub use_tefm: bool,
    pub use_tofm: bool,
    pub use_rfe: bool,
    /// Run the class/box/keypoint heads again on fused embeddings.
    pub reapply_heads: bool,
    /// Initial depth the pose head predicts, in meters.
    pub depth_prior: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 5,
            in_channels: 6,
            image_height: 48,
            image_width: 64,
            patch: 8,
            dim: 64,
            heads: 4,
            ffn_dim: 128,
            enc_layers: 2,
            dec_layers: 2,
            num_queries: 8,
            window: 4,
            use_tefm: true,
            use_tofm: true,
            use_rfe: true,
            reapply_heads: true,
            depth_prior: 0.55,
        }
    }
}

impl ModelConfig {
    /// The smallest useful shape, for gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            num_classes: 2,
            in_channels: 3,
            image_height: 8,
            image_width: 16,
            patch: 4,
            dim: 8,
            heads: 2,
            ffn_dim: 16,
            enc_layers: 1,
            dec_layers: 1,
            num_queries: 2,
            window: 2,
            ..Self::default()
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch, self.image_width / self.patch)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes == 0 || self.in_channels == 0 || self.num_queries == 0 || self.ffn_dim == 0 {
            return bad("class, channel, query and ffn counts must be positive".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.dim == 0 || !self.dim.is_multiple_of(4) {
            return bad(format!("dim {} must be a positive multiple of 4", self.dim));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.patch == 0 || !self.image_height.is_multiple_of(self.patch) || !self.image_width.is_multiple_of(self.patch) {
            return bad(format!(
                "image {}x{} not divisible into {}-pixel patches",
                self.image_width, self.image_height, self.patch
            ));
        }
        if !(self.depth_prior.is_finite() && self.depth_prior > 0.0) {
            return bad(format!("depth prior {} must be positive", self.depth_prior));
        }
        Ok(())
    }
}

/// Parameter handles of every sub-module.
#[derive(Clone, Debug)]
struct Net {
    patch_embed: Linear,
    queries: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    class_head: Linear,
    box_head: [Linear; 2],
    kpt_head: [Linear; 2],
    pose_head: [Linear; 3],
    tefm: Tefm,
    tofm_kpt: Tofm,
    tofm_pose: Tofm,
}

/// Outputs of one window: every frame on its own plus the fused last frame.
#[derive(Clone, Debug)]
pub struct WindowOutputs<'t> {
    pub per_frame: Vec<FrameOutputs<'t>>,
    pub fused: FrameOutputs<'t>,
}

impl WindowOutputs<'_> {
    /// True when fusion changed nothing, so the fused frame is the last per-frame one.
    pub fn fused_is_bypass(&self) -> bool {
        let last = self.per_frame.last().expect("window has frames");
        same_outputs(last, &self.fused)
    }
}

fn same_outputs(a: &FrameOutputs<'_>, b: &FrameOutputs<'_>) -> bool {
    a.class_probs.node_id() == b.class_probs.node_id()
        && a.boxes.node_id() == b.boxes.node_id()
        && a.keypoints.node_id() == b.keypoints.node_id()
        && a.pose.node_id() == b.pose.node_id()
        && a.embeddings.node_id() == b.embeddings.node_id()
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    net: Net,
    pe: Tensor,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let net = build(&config, &mut params, &mut rng);
        let (gh, gw) = config.grid();
        let pe = positional_encoding_2d(gh, gw, config.dim)?;
        Ok(Model { config, params, net, pe })
    }

    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }

    /// Changes the temporal settings of a built model. None of them affect
    /// parameter shapes, so trained weights stay valid.
    pub fn set_fusion(&mut self, window: usize, use_tefm: bool, use_tofm: bool, use_rfe: bool) -> Result<()> {
        let config = ModelConfig {
            window,
            use_tefm,
            use_tofm,
            use_rfe,
            ..self.config.clone()
        };
        config.validate()?;
        self.config = config;
        Ok(())
    }

    /// Flattens non-overlapping patches of a `C × H × W` raster into token rows,
    /// features ordered by channel, then patch row, then patch column.
    pub fn patchify(&self, raster: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let want = [c.in_channels, c.image_height, c.image_width];
        if raster.shape() != want {
            return Err(Error::shape("raster", raster.shape(), &want));
        }
        let (gh, gw) = c.grid();
        let p = c.patch;
        let feat = c.in_channels * p * p;
        let src = raster.data();
        let mut out = Vec::with_capacity(gh * gw * feat);
        for r in 0..gh {
            for col in 0..gw {
                for ch in 0..c.in_channels {
                    for dy in 0..p {
                        let start = (ch * c.image_height + r * p + dy) * c.image_width + col * p;
                        out.extend_from_slice(&src[start..start + p]);
                    }
                }
            }
        }
        Tensor::new(vec![gh * gw, feat], out)
    }

    /// Single-frame forward pass with the model's own parameters.
    pub fn forward_frame<'t>(&'t self, tape: &'t Tape, raster: &Tensor) -> Result<FrameOutputs<'t>> {
        self.forward_frame_with(tape, &self.params, raster)
    }

    /// Single-frame forward pass reading parameters from `store`.
    pub fn forward_frame_with<'t>(&self, tape: &'t Tape, store: &'t ParamStore, raster: &Tensor) -> Result<FrameOutputs<'t>> {
        let cx = Ctx { tape, store };
        let tokens = tape.constant(self.patchify(raster)?);
        let mut x = self.net.patch_embed.apply(cx, tokens)?.add(tape.constant(self.pe.clone()))?;
        for layer in &self.net.encoder {
            x = layer.apply(cx, x)?;
        }
        let mut q = cx.param(self.net.queries);
        for layer in &self.net.decoder {
            q = layer.apply(cx, q, x)?;
        }
        self.heads(cx, q)
    }

    fn heads<'t>(&self, cx: Ctx<'t>, emb: Var<'t>) -> Result<FrameOutputs<'t>> {
        let n = &self.net;
        let class_probs = n.class_head.apply(cx, emb)?.softmax(1)?;
        let boxes = n.box_head[1].apply(cx, n.box_head[0].apply(cx, emb)?.gelu())?.sigmoid();
        let keypoints = n.kpt_head[1].apply(cx, n.kpt_head[0].apply(cx, emb)?.gelu())?.sigmoid();
        let pose = self.pose_head(cx, keypoints)?;
        Ok(FrameOutputs {
            class_probs,
            boxes,
            keypoints,
            pose,
            embeddings: emb,
        })
    }

    /// Keypoints plus their magnified offsets from the per-slot centroid, which
    /// carry the object's shape and orientation.
    fn pose_features<'t>(&self, cx: Ctx<'t>, keypoints: Var<'t>) -> Result<Var<'t>> {
        let n = keypoints.shape()[0];
        let pts = keypoints.reshape(&[n, NUM_KEYPOINTS, 2])?;
        let centroid = pts.sum_axis(1)?.scale(1.0 / NUM_KEYPOINTS as f64);
        let offsets = pts.sub(centroid)?.scale(OFFSET_GAIN).reshape(&[n, KEYPOINT_DIM])?;
        cx.tape.concat(&[keypoints, offsets], 1)
    }

    fn pose_head<'t>(&self, cx: Ctx<'t>, keypoints: Var<'t>) -> Result<Var<'t>> {
        let [a, b, c] = &self.net.pose_head;
        let h = a.apply(cx, self.pose_features(cx, keypoints)?)?.gelu();
        let h = b.apply(cx, h)?.gelu();
        c.apply(cx, h)
    }

    /// Pose head applied to arbitrary `M × 32` keypoints, e.g. ground truth.
    pub fn pose_from_keypoints<'t>(&self, tape: &'t Tape, store: &'t ParamStore, keypoints: Var<'t>) -> Result<Var<'t>> {
        if keypoints.shape().len() != 2 || keypoints.shape()[1] != KEYPOINT_DIM {
            return Err(Error::shape("pose_from_keypoints", &keypoints.shape(), &[0, KEYPOINT_DIM]));
        }
        self.pose_head(Ctx { tape, store }, keypoints)
    }

    /// Fuses `history` (oldest first) into the current frame's outputs. Returns
    /// `current` untouched when there is nothing to fuse or fusion is off.
    pub fn fuse_with<'t>(
        &self,
        tape: &'t Tape,
        store: &'t ParamStore,
        history: &[HistoryFrame<'t>],
        current: FrameOutputs<'t>,
    ) -> Result<FrameOutputs<'t>> {
        let c = &self.config;
        if history.is_empty() || !(c.use_tefm || c.use_tofm) {
            return Ok(current);
        }
        if history.len() >= c.window {
            return Err(Error::Contract(format!(
                "{} history frames for a window of {}",
                history.len(),
                c.window
            )));
        }
        let cx = Ctx { tape, store };
        let mut out = current;
        if c.use_tefm {
            let past: Vec<_> = history.iter().map(|h| h.embeddings).collect();
            let fused = self.net.tefm.apply(cx, &past, current.embeddings, c.window, c.use_rfe)?;
            out = if c.reapply_heads {
                self.heads(cx, fused)?
            } else {
                FrameOutputs {
                    embeddings: fused,
                    ..current
                }
            };
        }
        if c.use_tofm {
            let past: Vec<_> = history.iter().map(|h| h.keypoints).collect();
            let kpts = self.net.tofm_kpt.apply(cx, &past, out.keypoints, c.window, c.dim, c.use_rfe)?;
            let pose = self.pose_head(cx, kpts)?;
            let past: Vec<_> = history.iter().map(|h| h.pose).collect();
            out.pose = self.net.tofm_pose.apply(cx, &past, pose, c.window, c.dim, c.use_rfe)?;
            out.keypoints = kpts;
        }
        Ok(out)
    }

    pub fn forward_window<'t>(&'t self, tape: &'t Tape, rasters: &[Tensor]) -> Result<WindowOutputs<'t>> {
        self.forward_window_with(tape, &self.params, rasters)
    }

    /// Runs every frame of a window with shared weights and fuses the last one.
    pub fn forward_window_with<'t>(&self, tape: &'t Tape, store: &'t ParamStore, rasters: &[Tensor]) -> Result<WindowOutputs<'t>> {
        // Shorter windows are the start of a sequence, before the buffer fills.
        if rasters.is_empty() || rasters.len() > self.config.window {
            return Err(Error::Contract(format!(
                "window of {} frames, model takes 1 to {}",
                rasters.len(),
                self.config.window
            )));
        }
        let per_frame = rasters
            .iter()
            .map(|r| self.forward_frame_with(tape, store, r))
            .collect::<Result<Vec<_>>>()?;
        let (current, past) = per_frame.split_last().expect("window is nonempty");
        let history: Vec<_> = past
            .iter()
            .map(|f| HistoryFrame {
                embeddings: f.embeddings,
                keypoints: f.keypoints,
                pose: f.pose,
            })
            .collect();
        let fused = self.fuse_with(tape, store, &history, *current)?;
        Ok(WindowOutputs { per_frame, fused })
    }

    /// Inference on the next frame of a sequence. Returns the fused predictions and
    /// records the frame's own outputs in `buffer`.
    pub fn step(&self, raster: &Tensor, buffer: &mut TemporalBuffer) -> Result<PredictionSet> {
        let tape = Tape::new();
        let current = self.forward_frame(&tape, raster)?;
        let history = buffer.history(&tape);
        let fused = self.fuse_with(&tape, &self.params, &history, current)?;
        let preds = outputs_to_predictions(&fused)?;
        buffer.push(BufferedFrame {
            embeddings: current.embeddings.value().clone(),
            keypoints: current.keypoints.value().clone(),
            pose: current.pose.value().clone(),
        });
        Ok(preds)
    }

    /// Predictions for every frame of a sequence, starting from an empty buffer.
    pub fn predict_sequence(&self, rasters: &[Tensor]) -> Result<Vec<PredictionSet>> {
        let mut buffer = TemporalBuffer::new(self.config.window);
        rasters.iter().map(|r| self.step(r, &mut buffer)).collect()
    }
}

fn build(c: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Net {
    let d = c.dim;
    let mut b = Builder { store, rng };
    let patch_embed = b.linear("backbone.patch", c.in_channels * c.patch * c.patch, d, 1.0);
    let query_data = (0..c.num_queries * d).map(|_| b.rng.gen_range(-1.0..1.0)).collect();
    let queries = b
        .store
        .add("decoder.queries", Tensor::new(vec![c.num_queries, d], query_data).expect("sized"));
    let encoder = (0..c.enc_layers)
        .map(|i| {
            let p = format!("encoder.{i}");
            EncoderLayer {
                norm1: b.norm(&format!("{p}.norm1"), d),
                attn: b.attention(&format!("{p}.attn"), d, c.heads),
                norm2: b.norm(&format!("{p}.norm2"), d),
                ffn: b.ffn(&format!("{p}.ffn"), d, c.ffn_dim),
            }
        })
        .collect();
    let decoder = (0..c.dec_layers)
        .map(|i| {
            let p = format!("decoder.{i}");
            DecoderLayer {
                norm1: b.norm(&format!("{p}.norm1"), d),
                self_attn: b.attention(&format!("{p}.self_attn"), d, c.heads),
                norm2: b.norm(&format!("{p}.norm2"), d),
                cross_attn: b.attention(&format!("{p}.cross_attn"), d, c.heads),
                norm3: b.norm(&format!("{p}.norm3"), d),
                ffn: b.ffn(&format!("{p}.ffn"), d, c.ffn_dim),
            }
        })
        .collect();
    let class_head = b.linear("heads.class", d, c.num_classes + 1, 1.0);
    let box_head = [b.linear("heads.box.0", d, d, 1.0), b.linear("heads.box.1", d, 4, 1.0)];
    let kpt_head = [
        b.linear("heads.keypoints.0", d, d, 1.0),
        b.linear("heads.keypoints.1", d, KEYPOINT_DIM, 1.0),
    ];
    let pose_head = [
        b.linear("heads.pose.0", 2 * KEYPOINT_DIM, d, 1.0),
        b.linear("heads.pose.1", d, d, 1.0),
        b.linear("heads.pose.2", d, POSE_DIM, 0.1),
    ];
    // Start from an identity rotation at a plausible depth.
    let mut prior = vec![0.0; POSE_DIM];
    prior[2] = c.depth_prior;
    prior[3] = 1.0;
    prior[7] = 1.0;
    b.store.get_mut(pose_head[2].b).value = Tensor::vector(prior);
    let tefm = Tefm {
        proj: b.linear("tefm.proj", 2 * d, d, 1.0),
        attn: b.attention("tefm.attn", d, c.heads),
        norm: b.norm("tefm.norm", d),
    };
    let tofm = |b: &mut Builder<'_>, name: &str, width: usize| Tofm {
        inp: b.linear(&format!("{name}.in"), width, d, 1.0),
        attn: b.attention(&format!("{name}.attn"), d, c.heads),
        out: b.linear(&format!("{name}.out"), d, width, 0.1),
    };
    let tofm_kpt = tofm(&mut b, "tofm_keypoints", KEYPOINT_DIM);
    let tofm_pose = tofm(&mut b, "tofm_pose", POSE_DIM);
    Net {
        patch_embed,
        queries,
        encoder,
        decoder,
        class_head,
        box_head,
        kpt_head,
        pose_head,
        tefm,
        tofm_kpt,
        tofm_pose,
    }
}

/// Reads one frame's outputs into plain predictions, one per query slot.
fn rows(v: &Var<'_>) -> Vec<Vec<f64>> {
    let t = v.value();
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

pub fn outputs_to_predictions(outputs: &FrameOutputs<'_>) -> Result<PredictionSet> {
    let probs = rows(&outputs.class_probs);
    let boxes = rows(&outputs.boxes);
    let kpts = rows(&outputs.keypoints);
    let pose = rows(&outputs.pose);
    let slots = (0..probs.len())
        .map(|i| {
            let p = &pose[i];
            let b = &boxes[i];
            for v in probs[i].iter().chain(b).chain(&kpts[i]).chain(p) {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("non-finite output in slot {i}")));
                }
            }
            Ok(ObjectPrediction {
                class_probs: probs[i].clone(),
                bbox: BBox::new(b[0], b[1], b[2], b[3]),
                keypoints: kpts[i].clone(),
                translation: [p[0], p[1], p[2]],
                rotation6d: [p[3], p[4], p[5], p[6], p[7], p[8]],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionSet { slots })
}
