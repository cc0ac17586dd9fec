//! Synthetic multi-object videos: objects drifting and spinning inside a tote,
//! with per-frame ground truth and a simple rasterizer that produces model inputs.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{BBox, FrameAnnotation, ObjectAnnotation};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::{
    axis_angle, ibb_keypoints, random_rotation, CameraIntrinsics, ObjectCatalog, Pose, NUM_KEYPOINTS,
};
use crate::model::TrainingWindow;

pub const DATASET_FORMAT: &str = "motpose-scenes";
pub const DATASET_VERSION: u32 = 1;

/// Depth at which a fully visible object renders with intensity 1.
const REFERENCE_DEPTH: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Draw classes without replacement when there are enough of them.
    pub distinct_classes: bool,
    pub frames: usize,
    /// Corners of the box object centers stay in, camera frame, meters.
    pub tote_min: [f64; 3],
    pub tote_max: [f64; 3],
    /// Smallest center distance at placement, meters.
    pub min_separation: f64,
    pub placement_tries: usize,
    /// Upper bound on linear speed, m/s.
    pub max_speed: f64,
    /// Upper bound on angular speed, rad/s.
    pub max_angular_speed: f64,
    /// Seconds per frame.
    pub dt: f64,
    /// Chance that an object gets one occlusion span.
    pub occlusion_prob: f64,
    pub occlusion_frames: [usize; 2],
    pub occlusion_visibility: [f64; 2],
    pub camera: CameraIntrinsics,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            num_classes: 5,
            min_objects: 3,
            max_objects: 5,
            distinct_classes: true,
            frames: 12,
            tote_min: [-0.07, -0.04, 0.45],
            tote_max: [0.07, 0.04, 0.65],
            min_separation: 0.06,
            placement_tries: 200,
            max_speed: 0.3,
            max_angular_speed: 1.5,
            dt: 1.0 / 30.0,
            occlusion_prob: 0.3,
            occlusion_frames: [2, 5],
            occlusion_visibility: [0.35, 0.6],
            camera: CameraIntrinsics {
                fx: 120.0,
                fy: 120.0,
                cx: 32.0,
                cy: 24.0,
                width: 64,
                height: 48,
            },
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// One occupancy channel per class plus an inverse-depth channel.
    pub fn raster_channels(&self) -> usize {
        self.num_classes + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene config: {m}")));
        self.camera.validate()?;
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if self.frames == 0 {
            return bad("frames must be positive");
        }
        if (0..3).any(|k| !(self.tote_min[k] < self.tote_max[k])) {
            return bad("tote_min must be below tote_max on every axis");
        }
        if self.tote_min[2] <= 0.0 {
            return bad("tote must lie in front of the camera");
        }
        let nonneg = [self.min_separation, self.max_speed, self.max_angular_speed];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("separation and speeds must be finite and non-negative");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(0.0..=1.0).contains(&self.occlusion_prob) {
            return bad("occlusion_prob outside [0, 1]");
        }
        let [f0, f1] = self.occlusion_frames;
        if f0 == 0 || f0 > f1 {
            return bad("occlusion_frames must be a nonempty range of positive lengths");
        }
        let [v0, v1] = self.occlusion_visibility;
        if !(0.0 <= v0 && v0 <= v1 && v1 <= 1.0) {
            return bad("occlusion_visibility must be an ordered range inside [0, 1]");
        }
        if self.placement_tries == 0 {
            return bad("placement_tries must be positive");
        }
        Ok(())
    }
}

/// One generated video.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSequence {
    pub id: usize,
    /// Annotations of every frame; object `k` is the same object in all of them.
    pub annotations: Vec<FrameAnnotation>,
    /// `C × H × W` model inputs, one per frame.
    pub rasters: Vec<Tensor>,
}

impl SceneSequence {
    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    /// The window ending at frame `end`: `window` consecutive frames, or all
    /// frames so far near the start. Targets keep only objects visible enough to
    /// supervise.
    pub fn window_at(&self, end: usize, window: usize, min_visibility: f64) -> Option<TrainingWindow> {
        if window == 0 || end >= self.len() {
            return None;
        }
        let start = (end + 1).saturating_sub(window);
        Some(TrainingWindow {
            rasters: self.rasters[start..=end].to_vec(),
            targets: self.annotations[start..=end]
                .iter()
                .map(|a| a.visible(min_visibility))
                .collect(),
        })
    }

    /// One window ending at every frame.
    pub fn windows(&self, window: usize, min_visibility: f64) -> Vec<TrainingWindow> {
        (0..self.len())
            .filter_map(|end| self.window_at(end, window, min_visibility))
            .collect()
    }
}

/// Kinematic state of one object.
struct Body {
    class_id: usize,
    position: Vector3<f64>,
    velocity: Vector3<f64>,
    rotation0: nalgebra::Matrix3<f64>,
    /// Angular velocity axis (unit) and speed.
    spin_axis: Vector3<f64>,
    spin: f64,
    /// Frames `[start, end)` rendered at `occluded_visibility`.
    occlusion: Option<(usize, usize, f64)>,
}

fn sequence_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Reflects `p` back into `[lo, hi]`, flipping `v` on each wall hit.
fn reflect(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    for _ in 0..4 {
        if *p < lo {
            *p = 2.0 * lo - *p;
            *v = -*v;
        } else if *p > hi {
            *p = 2.0 * hi - *p;
            *v = -*v;
        } else {
            return;
        }
    }
    *p = p.clamp(lo, hi);
}

fn spawn(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Body>> {
    let count = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let classes: Vec<usize> = if cfg.distinct_classes && count <= cfg.num_classes {
        sample(rng, cfg.num_classes, count).into_vec()
    } else {
        (0..count).map(|_| rng.gen_range(0..cfg.num_classes)).collect()
    };
    let mut bodies: Vec<Body> = Vec::with_capacity(count);
    for class_id in classes {
        let mut tries = 0;
        let position = loop {
            let p = Vector3::from_fn(|k, _| uniform(rng, cfg.tote_min[k], cfg.tote_max[k]));
            if bodies.iter().all(|b| (b.position - p).norm() >= cfg.min_separation) {
                break p;
            }
            tries += 1;
            if tries >= cfg.placement_tries {
                return Err(Error::Generation(format!(
                    "could not place object {} of {count} after {tries} tries",
                    bodies.len()
                )));
            }
        };
        let velocity = random_unit(rng) * uniform(rng, 0.0, cfg.max_speed);
        let rotation0 = random_rotation(rng);
        let spin_axis = random_unit(rng);
        let spin = uniform(rng, 0.0, cfg.max_angular_speed);
        let occlusion = if rng.gen_bool(cfg.occlusion_prob) {
            let len = rng.gen_range(cfg.occlusion_frames[0]..=cfg.occlusion_frames[1]).min(cfg.frames);
            let start = rng.gen_range(0..=cfg.frames - len);
            let [v0, v1] = cfg.occlusion_visibility;
            Some((start, start + len, uniform(rng, v0, v1)))
        } else {
            None
        };
        bodies.push(Body {
            class_id,
            position,
            velocity,
            rotation0,
            spin_axis,
            spin,
            occlusion,
        });
    }
    Ok(bodies)
}

/// Ground truth of one object at one pose.
pub fn annotate(
    catalog: &ObjectCatalog,
    camera: &CameraIntrinsics,
    class_id: usize,
    pose: Pose,
    visibility: f64,
) -> Result<ObjectAnnotation> {
    let model = catalog.get(class_id)?;
    let ibb = ibb_keypoints(model, &pose, camera)?;
    let mut keypoints = [[0.0; 2]; NUM_KEYPOINTS];
    for (dst, src) in keypoints.iter_mut().zip(&ibb.projected_2d) {
        *dst = camera.normalize(*src);
    }
    let bbox = BBox::enclosing(&keypoints).clipped();
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::Generation(format!("class {class_id} projects outside the image")));
    }
    Ok(ObjectAnnotation {
        class_id,
        pose,
        bbox,
        keypoints,
        visibility,
    })
}

/// Generates sequence `id`; the result depends only on `(cfg, id)`.
pub fn generate_sequence(cfg: &SceneConfig, catalog: &ObjectCatalog, id: usize) -> Result<SceneSequence> {
    cfg.validate()?;
    if catalog.len() < cfg.num_classes {
        return Err(Error::Config(format!(
            "catalog has {} classes, scenes need {}",
            catalog.len(),
            cfg.num_classes
        )));
    }
    let mut rng = sequence_rng(cfg.seed, id);
    let mut bodies = spawn(cfg, &mut rng)?;
    let mut annotations = Vec::with_capacity(cfg.frames);
    let mut rasters = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 {
            for b in &mut bodies {
                b.position += b.velocity * cfg.dt;
                for k in 0..3 {
                    reflect(&mut b.position[k], &mut b.velocity[k], cfg.tote_min[k], cfg.tote_max[k]);
                }
            }
        }
        let objects = bodies
            .iter()
            .map(|b| {
                // Closed form avoids drift from composing many small rotations.
                let spin = if b.spin > 0.0 {
                    axis_angle(b.spin_axis, b.spin * cfg.dt * t as f64)
                } else {
                    nalgebra::Matrix3::identity()
                };
                let pose = Pose {
                    rotation: spin * b.rotation0,
                    translation: b.position,
                };
                let visibility = match b.occlusion {
                    Some((s, e, v)) if (s..e).contains(&t) => v,
                    _ => 1.0,
                };
                annotate(catalog, &cfg.camera, b.class_id, pose, visibility)
            })
            .collect::<Result<Vec<_>>>()?;
        let frame = FrameAnnotation { objects };
        rasters.push(rasterize(&frame, catalog, cfg)?.grid);
        annotations.push(frame);
    }
    Ok(SceneSequence { id, annotations, rasters })
}

/// Sequences `first..first + count`, split over `workers` threads. The output does
/// not depend on the worker count.
pub fn generate_dataset(
    cfg: &SceneConfig,
    catalog: &ObjectCatalog,
    first: usize,
    count: usize,
    workers: usize,
) -> Result<Vec<SceneSequence>> {
    cfg.validate()?;
    let workers = workers.clamp(1, count.max(1));
    let ids: Vec<usize> = (first..first + count).collect();
    let chunk = ids.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<SceneSequence>>> = std::thread::scope(|s| {
        let handles: Vec<_> = ids
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|&id| generate_sequence(cfg, catalog, id)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("generator thread")).collect()
    });
    let mut out = Vec::with_capacity(count);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// A rendered frame and the objects that could not be drawn.
#[derive(Clone, Debug)]
pub struct Raster {
    pub grid: Tensor,
    /// Indices of objects skipped for lying behind the camera.
    pub skipped: Vec<usize>,
}

/// Convex hull of 2D points, counter-clockwise in a y-up frame.
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

/// Sub-samples per pixel side when estimating coverage.
const SUPERSAMPLE: usize = 4;

/// Brightness of box face `2 * axis + (positive side)`. Distinct values make the
/// orientation readable from the image, which a flat silhouette is not.
const FACE_SHADE: [f64; 6] = [0.40, 0.52, 0.64, 0.76, 0.88, 1.00];

/// Corners of the face normal to `axis` on the given side, as indices into the
/// IBB corners (bit 0 is x, bit 1 is y, bit 2 is z), in cyclic order.
fn face_corners(axis: usize, positive: bool) -> [usize; 4] {
    let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
    let base = if positive { 1 << axis } else { 0 };
    [0, 1 << b, (1 << b) | (1 << c), 1 << c].map(|k| base | k)
}

/// Camera-facing box faces of one object as image polygons with their shade.
fn visible_faces(obj: &ObjectAnnotation, corners: &[[f64; 2]], extents: [f64; 3]) -> Vec<(Vec<[f64; 2]>, f64)> {
    let r = &obj.pose.rotation;
    let t = &obj.pose.translation;
    let mut faces = Vec::with_capacity(3);
    for axis in 0..3 {
        for positive in [false, true] {
            let sign = if positive { 1.0 } else { -1.0 };
            let normal = r.column(axis) * sign;
            let center = t + normal * extents[axis];
            if normal.dot(&center) >= 0.0 {
                continue;
            }
            let quad = face_corners(axis, positive).map(|k| corners[k]).to_vec();
            faces.push((convex_hull(quad), FACE_SHADE[2 * axis + positive as usize]));
        }
    }
    faces
}

/// Paints each object's box, far to near, into its class channel and the
/// inverse-depth channel. Pixels hold area coverage, so edges carry sub-pixel
/// position. Class intensity is the face shade times visibility and inverse depth;
/// the depth channel is unshaded. A nearer object covers farther ones in
/// proportion to its coverage.
pub fn rasterize(frame: &FrameAnnotation, catalog: &ObjectCatalog, cfg: &SceneConfig) -> Result<Raster> {
    let cam = &cfg.camera;
    let (w, h, c) = (cam.width, cam.height, cfg.raster_channels());
    let depth_channel = cfg.num_classes;
    let mut grid = vec![0.0; c * h * w];
    let mut order: Vec<usize> = (0..frame.objects.len()).collect();
    order.sort_by(|&a, &b| {
        let (za, zb) = (frame.objects[a].pose.translation.z, frame.objects[b].pose.translation.z);
        zb.total_cmp(&za).then(a.cmp(&b))
    });
    let mut skipped = Vec::new();
    let step = 1.0 / SUPERSAMPLE as f64;
    let samples = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for i in order {
        let obj = &frame.objects[i];
        if obj.class_id >= cfg.num_classes {
            return Err(Error::Contract(format!("object {i} has class {} of {}", obj.class_id, cfg.num_classes)));
        }
        let model = catalog.get(obj.class_id)?;
        let ibb = match ibb_keypoints(model, &obj.pose, cam) {
            Ok(k) => k,
            Err(Error::BehindCamera { .. }) => {
                skipped.push(i);
                continue;
            }
            Err(e) => return Err(e),
        };
        let corners = &ibb.projected_2d[..8];
        let faces = visible_faces(obj, corners, model.ibb_extents);
        let value = obj.visibility * REFERENCE_DEPTH / obj.pose.translation.z;
        let xs = corners.iter().map(|p| p[0]);
        let ys = corners.iter().map(|p| p[1]);
        let x0 = xs.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let x1 = (xs.fold(f64::NEG_INFINITY, f64::max).ceil().max(0.0) as usize).min(w);
        let y0 = ys.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let y1 = (ys.fold(f64::NEG_INFINITY, f64::max).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let (mut cover, mut shade) = (0usize, 0.0);
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let p = [x as f64 + (sx as f64 + 0.5) * step, y as f64 + (sy as f64 + 0.5) * step];
                        // Shared edges belong to the first face that claims them.
                        if let Some((_, s)) = faces.iter().find(|(poly, _)| inside(poly, p)) {
                            cover += 1;
                            shade += s;
                        }
                    }
                }
                if cover == 0 {
                    continue;
                }
                let keep = 1.0 - cover as f64 / samples;
                for ch in 0..c {
                    grid[(ch * h + y) * w + x] *= keep;
                }
                grid[(obj.class_id * h + y) * w + x] += value * shade / samples;
                grid[(depth_channel * h + y) * w + x] += value * cover as f64 / samples;
            }
        }
    }
    Ok(Raster {
        grid: Tensor::new(vec![c, h, w], grid)?,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub config: SceneConfig,
    pub catalog_hash: String,
    pub sequences: usize,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub sequences: Vec<SceneSequence>,
}

impl Dataset {
    pub fn new(config: SceneConfig, catalog: &ObjectCatalog, sequences: Vec<SceneSequence>) -> Self {
        Dataset {
            header: DatasetHeader {
                format: DATASET_FORMAT.into(),
                version: DATASET_VERSION,
                config,
                catalog_hash: catalog.hash(),
                sequences: sequences.len(),
                frames: sequences.iter().map(|s| s.len()).sum(),
            },
            sequences,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RasterRecord {
    shape: Vec<usize>,
    /// Base64 of little-endian `f64` bytes.
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    sequence: usize,
    frame: usize,
    raster: RasterRecord,
    objects: Vec<ObjectAnnotation>,
}

fn encode_raster(t: &Tensor) -> RasterRecord {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    RasterRecord {
        shape: t.shape().to_vec(),
        data: STANDARD.encode(bytes),
    }
}

fn decode_raster(r: &RasterRecord) -> std::result::Result<Tensor, String> {
    let bytes = STANDARD.decode(&r.data).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err("raster byte count is not a multiple of 8".into());
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(r.shape.clone(), data).map_err(|e| e.to_string())
}

/// JSON lines: a header, then one record per frame in sequence order.
pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    serde_json::to_writer(&mut out, &ds.header)?;
    out.write_all(b"\n")?;
    for seq in &ds.sequences {
        for (t, (ann, raster)) in seq.annotations.iter().zip(&seq.rasters).enumerate() {
            let rec = FrameRecord {
                sequence: seq.id,
                frame: t,
                raster: encode_raster(raster),
                objects: ann.objects.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, std::fs::File::create(path)?)
}

/// Parses a dataset. Record 0 is the header; frame records count from 1.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines();
    let parse = |record: usize, message: String| Error::Parse { record, message };
    let first = lines.next().ok_or_else(|| parse(0, "missing header".into()))??;
    let raw: serde_json::Value = serde_json::from_str(&first).map_err(|e| parse(0, e.to_string()))?;
    let version = raw.get("version").and_then(|v| v.as_u64());
    if version != Some(DATASET_VERSION as u64) {
        return Err(Error::Version {
            expected: DATASET_VERSION,
            found: version.unwrap_or(0) as u32,
        });
    }
    let header: DatasetHeader = serde_json::from_value(raw).map_err(|e| parse(0, e.to_string()))?;
    if header.format != DATASET_FORMAT {
        return Err(parse(0, format!("unknown format {:?}", header.format)));
    }
    let mut sequences: Vec<SceneSequence> = Vec::new();
    let mut record = 0;
    for line in lines {
        record += 1;
        let line = line?;
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| parse(record, e.to_string()))?;
        let raster = decode_raster(&rec.raster).map_err(|m| parse(record, m))?;
        for (k, o) in rec.objects.iter().enumerate() {
            if !(o.visibility >= 0.0 && o.visibility <= 1.0) {
                return Err(parse(record, format!("object {k} has visibility {}", o.visibility)));
            }
        }
        let starts_new = sequences.last().is_none_or(|s| s.id != rec.sequence);
        if starts_new {
            if rec.frame != 0 {
                return Err(parse(record, format!("sequence {} starts at frame {}", rec.sequence, rec.frame)));
            }
            sequences.push(SceneSequence {
                id: rec.sequence,
                annotations: Vec::new(),
                rasters: Vec::new(),
            });
        }
        let seq = sequences.last_mut().expect("just pushed");
        if rec.frame != seq.len() {
            return Err(parse(record, format!("frame {} out of order in sequence {}", rec.frame, seq.id)));
        }
        seq.annotations.push(FrameAnnotation { objects: rec.objects });
        seq.rasters.push(raster);
    }
    if record != header.frames || sequences.len() != header.sequences {
        return Err(parse(
            record + 1,
            format!(
                "header promises {} frames in {} sequences, found {record} in {}",
                header.frames,
                header.sequences,
                sequences.len()
            ),
        ));
    }
    Ok(Dataset { header, sequences })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(std::fs::File::open(path)?))
}
