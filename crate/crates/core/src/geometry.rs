//! Rigid transforms, the 6D rotation parameterization, pinhole projection and the
//! interpolated bounding-box (IBB) keypoint layout.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Tolerance for orthonormality and unit determinant of rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;
/// Norm below which a vector is treated as zero.
pub const NORM_EPS: f64 = 1e-9;
/// Collinearity tolerance, relative to segment length.
pub const COLLINEAR_TOL: f64 = 1e-6;
/// Minimum depth for projection, meters.
pub const MIN_DEPTH: f64 = 1e-6;

pub const NUM_KEYPOINTS: usize = 16;
/// Cross-ratio of four equally spaced collinear points.
pub const CANONICAL_CROSS_RATIO: f64 = 4.0 / 3.0;

/// Four collinear quadruples of the IBB layout: corner, 1/3-point, 2/3-point, corner.
pub const IBB_EDGE_QUADRUPLES: [[usize; 4]; 4] =
    [[0, 8, 9, 1], [2, 10, 11, 3], [4, 12, 13, 5], [6, 14, 15, 7]];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    /// Meters.
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    /// Row-major rotation.
    r: [f64; 9],
    t: [f64; 3],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        let m = &p.rotation;
        PoseRecord {
            r: [
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
                m[(2, 2)],
            ],
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseRecord> for Pose {
    type Error = Error;

    fn try_from(r: PoseRecord) -> Result<Self> {
        Pose::new(Matrix3::from_row_slice(&r.r), Vector3::from(r.t))
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        validate_rotation(&rotation)?;
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

pub fn validate_rotation(r: &Matrix3<f64>) -> Result<()> {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !(ortho <= ROTATION_TOL) || !((det - 1.0).abs() <= ROTATION_TOL) {
        return Err(Error::Geometry(format!(
            "not a rotation: |RᵀR − I| = {ortho:e}, det = {det}"
        )));
    }
    Ok(())
}

/// Rotation by `angle` radians about the unit `axis`.
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(axis.normalize() * angle).into_inner()
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q = nalgebra::Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 1e-3 && n <= 1.0 {
            return UnitQuaternion::from_quaternion(q)
                .to_rotation_matrix()
                .into_inner();
        }
    }
}

/// Continuous 6D rotation representation to a rotation matrix by Gram–Schmidt.
///
/// The two 3-vectors become the first two columns after orthonormalization; the
/// third column is their cross product.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if n1 < NORM_EPS {
        return Err(Error::Singular("first 6D column has zero norm".into()));
    }
    let b1 = a1 / n1;
    let residual = a2 - b1 * b1.dot(&a2);
    let n2 = residual.norm();
    if n2 < NORM_EPS * a2.norm().max(1.0) {
        return Err(Error::Singular("6D columns are parallel or zero".into()));
    }
    let b2 = residual / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// First two columns of a rotation, the inverse of [`rot6d_to_matrix`].
pub fn matrix_to_rot6d(r: &Matrix3<f64>) -> [f64; 6] {
    [
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ]
}

pub fn transform_points(pose: &Pose, pts: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    pts.iter().map(|p| pose.apply(p)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Image extent in pixels, used to normalize image coordinates to [0, 1].
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    pub fn normalize(&self, uv: [f64; 2]) -> [f64; 2] {
        [uv[0] / self.width as f64, uv[1] / self.height as f64]
    }

    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        (p.z > MIN_DEPTH).then(|| {
            [
                self.fx * p.x / p.z + self.cx,
                self.fy * p.y / p.z + self.cy,
            ]
        })
    }
}

/// Pixel coordinates of camera-frame points.
pub fn project_pinhole(k: &CameraIntrinsics, pts_cam: &[Vector3<f64>]) -> Result<Vec<[f64; 2]>> {
    pts_cam
        .iter()
        .enumerate()
        .map(|(index, p)| k.project(p).ok_or(Error::BehindCamera { index, z: p.z }))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub class_id: usize,
    pub name: String,
    /// Meters.
    pub diameter: f64,
    /// Half-extents of the canonical 3D box, meters.
    pub ibb_extents: [f64; 3],
    pub symmetric: bool,
    /// Sampled surface points in the object frame, meters.
    pub points: Vec<[f64; 3]>,
}

impl ObjectModel {
    /// Builds a model whose diameter and box extents are derived from `points`.
    pub fn from_points(
        class_id: usize,
        name: impl Into<String>,
        points: Vec<[f64; 3]>,
        symmetric: bool,
    ) -> Result<Self> {
        let mut ext = [0.0f64; 3];
        for p in &points {
            for k in 0..3 {
                ext[k] = ext[k].max(p[k].abs());
            }
        }
        let model = ObjectModel {
            class_id,
            name: name.into(),
            diameter: max_pairwise_distance(&points),
            ibb_extents: ext,
            symmetric,
            points,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 4 {
            return Err(Error::Model(format!(
                "class {} has {} points, need at least 4",
                self.class_id,
                self.points.len()
            )));
        }
        let d = max_pairwise_distance(&self.points);
        if (d - self.diameter).abs() > 1e-6 {
            return Err(Error::Model(format!(
                "class {} diameter {} differs from point spread {d}",
                self.class_id, self.diameter
            )));
        }
        if self.ibb_extents.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Model(format!(
                "class {} has non-positive box extents {:?}",
                self.class_id, self.ibb_extents
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| Vector3::from(*p)).collect()
    }
}

fn max_pairwise_distance(points: &[[f64; 3]]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            best = best.max(d);
        }
    }
    best
}

/// Catalog of object models indexed by class id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectCatalog {
    pub models: Vec<ObjectModel>,
}

impl ObjectCatalog {
    pub fn new(models: Vec<ObjectModel>) -> Result<Self> {
        for (i, m) in models.iter().enumerate() {
            if m.class_id != i {
                return Err(Error::Model(format!(
                    "catalog entry {i} has class id {}",
                    m.class_id
                )));
            }
            m.validate()?;
        }
        Ok(ObjectCatalog { models })
    }

    /// Built-in box- and cylinder-shaped objects; every third class is a cylinder
    /// flagged symmetric.
    pub fn synthetic(num_classes: usize) -> Self {
        let models = (0..num_classes)
            .map(|c| {
                let s = 0.03 + 0.006 * (c % 4) as f64;
                let half = [s * (1.0 + 0.25 * (c % 3) as f64), s * 0.8, s * (0.6 + 0.1 * (c % 2) as f64)];
                if c % 3 == 2 {
                    let pts = cylinder_points(half[0].max(half[1]), half[2], 12);
                    ObjectModel::from_points(c, format!("cylinder_{c}"), pts, true)
                } else {
                    ObjectModel::from_points(c, format!("box_{c}"), box_points(half), false)
                }
                .expect("synthetic models are valid")
            })
            .collect();
        ObjectCatalog { models }
    }

    pub fn get(&self, class_id: usize) -> Result<&ObjectModel> {
        self.models
            .get(class_id)
            .ok_or_else(|| Error::Model(format!("unknown class {class_id}")))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("catalog serializes");
        hex_digest(&json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let catalog: ObjectCatalog = serde_json::from_str(&text)?;
        ObjectCatalog::new(catalog.models)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Corners, edge thirds and face centers of an axis-aligned box.
fn box_points(half: [f64; 3]) -> Vec<[f64; 3]> {
    let mut pts = Vec::new();
    let steps = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
    for &sx in &steps {
        for &sy in &steps {
            for &sz in &steps {
                let on_surface = [sx, sy, sz].iter().any(|v: &f64| v.abs() == 1.0);
                if on_surface {
                    pts.push([sx * half[0], sy * half[1], sz * half[2]]);
                }
            }
        }
    }
    pts
}

/// Rings on the caps and mid-height of a z-axis cylinder.
fn cylinder_points(radius: f64, half_height: f64, per_ring: usize) -> Vec<[f64; 3]> {
    let mut pts = Vec::new();
    for &z in &[-half_height, 0.0, half_height] {
        for k in 0..per_ring {
            let a = std::f64::consts::TAU * k as f64 / per_ring as f64;
            pts.push([radius * a.cos(), radius * a.sin(), z]);
        }
    }
    pts
}

#[derive(Clone, Debug, PartialEq)]
pub struct IbbKeypoints {
    pub canonical_3d: [Vector3<f64>; NUM_KEYPOINTS],
    pub projected_2d: [[f64; 2]; NUM_KEYPOINTS],
}

/// The 16 IBB points in the object frame.
///
/// Corners `2e` and `2e+1` span edge `e`, the edge parallel to the x-axis at
/// `(y, z) = (±ey, ±ez)`. Points `8 + 2e` and `9 + 2e` sit at 1/3 and 2/3 along it.
pub fn ibb_canonical(extents: [f64; 3]) -> [Vector3<f64>; NUM_KEYPOINTS] {
    let [ex, ey, ez] = extents;
    let mut pts = [Vector3::zeros(); NUM_KEYPOINTS];
    let edges = [(-ey, -ez), (ey, -ez), (-ey, ez), (ey, ez)];
    for (e, &(y, z)) in edges.iter().enumerate() {
        let a = Vector3::new(-ex, y, z);
        let b = Vector3::new(ex, y, z);
        pts[2 * e] = a;
        pts[2 * e + 1] = b;
        pts[8 + 2 * e] = a + (b - a) / 3.0;
        pts[9 + 2 * e] = a + (b - a) * (2.0 / 3.0);
    }
    pts
}

pub fn ibb_keypoints(model: &ObjectModel, pose: &Pose, k: &CameraIntrinsics) -> Result<IbbKeypoints> {
    let canonical = ibb_canonical(model.ibb_extents);
    let cam = transform_points(pose, &canonical);
    let uv = project_pinhole(k, &cam)?;
    let mut projected = [[0.0; 2]; NUM_KEYPOINTS];
    projected.copy_from_slice(&uv);
    Ok(IbbKeypoints {
        canonical_3d: canonical,
        projected_2d: projected,
    })
}

/// Cross-ratio `(|p1p3|·|p2p4|) / (|p2p3|·|p1p4|)` of four collinear points, using
/// signed positions along the line through `p1` and `p4`.
pub fn cross_ratio(p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], p4: [f64; 2]) -> Result<f64> {
    let dir = [p4[0] - p1[0], p4[1] - p1[1]];
    let len = dir[0].hypot(dir[1]);
    if len < NORM_EPS {
        return Err(Error::Geometry("coincident end points".into()));
    }
    let d = [dir[0] / len, dir[1] / len];
    let param = |p: [f64; 2]| -> Result<f64> {
        let v = [p[0] - p1[0], p[1] - p1[1]];
        let off_line = (v[0] * d[1] - v[1] * d[0]).abs();
        if off_line > COLLINEAR_TOL * len {
            return Err(Error::Geometry(format!(
                "points not collinear (residual {off_line:e})"
            )));
        }
        Ok(v[0] * d[0] + v[1] * d[1])
    };
    let s = [0.0, param(p2)?, param(p3)?, len];
    for i in 0..4 {
        for j in i + 1..4 {
            if (s[i] - s[j]).abs() < NORM_EPS {
                return Err(Error::Geometry("coincident points".into()));
            }
        }
    }
    Ok(((s[2] - s[0]) * (s[3] - s[1])) / ((s[2] - s[1]) * (s[3] - s[0])))
}

/// Cross-ratio `(|p1p3|·|p2p4|) / (|p2p3|·|p1p4|)` from unsigned distances, for
/// points that need not be collinear. `None` when any two points coincide.
pub fn cross_ratio_unsigned(p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], p4: [f64; 2]) -> Option<f64> {
    let d = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let pts = [p1, p2, p3, p4];
    for i in 0..4 {
        for j in i + 1..4 {
            if d(pts[i], pts[j]) < NORM_EPS {
                return None;
            }
        }
    }
    Some(d(p1, p3) * d(p2, p4) / (d(p2, p3) * d(p1, p4)))
}

/// Angle of the relative rotation `Raᵀ·Rb`, radians.
pub fn rotation_geodesic(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    let c = ((ra.transpose() * rb).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 100,
            height: 100,
        }
    }

    fn rot_z(a: f64) -> Matrix3<f64> {
        axis_angle(Vector3::z(), a)
    }

    #[test]
    fn rot6d_examples() {
        let r = rot6d_to_matrix(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(r, Matrix3::identity());
        let r = rot6d_to_matrix(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
        assert_eq!(r, Matrix3::identity());
        let r = rot6d_to_matrix(&[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.column(0), Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(r.column(1), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(r.column(2), Vector3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn rot6d_degenerate_inputs() {
        assert!(matches!(
            rot6d_to_matrix(&[0.0; 6]),
            Err(Error::Singular(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn rot6d_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_rotation(&mut rng);
        let back = rot6d_to_matrix(&matrix_to_rot6d(&r)).unwrap();
        assert!((back - r).abs().max() < 1e-12);
    }

    #[test]
    fn transform_examples() {
        let p = vec![Vector3::new(0.3, -0.2, 1.0)];
        assert_eq!(transform_points(&Pose::identity(), &p), p);
        let shift = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(
            transform_points(&shift, &[Vector3::zeros()])[0],
            Vector3::new(1.0, 0.0, 0.0)
        );
        let rz = Pose::new(rot_z(FRAC_PI_2), Vector3::zeros()).unwrap();
        let q = transform_points(&rz, &[Vector3::x()])[0];
        assert!((q - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let uv = project_pinhole(&cam(), &[Vector3::new(0.0, 0.0, 1.0)]).unwrap();
        assert_eq!(uv[0], [50.0, 50.0]);
        let uv = project_pinhole(&cam(), &[Vector3::new(1.0, 0.0, 2.0)]).unwrap();
        assert_eq!(uv[0][0], 100.0);
        let near = project_pinhole(&cam(), &[Vector3::new(0.4, 0.1, 1.0)]).unwrap()[0];
        let far = project_pinhole(&cam(), &[Vector3::new(0.4, 0.1, 2.0)]).unwrap()[0];
        assert!(((far[0] - 50.0) - (near[0] - 50.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_behind_camera_names_point() {
        let pts = [Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, -1.0)];
        match project_pinhole(&cam(), &pts) {
            Err(Error::BehindCamera { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn unit_cube() -> ObjectModel {
        let pts = box_points([0.5, 0.5, 0.5]);
        ObjectModel::from_points(0, "cube", pts, false).unwrap()
    }

    #[test]
    fn ibb_symmetric_about_principal_point() {
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 5.0));
        let kp = ibb_keypoints(&unit_cube(), &pose, &cam()).unwrap();
        let mut us: Vec<f64> = kp.projected_2d[..8].iter().map(|p| p[0] - 50.0).collect();
        let mut vs: Vec<f64> = kp.projected_2d[..8].iter().map(|p| p[1] - 50.0).collect();
        us.sort_by(f64::total_cmp);
        vs.sort_by(f64::total_cmp);
        for i in 0..8 {
            assert!((us[i] + us[7 - i]).abs() < 1e-12);
            assert!((vs[i] + vs[7 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ibb_interpolations_on_edges() {
        let pts = ibb_canonical([0.3, 0.2, 0.1]);
        for q in IBB_EDGE_QUADRUPLES {
            let (a, b) = (pts[q[0]], pts[q[3]]);
            for (k, frac) in [(1, 1.0 / 3.0), (2, 2.0 / 3.0)] {
                assert!((pts[q[k]] - (a + (b - a) * frac)).norm() < 1e-15);
            }
            // edge parallel to x
            assert_eq!(a.y, b.y);
            assert_eq!(a.z, b.z);
        }
    }

    #[test]
    fn projected_interpolations_are_collinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = unit_cube();
        for _ in 0..100 {
            let pose = Pose::new(random_rotation(&mut rng), Vector3::new(0.2, -0.1, 4.0)).unwrap();
            let kp = ibb_keypoints(&model, &pose, &cam()).unwrap();
            for q in IBB_EDGE_QUADRUPLES {
                let [a, b, c, d] = q.map(|i| kp.projected_2d[i]);
                for p in [b, c] {
                    let cross = (d[0] - a[0]) * (p[1] - a[1]) - (d[1] - a[1]) * (p[0] - a[0]);
                    let len = (d[0] - a[0]).hypot(d[1] - a[1]);
                    assert!(cross.abs() / len < 1e-9);
                }
            }
        }
    }

    #[test]
    fn cross_ratio_examples() {
        let on_line = |s: f64| [1.0 + 2.0 * s, -1.0 + s];
        let cr = |a, b, c, d| cross_ratio(on_line(a), on_line(b), on_line(c), on_line(d)).unwrap();
        assert!((cr(0.0, 1.0, 2.0, 3.0) - 4.0 / 3.0).abs() < 1e-12);
        assert!((cr(0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0) - 4.0 / 3.0).abs() < 1e-12);
        assert!((cr(0.0, 1.0, 2.0, 4.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cross_ratio_errors() {
        let p = [0.0, 0.0];
        assert!(cross_ratio(p, p, [1.0, 0.0], [2.0, 0.0]).is_err());
        assert!(cross_ratio(p, [1.0, 0.5], [2.0, 0.0], [3.0, 0.0]).is_err());
    }

    #[test]
    fn geodesic_examples() {
        let i = Matrix3::identity();
        assert_eq!(rotation_geodesic(&i, &i), 0.0);
        assert!((rotation_geodesic(&i, &rot_z(PI)) - PI).abs() < 1e-7);
        assert!((rotation_geodesic(&i, &rot_z(FRAC_PI_2)) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn model_validation() {
        let pts = vec![[0.0; 3]; 3];
        assert!(ObjectModel::from_points(0, "tiny", pts, false).is_err());
        let mut m = unit_cube();
        m.diameter += 1e-3;
        assert!(m.validate().is_err());
        assert!((unit_cube().diameter - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn catalog_round_trip() {
        let cat = ObjectCatalog::synthetic(5);
        assert_eq!(cat.len(), 5);
        assert!(cat.models.iter().any(|m| m.symmetric));
        let dir = std::env::temp_dir().join(format!("motpose-cat-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("catalog.json");
        cat.save(&path).unwrap();
        let back = ObjectCatalog::load(&path).unwrap();
        assert_eq!(back, cat);
        assert_eq!(back.hash(), cat.hash());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn pose_serde_validates() {
        let bad = r#"{"r":[2,0,0,0,1,0,0,0,1],"t":[0,0,0]}"#;
        assert!(serde_json::from_str::<Pose>(bad).is_err());
        let p = Pose::new(rot_z(0.3), Vector3::new(0.1, 0.2, 0.3)).unwrap();
        let back: Pose = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn canonical_quadruples_have_four_thirds() {
        let pts = ibb_canonical([0.7, 0.2, 0.4]);
        for q in IBB_EDGE_QUADRUPLES {
            // 3D points on a line, parameterized along x
            let s: Vec<f64> = q.iter().map(|&i| pts[i].x).collect();
            let cr = ((s[2] - s[0]) * (s[3] - s[1])) / ((s[2] - s[1]) * (s[3] - s[0]));
            assert!((cr - CANONICAL_CROSS_RATIO).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn rot6d_yields_rotations(v in prop::array::uniform6(-10.0f64..10.0)) {
            prop_assume!(Vector3::new(v[0], v[1], v[2]).norm() > 1e-3);
            let a1 = Vector3::new(v[0], v[1], v[2]).normalize();
            let a2 = Vector3::new(v[3], v[4], v[5]);
            prop_assume!((a2 - a1 * a1.dot(&a2)).norm() > 1e-3);
            let r = rot6d_to_matrix(&v).unwrap();
            prop_assert!(validate_rotation(&r).is_ok());
        }
    }

    proptest! {
        #[test]
        fn rigid_transform_preserves_distances(
            seed in any::<u64>(),
            t in prop::array::uniform3(-5.0f64..5.0),
            pts in prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 2..10),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pose = Pose::new(random_rotation(&mut rng), Vector3::from(t)).unwrap();
            let pts: Vec<Vector3<f64>> = pts.into_iter().map(Vector3::from).collect();
            let moved = transform_points(&pose, &pts);
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let before = (pts[i] - pts[j]).norm();
                    let after = (moved[i] - moved[j]).norm();
                    prop_assert!((before - after).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn cross_ratio_is_projectively_invariant(
            seed in any::<u64>(),
            params in prop::array::uniform4(0.0f64..1.0),
        ) {
            let mut s = params;
            s.sort_by(f64::total_cmp);
            prop_assume!(s.windows(2).all(|w| w[1] - w[0] > 0.05));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dir = random_rotation(&mut rng) * Vector3::x() * 0.3;
            let origin = Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(1.0..3.0));
            let pts3: Vec<Vector3<f64>> = s.iter().map(|&u| origin + dir * u).collect();
            let expected = ((s[2] - s[0]) * (s[3] - s[1])) / ((s[2] - s[1]) * (s[3] - s[0]));
            let k = CameraIntrinsics { fx: rng.gen_range(50.0..500.0), fy: rng.gen_range(50.0..500.0), cx: 40.0, cy: 30.0, width: 80, height: 60 };
            let uv = project_pinhole(&k, &pts3).unwrap();
            let cr = cross_ratio(uv[0], uv[1], uv[2], uv[3]).unwrap();
            prop_assert!((cr - expected).abs() < 1e-9 * expected.max(1.0), "{} vs {}", cr, expected);
        }
    }
}
