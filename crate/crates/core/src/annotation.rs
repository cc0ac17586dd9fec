//! Ground-truth and predicted object sets for one frame.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot6d_to_matrix, Pose, NUM_KEYPOINTS};

/// Axis-aligned 2D box in normalized image coordinates (center x, center y, width, height).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// Tight box around a point set.
    pub fn enclosing(points: &[[f64; 2]]) -> Self {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        BBox::from_corners(x0, y0, x1, y1)
    }

    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    /// Intersection with the unit square.
    pub fn clipped(&self) -> Self {
        let [x0, y0, x1, y1] = self.corners();
        BBox::from_corners(x0.clamp(0.0, 1.0), y0.clamp(0.0, 1.0), x1.clamp(0.0, 1.0), y1.clamp(0.0, 1.0))
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn l1(&self, other: &BBox) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    fn check(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::Geometry(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    fn intersection_union(&self, other: &BBox) -> (f64, f64) {
        let [a0, a1, a2, a3] = self.corners();
        let [b0, b1, b2, b3] = other.corners();
        let iw = (a2.min(b2) - a0.max(b0)).max(0.0);
        let ih = (a3.min(b3) - a1.max(b1)).max(0.0);
        let inter = iw * ih;
        (inter, self.area() + other.area() - inter)
    }

    /// Intersection over union; zero when either box is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let (inter, union) = self.intersection_union(other);
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Generalized IoU: IoU minus the empty fraction of the smallest enclosing box.
    pub fn giou(&self, other: &BBox) -> Result<f64> {
        self.check()?;
        other.check()?;
        let (inter, union) = self.intersection_union(other);
        let [a0, a1, a2, a3] = self.corners();
        let [b0, b1, b2, b3] = other.corners();
        let hull = (a2.max(b2) - a0.min(b0)) * (a3.max(b3) - a1.min(b1));
        Ok(inter / union - (hull - union) / hull)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub class_id: usize,
    pub pose: Pose,
    pub bbox: BBox,
    /// Projected IBB keypoints, normalized image coordinates.
    pub keypoints: [[f64; 2]; NUM_KEYPOINTS],
    /// Unoccluded fraction in [0, 1].
    pub visibility: f64,
}

impl ObjectAnnotation {
    pub fn keypoints_flat(&self) -> [f64; 2 * NUM_KEYPOINTS] {
        let mut out = [0.0; 2 * NUM_KEYPOINTS];
        for (i, p) in self.keypoints.iter().enumerate() {
            out[2 * i] = p[0];
            out[2 * i + 1] = p[1];
        }
        out
    }
}

/// Ground-truth object set of one frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub objects: Vec<ObjectAnnotation>,
}

impl FrameAnnotation {
    /// Objects at or above the visibility threshold.
    pub fn visible(&self, min_visibility: f64) -> FrameAnnotation {
        FrameAnnotation {
            objects: self
                .objects
                .iter()
                .filter(|o| o.visibility >= min_visibility)
                .cloned()
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

/// One element of the predicted set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectPrediction {
    /// Distribution over `C` classes plus the trailing no-object class.
    pub class_probs: Vec<f64>,
    pub bbox: BBox,
    /// 16 normalized image points, interleaved x, y.
    pub keypoints: Vec<f64>,
    /// Meters.
    pub translation: [f64; 3],
    pub rotation6d: [f64; 6],
}

impl ObjectPrediction {
    pub fn no_object_class(&self) -> usize {
        self.class_probs.len() - 1
    }

    fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.class_probs.iter().enumerate() {
            if p > self.class_probs[best] {
                best = i;
            }
        }
        best
    }

    /// Predicted class, or `None` for a no-object slot.
    pub fn label(&self) -> Option<usize> {
        let c = self.argmax();
        (c != self.no_object_class()).then_some(c)
    }

    pub fn confidence(&self) -> f64 {
        self.class_probs[self.argmax()]
    }

    pub fn pose(&self) -> Result<Pose> {
        Ok(Pose {
            rotation: rot6d_to_matrix(&self.rotation6d)?,
            translation: Vector3::from(self.translation),
        })
    }

    /// Echo of a ground-truth object with a one-hot class distribution.
    pub fn from_annotation(obj: &ObjectAnnotation, num_classes: usize) -> Self {
        let mut class_probs = vec![0.0; num_classes + 1];
        class_probs[obj.class_id] = 1.0;
        ObjectPrediction {
            class_probs,
            bbox: obj.bbox,
            keypoints: obj.keypoints_flat().to_vec(),
            translation: obj.pose.translation.into(),
            rotation6d: crate::geometry::matrix_to_rot6d(&obj.pose.rotation),
        }
    }

    /// A slot that predicts the no-object class with certainty.
    pub fn empty(num_classes: usize) -> Self {
        let mut class_probs = vec![0.0; num_classes + 1];
        class_probs[num_classes] = 1.0;
        ObjectPrediction {
            class_probs,
            bbox: BBox::new(0.5, 0.5, 0.1, 0.1),
            keypoints: vec![0.5; 2 * NUM_KEYPOINTS],
            translation: [0.0, 0.0, 1.0],
            rotation6d: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }
}

/// Fixed-cardinality predicted set of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub slots: Vec<ObjectPrediction>,
}

impl PredictionSet {
    /// Ground truth echoed into the first slots, remaining slots empty.
    pub fn oracle(frame: &FrameAnnotation, slots: usize, num_classes: usize) -> Self {
        let mut out: Vec<ObjectPrediction> = frame
            .objects
            .iter()
            .map(|o| ObjectPrediction::from_annotation(o, num_classes))
            .collect();
        while out.len() < slots {
            out.push(ObjectPrediction::empty(num_classes));
        }
        PredictionSet { slots: out }
    }

    pub fn empty(slots: usize, num_classes: usize) -> Self {
        PredictionSet {
            slots: vec![ObjectPrediction::empty(num_classes); slots],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Slots whose argmax is a real class.
    pub fn detections(&self) -> impl Iterator<Item = (usize, &ObjectPrediction)> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label().is_some())
    }
}
