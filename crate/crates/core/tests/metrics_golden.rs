use motpose_core::annotation::{BBox, FrameAnnotation, ObjectAnnotation, ObjectPrediction, PredictionSet};
use motpose_core::geometry::{ObjectCatalog, ObjectModel, Pose};
use motpose_core::metrics::{evaluate, EvalConfig, EvalSequence};
use nalgebra::Vector3;
use serde::Deserialize;

#[derive(Deserialize)]
struct GoldenClass {
    class_id: usize,
    instances: usize,
    auc_add_s: f64,
    auc_adds: f64,
    auc_add_s_01d: f64,
}

#[derive(Deserialize)]
struct Golden {
    per_class: Vec<GoldenClass>,
    mean_auc_add_s: f64,
    mean_auc_adds: f64,
    mean_auc_add_s_01d: f64,
    cardinality_error: f64,
    false_negative_rate: f64,
    ap: f64,
    ap50: f64,
    ap75: f64,
    ar: f64,
}

/// Five points far apart relative to the induced errors, so ADD-S pairs each
/// point with itself.
fn catalog() -> ObjectCatalog {
    let pts = vec![
        [0.2, 0.0, 0.0],
        [-0.2, 0.0, 0.0],
        [0.0, 0.15, 0.0],
        [0.0, -0.15, 0.0],
        [0.0, 0.0, 0.1],
    ];
    ObjectCatalog::new(vec![
        ObjectModel::from_points(0, "plain", pts.clone(), false).unwrap(),
        ObjectModel::from_points(1, "round", pts, true).unwrap(),
    ])
    .unwrap()
}

fn gt(class_id: usize, cx: f64) -> ObjectAnnotation {
    ObjectAnnotation {
        class_id,
        pose: Pose::from_translation(Vector3::new(cx - 0.5, 0.0, 0.6)),
        bbox: BBox::new(cx, 0.5, 0.2, 0.2),
        keypoints: [[cx, 0.5]; 16],
        visibility: 1.0,
    }
}

fn echo(obj: &ObjectAnnotation, offset: [f64; 3], confidence: f64) -> ObjectPrediction {
    let mut p = ObjectPrediction::from_annotation(obj, 2);
    for (t, o) in p.translation.iter_mut().zip(offset) {
        *t += o;
    }
    p.class_probs = vec![0.0; 3];
    p.class_probs[obj.class_id] = confidence;
    p.class_probs[2] = 1.0 - confidence;
    p
}

fn slots(mut filled: Vec<ObjectPrediction>) -> PredictionSet {
    while filled.len() < 4 {
        filled.push(ObjectPrediction::empty(2));
    }
    PredictionSet { slots: filled }
}

#[test]
fn three_frame_fixture_matches_golden_values() {
    let f0 = FrameAnnotation {
        objects: vec![gt(0, 0.3), gt(1, 0.7)],
    };
    let f1 = FrameAnnotation {
        objects: vec![gt(0, 0.35), gt(1, 0.75)],
    };
    let f2 = FrameAnnotation {
        objects: vec![gt(0, 0.4)],
    };
    let mut false_positive = echo(&gt(1, 0.8), [0.0; 3], 0.8);
    false_positive.bbox = BBox::new(0.85, 0.15, 0.1, 0.1);
    let predictions = vec![
        slots(vec![
            echo(&f0.objects[0], [0.01, 0.0, 0.0], 1.0),
            echo(&f0.objects[1], [0.0, 0.03, 0.0], 0.9),
        ]),
        // Class 1 missed.
        slots(vec![echo(&f1.objects[0], [0.0, 0.0, 0.02], 1.0)]),
        slots(vec![echo(&f2.objects[0], [0.0; 3], 1.0), false_positive]),
    ];
    let seq = EvalSequence {
        annotations: vec![f0, f1, f2],
        predictions,
    };
    let report = evaluate(&[seq], &catalog(), &EvalConfig::new(2, 1)).unwrap();

    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/metrics_golden.json")).unwrap();
    let golden: Golden = serde_json::from_str(&text).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;

    assert_eq!(report.per_class.len(), golden.per_class.len());
    for (got, want) in report.per_class.iter().zip(&golden.per_class) {
        assert_eq!(got.class_id, want.class_id);
        assert_eq!(got.instances, want.instances);
        assert!(close(got.auc_add_s.unwrap(), want.auc_add_s), "{got:?}");
        assert!(close(got.auc_adds.unwrap(), want.auc_adds), "{got:?}");
        assert!(close(got.auc_add_s_01d.unwrap(), want.auc_add_s_01d), "{got:?}");
    }
    assert!(close(report.mean_auc_add_s.unwrap(), golden.mean_auc_add_s));
    assert!(close(report.mean_auc_adds.unwrap(), golden.mean_auc_adds));
    assert!(close(report.mean_auc_add_s_01d.unwrap(), golden.mean_auc_add_s_01d));
    assert!(close(report.cardinality_error.unwrap(), golden.cardinality_error));
    assert!(close(report.false_negative_rate.unwrap(), golden.false_negative_rate));
    assert!(close(report.detection.ap, golden.ap), "{:?}", report.detection);
    assert!(close(report.detection.ap50, golden.ap50));
    assert!(close(report.detection.ap75, golden.ap75));
    assert!(close(report.detection.ar, golden.ar));
}
