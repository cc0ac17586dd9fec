use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::annotation::{ObjectAnnotation, PredictionSet};
use crate::autodiff::grad_check;
use crate::geometry::{
    axis_angle, ibb_keypoints, matrix_to_rot6d, random_rotation, CameraIntrinsics, Pose,
};
use crate::matcher::{match_sets, MatchCostConfig};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn raw_model(points: Vec<[f64; 3]>, symmetric: bool) -> ObjectModel {
    ObjectModel {
        class_id: 0,
        name: "probe".into(),
        diameter: 1.0,
        ibb_extents: [1.0, 1.0, 1.0],
        symmetric,
        points,
    }
}

fn camera() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 60.0,
        fy: 60.0,
        cx: 32.0,
        cy: 24.0,
        width: 64,
        height: 48,
    }
}

/// Keypoints of an object at a random pose in front of the camera.
fn exact_keypoints(rng: &mut ChaCha8Rng, model: &ObjectModel) -> Vec<f64> {
    let pose = Pose {
        rotation: random_rotation(rng),
        translation: Vector3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 0.5),
    };
    let k = camera();
    ibb_keypoints(model, &pose, &k)
        .unwrap()
        .projected_2d
        .iter()
        .flat_map(|p| k.normalize(*p))
        .collect()
}

#[test]
fn class_loss_examples() {
    let (l, _) = class_loss(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1], 0.1).unwrap();
    assert_eq!(l, 0.0);
    let e1 = (-1.0f64).exp();
    let (l, _) = class_loss(&[vec![1.0 - e1, e1]], &[1], 0.1).unwrap();
    assert!(close(l, 0.1, 1e-15));
    let e2 = (-2.0f64).exp();
    let (l, _) = class_loss(&[vec![e2, 0.0, 1.0 - e2]], &[0], 0.1).unwrap();
    assert!(close(l, 2.0, 1e-14));
}

#[test]
fn class_loss_saturation_is_counted() {
    let (l, sat) = class_loss(&[vec![0.0, 1.0]], &[0], 0.1).unwrap();
    assert_eq!(sat, 1);
    assert!(close(l, -(PROB_EPS.ln()), 1e-9));
}

#[test]
fn giou_examples() {
    assert!(close(
        giou(&BBox::new(0.3, 0.4, 0.2, 0.1), &BBox::new(0.3, 0.4, 0.2, 0.1)).unwrap(),
        1.0,
        1e-12
    ));
    let a = BBox::from_corners(0.0, 0.0, 2.0, 2.0);
    let b = BBox::from_corners(1.0, 1.0, 3.0, 3.0);
    assert!(close(giou(&a, &b).unwrap(), -5.0 / 63.0, 1e-15));
    let far = BBox::from_corners(1000.0, 1000.0, 1001.0, 1001.0);
    assert!(giou(&BBox::from_corners(0.0, 0.0, 1.0, 1.0), &far).unwrap() < -0.999);
    assert!(matches!(
        giou(&BBox::new(0.5, 0.5, 0.0, 0.1), &a),
        Err(Error::Geometry(_))
    ));
}

#[test]
fn bbox_loss_examples() {
    let w = LossWeights::default();
    let b = BBox::new(0.4, 0.6, 0.2, 0.3);
    assert_eq!(bbox_loss(&[(b, b)], &w).unwrap(), 0.0);
    assert_eq!(bbox_loss(&[], &w).unwrap(), 0.0);
    // Half-height box inside the full box: IoU 1/2, hull equals the union.
    let full = BBox::from_corners(0.0, 0.0, 1.0, 1.0);
    let half = BBox::from_corners(0.0, 0.0, 1.0, 0.5);
    assert!(close(bbox_loss(&[(half, full)], &w).unwrap(), 5.0 * 0.75 + 2.0 * 0.5, 1e-14));
    let doubled = LossWeights {
        w_bbox_l1: 10.0,
        w_bbox_giou: 4.0,
        ..w
    };
    assert!(close(
        bbox_loss(&[(half, full)], &doubled).unwrap(),
        2.0 * bbox_loss(&[(half, full)], &w).unwrap(),
        1e-14
    ));
}

#[test]
fn keypoint_loss_examples() {
    let w = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let catalog = ObjectCatalog::synthetic(3);
    let gt = exact_keypoints(&mut rng, &catalog.models[0]);
    let t = keypoint_terms(std::slice::from_ref(&gt), std::slice::from_ref(&gt)).unwrap();
    assert_eq!(t.l1, 0.0);
    assert!(t.cross_ratio < 1e-20, "{}", t.cross_ratio);

    // Every quadruple collinear at parameters 0, 1, 2, 4 along its own row.
    let mut odd = vec![0.0; 32];
    for (e, q) in IBB_EDGE_QUADRUPLES.iter().enumerate() {
        for (k, s) in q.iter().zip([0.0, 1.0, 2.0, 4.0]) {
            odd[2 * k] = 0.1 + 0.2 * s;
            odd[2 * k + 1] = 0.1 * e as f64;
        }
    }
    let t = keypoint_terms(&[odd], std::slice::from_ref(&gt)).unwrap();
    assert!(close(t.cross_ratio, 1.0 / 36.0, 1e-12));

    let delta = 0.01;
    let shifted: Vec<f64> = gt.iter().map(|v| v + delta).collect();
    let t = keypoint_terms(std::slice::from_ref(&shifted), std::slice::from_ref(&gt)).unwrap();
    assert!(close(w.w_kpt_l1 * t.l1, 10.0 * delta, 1e-12));
    let before = keypoint_terms(std::slice::from_ref(&gt), std::slice::from_ref(&gt)).unwrap().cross_ratio;
    assert!(close(t.cross_ratio, before, 1e-12));
    let total = keypoint_loss(&[shifted], &[gt], &w).unwrap();
    assert!(close(total, 10.0 * delta + before, 1e-12));
}

#[test]
fn coincident_quadruple_is_skipped() {
    let pred = vec![vec![0.5; 32]];
    let t = keypoint_terms(&pred, &pred.clone()).unwrap();
    assert_eq!(t.skipped, 4);
    assert_eq!(t.cross_ratio, 0.0);
}

#[test]
fn shapematch_examples() {
    let rz = axis_angle(Vector3::z(), FRAC_PI_2);
    let id = Matrix3::identity();
    let single = raw_model(vec![[1.0, 0.0, 0.0]], false);
    assert!(close(shapematch_loss(&rz, &id, &single).unwrap(), 1.0, 1e-15));
    assert_eq!(shapematch_loss(&rz, &rz, &single).unwrap(), 0.0);

    let pair = raw_model(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], true);
    let flip = axis_angle(Vector3::z(), PI);
    assert!(shapematch_loss(&flip, &id, &pair).unwrap() < 1e-30);
    assert!(matches!(
        shapematch_loss(&id, &id, &raw_model(vec![], false)),
        Err(Error::Model(_))
    ));
}

#[test]
fn translation_and_temporal_examples() {
    assert_eq!(translation_loss(&[[0.1, 0.2, 0.5]], &[[0.1, 0.2, 0.5]]).unwrap(), 0.0);
    assert!(close(translation_loss(&[[0.03, 0.0, 0.0]], &[[0.0; 3]]).unwrap(), 0.03, 1e-15));
    assert!(close(translation_loss(&[[0.03, 0.04, 0.0]], &[[0.0; 3]]).unwrap(), 0.05, 1e-15));

    let a = vec![vec![0.5, -1.0, 2.0]; 4];
    assert_eq!(temporal_consistency_loss(&a, &a).unwrap(), 0.0);
    let mut b = a.clone();
    b[2][1] += 1.0;
    assert!(close(temporal_consistency_loss(&a, &b).unwrap(), 0.25, 1e-15));
    assert_eq!(
        temporal_consistency_loss(&a, &b).unwrap(),
        temporal_consistency_loss(&b, &a).unwrap()
    );
    assert!(temporal_consistency_loss(&a, &b[..3]).is_err());
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.2..0.8),
        rng.gen_range(0.05..0.4),
        rng.gen_range(0.05..0.4),
    )
}

fn rows<const K: usize>(v: &[[f64; K]]) -> Tensor {
    Tensor::from_rows(v).unwrap()
}

#[test]
fn tape_forms_match_plain_forms() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();

        let probs = random_probs(&mut rng, 5, 4);
        let targets: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
        let pv = tape.constant(Tensor::from_rows(&probs).unwrap());
        let (c, _) = diff::class_loss(&tape, pv, &targets, 0.1).unwrap();
        assert!(close(c.item().unwrap(), class_loss(&probs, &targets, 0.1).unwrap().0, 1e-13));

        let pairs: Vec<(BBox, BBox)> = (0..3).map(|_| (random_box(&mut rng), random_box(&mut rng))).collect();
        let pred = tape.constant(rows(&pairs.iter().map(|p| p.0.as_array()).collect::<Vec<_>>()));
        let gt = tape.constant(rows(&pairs.iter().map(|p| p.1.as_array()).collect::<Vec<_>>()));
        let (l1, g) = diff::bbox_terms(&tape, pred, gt).unwrap();
        let w = LossWeights::default();
        let combined = w.w_bbox_l1 * l1.item().unwrap() + w.w_bbox_giou * g.item().unwrap();
        assert!(close(combined, bbox_loss(&pairs, &w).unwrap(), 1e-12));

        let kp: Vec<Vec<f64>> = (0..3).map(|_| (0..32).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let kg: Vec<Vec<f64>> = (0..3).map(|_| (0..32).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let (kl1, cr, skipped) = diff::keypoint_terms(
            &tape,
            tape.constant(Tensor::from_rows(&kp).unwrap()),
            tape.constant(Tensor::from_rows(&kg).unwrap()),
        )
        .unwrap();
        let plain = keypoint_terms(&kp, &kg).unwrap();
        assert!(close(kl1.item().unwrap(), plain.l1, 1e-14));
        assert!(close(cr.item().unwrap(), plain.cross_ratio, 1e-10 * plain.cross_ratio.max(1.0)));
        assert_eq!(skipped, plain.skipped);

        let catalog = ObjectCatalog::synthetic(3);
        let r_pred: Vec<Matrix3<f64>> = (0..3).map(|_| random_rotation(&mut rng)).collect();
        let r_gt: Vec<Matrix3<f64>> = (0..3).map(|_| random_rotation(&mut rng)).collect();
        let models: Vec<&ObjectModel> = catalog.models.iter().collect();
        let six: Vec<[f64; 6]> = r_pred.iter().map(matrix_to_rot6d).collect();
        let s = diff::shapematch_loss(&tape, tape.constant(rows(&six)), &r_gt, &models).unwrap();
        let expected: f64 = (0..3)
            .map(|k| shapematch_loss(&r_pred[k], &r_gt[k], models[k]).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!(close(s.item().unwrap(), expected, 1e-12));

        let tp: Vec<[f64; 3]> = (0..4).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let tg: Vec<[f64; 3]> = (0..4).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let t = diff::translation_loss(tape.constant(rows(&tp)), tape.constant(rows(&tg))).unwrap();
        assert!(close(t.item().unwrap(), translation_loss(&tp, &tg).unwrap(), 1e-14));

        let ea: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.gen()).collect()).collect();
        let eb: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.gen()).collect()).collect();
        let tc = diff::temporal_consistency_loss(
            tape.constant(Tensor::from_rows(&ea).unwrap()),
            tape.constant(Tensor::from_rows(&eb).unwrap()),
        )
        .unwrap();
        assert!(close(tc.item().unwrap(), temporal_consistency_loss(&ea, &eb).unwrap(), 1e-14));
    }
}

#[test]
fn rot6d_on_tape_matches_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let raw: Vec<[f64; 6]> = (0..5)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect();
    let tape = Tape::new();
    let rt = diff::rot6d_transposed(&tape, tape.constant(rows(&raw))).unwrap();
    let v = rt.value();
    for (k, r) in raw.iter().enumerate() {
        let m = crate::geometry::rot6d_to_matrix(r).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(v.at(&[k, i, j]), m[(j, i)], 1e-14));
            }
        }
    }
}

#[test]
fn tape_terms_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let boxes: Vec<[f64; 4]> = (0..3).map(|_| random_box(&mut rng).as_array()).collect();
    let targets: Vec<[f64; 4]> = (0..3).map(|_| random_box(&mut rng).as_array()).collect();
    let err = grad_check(
        |t, x| Ok(diff::giou(x, t.constant(rows(&targets)))?.sum()),
        &rows(&boxes),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "giou {err}");

    let kp: Vec<Vec<f64>> = (0..2).map(|_| (0..32).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let err = grad_check(
        |t, x| {
            let (_, cr, _) = diff::keypoint_terms(t, x, t.constant(Tensor::zeros(vec![2, 32])))?;
            Ok(cr)
        },
        &Tensor::from_rows(&kp).unwrap(),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "cross ratio {err}");

    let catalog = ObjectCatalog::synthetic(3);
    let r_gt: Vec<Matrix3<f64>> = (0..3).map(|_| random_rotation(&mut rng)).collect();
    let six: Vec<[f64; 6]> = (0..3).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
    let err = grad_check(
        |t, x| {
            let models: Vec<&ObjectModel> = catalog.models.iter().collect();
            diff::shapematch_loss(t, x, &r_gt, &models)
        },
        &rows(&six),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "shapematch {err}");
}

fn annotated(rng: &mut ChaCha8Rng, catalog: &ObjectCatalog, class_id: usize) -> ObjectAnnotation {
    let model = catalog.get(class_id).unwrap();
    let pose = Pose {
        rotation: random_rotation(rng),
        translation: Vector3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 0.5),
    };
    let k = camera();
    let kp = ibb_keypoints(model, &pose, &k).unwrap().projected_2d.map(|p| k.normalize(p));
    ObjectAnnotation {
        class_id,
        pose,
        bbox: BBox::enclosing(&kp),
        keypoints: kp,
        visibility: 1.0,
    }
}

fn outputs_from<'t>(tape: &'t Tape, preds: &PredictionSet, dim: usize) -> FrameOutputs<'t> {
    let probs: Vec<Vec<f64>> = preds.slots.iter().map(|s| s.class_probs.clone()).collect();
    let boxes: Vec<[f64; 4]> = preds.slots.iter().map(|s| s.bbox.as_array()).collect();
    let kpts: Vec<Vec<f64>> = preds.slots.iter().map(|s| s.keypoints.clone()).collect();
    let pose: Vec<Vec<f64>> = preds
        .slots
        .iter()
        .map(|s| s.translation.iter().chain(&s.rotation6d).copied().collect())
        .collect();
    FrameOutputs {
        class_probs: tape.leaf(Tensor::from_rows(&probs).unwrap()),
        boxes: tape.leaf(rows(&boxes)),
        keypoints: tape.leaf(Tensor::from_rows(&kpts).unwrap()),
        pose: tape.leaf(Tensor::from_rows(&pose).unwrap()),
        embeddings: tape.leaf(Tensor::zeros(vec![preds.len(), dim])),
    }
}

#[test]
fn perfect_predictions_give_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let catalog = ObjectCatalog::synthetic(3);
    let frame = FrameAnnotation {
        objects: vec![annotated(&mut rng, &catalog, 0), annotated(&mut rng, &catalog, 2)],
    };
    let preds = PredictionSet::oracle(&frame, 4, 3);
    let assignment = match_sets(&preds, &frame, &MatchCostConfig::default()).unwrap();
    let tape = Tape::new();
    let out = outputs_from(&tape, &preds, 6);
    let frames = [SupervisedFrame {
        outputs: out,
        targets: &frame,
        assignment: &assignment,
    }];
    let (total, report) = hungarian_loss(
        &tape,
        &frames,
        &[out.embeddings, out.embeddings],
        &catalog,
        &LossWeights::default(),
    )
    .unwrap();
    assert!(total.item().unwrap().abs() < 1e-12, "{report:?}");
    assert_eq!(report.matched, 2);
}

#[test]
fn report_total_is_weighted_sum_and_weights_are_separable() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let catalog = ObjectCatalog::synthetic(3);
    let frame = FrameAnnotation {
        objects: vec![annotated(&mut rng, &catalog, 1), annotated(&mut rng, &catalog, 2)],
    };
    let mut preds = PredictionSet::oracle(&frame, 4, 3);
    for s in preds.slots.iter_mut() {
        s.class_probs = random_probs(&mut rng, 1, 4).remove(0);
        s.bbox = random_box(&mut rng);
        for v in s.keypoints.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
        for v in s.translation.iter_mut().chain(s.rotation6d.iter_mut()) {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    let assignment = match_sets(&preds, &frame, &MatchCostConfig::default()).unwrap();
    let run = |w: &LossWeights| -> LossReport {
        let tape = Tape::new();
        let out = outputs_from(&tape, &preds, 3);
        let other = tape.leaf(Tensor::full(vec![4, 3], 0.3));
        let frames = [SupervisedFrame {
            outputs: out,
            targets: &frame,
            assignment: &assignment,
        }];
        hungarian_loss(&tape, &frames, &[out.embeddings, other], &catalog, w).unwrap().1
    };
    let w = LossWeights::default();
    let full = run(&w);
    assert!(close(full.total, full.weighted_total(&w), 1e-12));
    assert!(full.temporal > 0.0 && full.shapematch > 0.0 && full.kpt_cross_ratio > 0.0);

    let no_temporal = run(&LossWeights { w_temporal: 0.0, ..w });
    assert!(close(full.total - no_temporal.total, 0.1 * full.temporal, 1e-12));
    let no_kpt = run(&LossWeights { w_kpt_l1: 0.0, ..w });
    assert!(close(full.total - no_kpt.total, 10.0 * full.kpt_l1, 1e-12));
    let no_pose = run(&LossWeights { w_pose: 0.0, ..w });
    assert!(close(
        full.total - no_pose.total,
        0.05 * (full.shapematch + full.translation),
        1e-12
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn class_loss_decreases_in_target_probability(p in 0.01f64..0.98, dp in 0.001f64..0.01) {
        let lo = class_loss(&[vec![p, 1.0 - p]], &[0], 0.1).unwrap().0;
        let hi = class_loss(&[vec![p + dp, 1.0 - p - dp]], &[0], 0.1).unwrap().0;
        prop_assert!(hi < lo);
    }

    #[test]
    fn symmetric_shapematch_never_exceeds_asymmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let catalog = ObjectCatalog::synthetic(3);
        let mut model = catalog.models[(seed % 3) as usize].clone();
        let (ra, rb) = (random_rotation(&mut rng), random_rotation(&mut rng));
        model.symmetric = false;
        let asym = shapematch_loss(&ra, &rb, &model).unwrap();
        model.symmetric = true;
        let sym = shapematch_loss(&ra, &rb, &model).unwrap();
        prop_assert!(sym >= 0.0 && sym <= asym);
    }

    #[test]
    fn cross_ratio_term_is_similarity_invariant(
        seed in any::<u64>(),
        angle in -PI..PI,
        scale in 0.2f64..5.0,
        tx in -1.0f64..1.0,
        ty in -1.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (s, c) = angle.sin_cos();
        let mut moved = pred.clone();
        for k in 0..16 {
            let (x, y) = (pred[2 * k], pred[2 * k + 1]);
            moved[2 * k] = scale * (c * x - s * y) + tx;
            moved[2 * k + 1] = scale * (s * x + c * y) + ty;
        }
        let gt = vec![0.0; 32];
        let a = keypoint_terms(&[pred], std::slice::from_ref(&gt)).unwrap().cross_ratio;
        let b = keypoint_terms(&[moved], &[gt]).unwrap().cross_ratio;
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn components_are_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = random_probs(&mut rng, 3, 4);
        prop_assert!(class_loss(&probs, &[0, 3, 1], 0.1).unwrap().0 >= 0.0);
        let pairs = [(random_box(&mut rng), random_box(&mut rng))];
        prop_assert!(bbox_loss(&pairs, &LossWeights::default()).unwrap() >= 0.0);
        let kp: Vec<f64> = (0..32).map(|_| rng.gen()).collect();
        let t = keypoint_terms(&[kp], &[vec![0.5; 32]]).unwrap();
        prop_assert!(t.l1 >= 0.0 && t.cross_ratio >= 0.0);
    }
}
