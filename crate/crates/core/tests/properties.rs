use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;

use roadforge::background::median_background;
use roadforge::eval::{evaluate_gt, GroundTruth, THRESHOLDS};
use roadforge::geometry::{
    estimate_homography, image_to_ground, pose_to_ground_homography, project_point, CameraIntrinsics, CameraPose,
    Homography,
};
use roadforge::localize::{localize, shift_center_by, Detection};
use roadforge::rng::{derive_u64, KeyPart};
use roadforge::traffic::{footprints_intersect, wrap_angle, Footprint};
use roadforge::ImageBuffer;

fn frames_strategy() -> impl Strategy<Value = Vec<ImageBuffer>> {
    (1usize..=9, 1u32..=6, 1u32..=6).prop_flat_map(|(n, w, h)| {
        prop::collection::vec(prop::collection::vec(any::<u8>(), (w * h * 3) as usize), n)
            .prop_map(move |frames| frames.into_iter().map(|d| ImageBuffer::from_raw(w, h, d).unwrap()).collect())
    })
}

fn gt_and_dets() -> impl Strategy<Value = (GroundTruth, Vec<Detection>)> {
    let gt = prop::collection::vec(prop::collection::vec((0i32..30, 0i32..30), 0..5), 1..4);
    gt.prop_flat_map(|images| {
        let n = images.len();
        let dets = prop::collection::vec((0..n, 0i32..30, 0i32..30, 1u32..=8), 0..10);
        (Just(images), dets)
    })
    .prop_map(|(images, dets)| {
        let gt: GroundTruth = images
            .into_iter()
            .enumerate()
            .map(|(i, pts)| (format!("i{i}"), pts.into_iter().map(|(x, y)| [x as f64, y as f64]).collect()))
            .collect();
        let dets = dets
            .into_iter()
            .map(|(i, x, y, s)| Detection {
                image_id: format!("i{i}"),
                bottom_center: [x as f64, y as f64],
                score: s as f64 / 8.0,
                r#box: None,
            })
            .collect();
        (gt, dets)
    })
}

fn camera() -> impl Strategy<Value = (CameraIntrinsics, CameraPose)> {
    (4.0f64..10.0, 12.0f64..40.0, 0.0f64..std::f64::consts::TAU, 400.0f64..900.0).prop_map(|(h, d, az, f)| {
        let k = CameraIntrinsics::new(f, f, 360.0, 240.0, 720, 480).unwrap();
        let pose = CameraPose::look_at(&Vector3::new(d * az.cos(), d * az.sin(), h), &Vector3::zeros(), &Vector3::z())
            .unwrap();
        (k, pose)
    })
}

proptest! {
    #[test]
    fn median_matches_sorting(frames in frames_strategy()) {
        let got = median_background(&frames).unwrap();
        let n = frames.len();
        for i in 0..got.as_raw().len() {
            let mut v: Vec<u8> = frames.iter().map(|f| f.as_raw()[i]).collect();
            v.sort_unstable();
            prop_assert_eq!(got.as_raw()[i], v[(n - 1) / 2]);
        }
    }

    #[test]
    fn median_ignores_frame_order(frames in frames_strategy(), rot in 0usize..9) {
        let mut shuffled = frames.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        shuffled.reverse();
        prop_assert_eq!(median_background(&frames).unwrap(), median_background(&shuffled).unwrap());
    }

    #[test]
    fn metrics_ignore_detection_order((gt, dets) in gt_and_dets(), rot in 0usize..10) {
        let mut other = dets.clone();
        if !other.is_empty() {
            let len = other.len();
            other.rotate_left(rot % len);
        }
        prop_assert_eq!(evaluate_gt(&gt, &dets).unwrap(), evaluate_gt(&gt, &other).unwrap());
    }

    #[test]
    fn metrics_depend_only_on_score_order((gt, dets) in gt_and_dets()) {
        let scaled: Vec<Detection> = dets.iter().map(|d| Detection { score: d.score * 0.5, ..d.clone() }).collect();
        prop_assert_eq!(evaluate_gt(&gt, &dets).unwrap(), evaluate_gt(&gt, &scaled).unwrap());
    }

    #[test]
    fn metrics_are_bounded_and_recall_grows((gt, dets) in gt_and_dets()) {
        let r = evaluate_gt(&gt, &dets).unwrap();
        let mut prev = 0.0;
        for t in THRESHOLDS {
            let (ap, rec) = (r.ap_per_threshold[&t], r.recall_per_threshold[&t]);
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert!((0.0..=1.0).contains(&rec));
            prop_assert!(ap <= rec + 1e-12);
            prop_assert!(rec >= prev);
            prev = rec;
        }
        prop_assert!(r.map <= r.ar + 1e-12);
    }

    #[test]
    fn homography_is_scale_invariant(
        a in prop::array::uniform9(-5.0f64..5.0),
        s in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
    ) {
        let m = Matrix3::from_row_slice(&a);
        prop_assume!(m.determinant().abs() > 1e-3);
        let h1 = Homography::new(m).unwrap();
        let h2 = Homography::new(m * s).unwrap();
        prop_assert!((h1.matrix() - h2.matrix()).norm() < 1e-12);
        prop_assert!((h1.matrix().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimated_homography_reproduces_pairs((k, pose) in camera(), pts in prop::collection::vec((-15.0f64..15.0, -15.0f64..15.0), 6..12)) {
        let pairs: Vec<_> = pts
            .iter()
            .filter_map(|&(x, y)| {
                let g = Vector3::new(x, y, 0.0);
                project_point(&k, &pose, &g).ok().map(|p| (p, Vector2::new(x, y)))
            })
            .collect();
        prop_assume!(pairs.len() >= 6);
        let Ok(h) = estimate_homography(&pairs) else { return Ok(()) };
        for (p, g) in &pairs {
            prop_assert!((image_to_ground(&h, p).unwrap() - g).norm() < 1e-6);
        }
    }

    #[test]
    fn lift_inverts_projection((k, pose) in camera(), x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let g = Vector3::new(x, y, 0.0);
        let Ok(px) = project_point(&k, &pose, &g) else { return Ok(()) };
        let h = pose_to_ground_homography(&k, &pose).unwrap();
        let det = [Detection { image_id: "a".into(), bottom_center: [px.x, px.y], score: 0.5, r#box: None }];
        let back = localize(&det, &h)[0].ground.unwrap();
        prop_assert!((back - Vector2::new(x, y)).norm() < 1e-6);
    }

    #[test]
    fn shift_is_affine(cx in -1e3f64..1e3, cy in -1e3f64..1e3, h1 in 0.0f64..500.0, h2 in 0.0f64..500.0, f in 0.0f64..1.0) {
        let a = shift_center_by([cx, cy], h1, f);
        let b = shift_center_by([cx, cy], h2, f);
        prop_assert_eq!(a[0], cx);
        prop_assert!(((b[1] - a[1]) - f * (h2 - h1)).abs() < 1e-9);
    }

    #[test]
    fn wrapped_angles_stay_in_range(a in -1e4f64..1e4) {
        let w = wrap_angle(a);
        prop_assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&w));
        prop_assert!(((a - w) / std::f64::consts::TAU - ((a - w) / std::f64::consts::TAU).round()).abs() < 1e-6);
    }

    #[test]
    fn intersection_is_symmetric(
        a in (-10.0f64..10.0, -10.0f64..10.0, -4.0f64..4.0, 1.0f64..6.0, 1.0f64..3.0),
        b in (-10.0f64..10.0, -10.0f64..10.0, -4.0f64..4.0, 1.0f64..6.0, 1.0f64..3.0),
    ) {
        let fa = Footprint { center: [a.0, a.1], heading: a.2, length: a.3, width: a.4 };
        let fb = Footprint { center: [b.0, b.1], heading: b.2, length: b.3, width: b.4 };
        prop_assert_eq!(footprints_intersect(&fa, &fb), footprints_intersect(&fb, &fa));
        prop_assert!(footprints_intersect(&fa, &fa));
        let gap = (a.3.hypot(a.4) + b.3.hypot(b.4)) / 2.0;
        if ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() > gap {
            prop_assert!(!footprints_intersect(&fa, &fb));
        }
    }

    #[test]
    fn derived_seeds_are_stable(seed in any::<u64>(), i in 0u64..1000) {
        let a = derive_u64(seed, &[KeyPart::Str("cam"), KeyPart::U64(i)]);
        prop_assert_eq!(a, derive_u64(seed, &[KeyPart::Str("cam"), KeyPart::U64(i)]));
        prop_assert_ne!(a, derive_u64(seed, &[KeyPart::Str("cam"), KeyPart::U64(i + 1)]));
    }
}
