mod common;

use nalgebra::Point3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dbscan_oracle, oracle_clusters, random_scene};
use sdslam_core::dataio::LabeledFrame;
use sdslam_core::segmentation::{dbscan_labels, partition_by_class, segment_frame, DbscanParams, SegmentationConfig};
use sdslam_core::semantic::ClassId;

#[test]
fn segmentation_matches_brute_force_dbscan() {
    let cfg = SegmentationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..40 {
        let frame = random_scene(&mut rng, 500);
        let seg = segment_frame(&frame, &cfg).unwrap();
        let got: Vec<(ClassId, Vec<Point3<f64>>)> = seg
            .static_landmarks
            .iter()
            .chain(&seg.unknown_landmarks)
            .map(|l| (l.class_id, l.points.clone()))
            .collect();
        assert_eq!(got, oracle_clusters(&frame, &cfg), "case {case}");
    }
}

#[test]
fn raw_labels_match_oracle_including_border_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..100 {
        let n = rng.gen_range(1..300);
        // A dense strip makes many border points reachable from two clusters.
        let pts: Vec<Point3<f64>> = (0..n)
            .map(|_| Point3::new(rng.gen_range(0.0..20.0), rng.gen_range(0.0..1.5), 0.0))
            .collect();
        let eps = rng.gen_range(0.3..1.2);
        let min_pts = rng.gen_range(2..8);
        let params = DbscanParams::new(eps, min_pts).unwrap();
        assert_eq!(dbscan_labels(&pts, &params), dbscan_oracle(&pts, eps, min_pts), "case {case}");
    }
}

fn scene() -> impl Strategy<Value = LabeledFrame> {
    any::<u64>().prop_map(|seed| random_scene(&mut ChaCha8Rng::seed_from_u64(seed), 400))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_exact(frame in scene()) {
        let p = partition_by_class(&frame).unwrap();
        prop_assert_eq!(p.total(), frame.len());
    }

    #[test]
    fn landmarks_respect_min_pts_and_centre(frame in scene()) {
        let cfg = SegmentationConfig::default();
        let seg = segment_frame(&frame, &cfg).unwrap();
        for l in seg.static_landmarks.iter().chain(&seg.unknown_landmarks) {
            prop_assert!(l.points.len() >= cfg.adaptive_params(l.class_id).unwrap().min_pts);
            let mean = l.points.iter().map(|p| p.coords).sum::<nalgebra::Vector3<f64>>() / l.points.len() as f64;
            prop_assert!((l.centre.coords - mean).norm() <= 1e-9);
        }
    }

    #[test]
    fn segmentation_is_deterministic(frame in scene()) {
        let cfg = SegmentationConfig::default();
        let a = segment_frame(&frame, &cfg).unwrap();
        let b = segment_frame(&frame, &cfg).unwrap();
        prop_assert_eq!(a.static_landmarks, b.static_landmarks);
        prop_assert_eq!(a.unknown_landmarks, b.unknown_landmarks);
    }

    #[test]
    fn instance_ids_are_unique(frame in scene()) {
        let seg = segment_frame(&frame, &SegmentationConfig::default()).unwrap();
        let mut ids: Vec<usize> = seg.static_landmarks.iter().chain(&seg.unknown_landmarks).map(|l| l.instance_id).collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), n);
    }
}
