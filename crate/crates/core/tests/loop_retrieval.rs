use nalgebra::{Point3, Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdslam_core::loop_closure::{make_descriptor, verify, DescriptorDatabase, LoopConfig, Verification};
use sdslam_core::pose_estimation::PsoConfig;
use sdslam_core::segmentation::Landmark;
use sdslam_core::semantic::{ClassId, BUILDING, POLE, TRAFFIC_SIGN, TRUNK};

const STATIC: [ClassId; 4] = [BUILDING, POLE, TRUNK, TRAFFIC_SIGN];

fn blob(id: usize, class_id: ClassId, x: f64, y: f64, radius: f64) -> Landmark {
    let pts = (0..60)
        .map(|i| {
            let a = i as f64 * 0.7;
            let r = radius * (0.6 + 0.4 * ((i * 7) % 5) as f64 / 4.0);
            Point3::new(x + r * a.cos(), y + 0.7 * r * a.sin(), (i % 6) as f64 * 0.4)
        })
        .collect();
    Landmark::new(id, class_id, pts)
}

fn radius_for(class_id: ClassId) -> f64 {
    if class_id == BUILDING {
        2.5
    } else {
        0.3
    }
}

/// Static landmarks at the given (range, bearing, class); a landmark's shape
/// turns with its bearing so that its centre range does not depend on it.
fn place(spots: &[(f64, f64, ClassId)]) -> Vec<Landmark> {
    spots
        .iter()
        .enumerate()
        .map(|(i, &(r, b, c))| {
            let l = blob(i, c, r, 0.0, radius_for(c));
            let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), b);
            Landmark::new(i, c, l.points.iter().map(|p| rot * p).collect())
        })
        .collect()
}

fn random_spots(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64, ClassId)> {
    (0..n)
        .map(|_| (rng.gen_range(3.0..60.0), rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI), *STATIC.choose(rng).unwrap()))
        .collect()
}

fn moved(ls: &[Landmark], yaw: f64, shift: Vector3<f64>) -> Vec<Landmark> {
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    ls.iter()
        .map(|l| Landmark::new(l.instance_id, l.class_id, l.points.iter().map(|p| r * p + shift).collect()))
        .collect()
}

#[test]
fn perturbed_revisit_ranks_first_among_distractors() {
    let cfg = LoopConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for trial in 0..10 {
        let target = 37 + trial;
        let mut db = DescriptorDatabase::new();
        let mut original = Vec::new();
        for id in 0..=100 {
            let spots = random_spots(&mut rng, 60);
            if id == target {
                original = spots.clone();
            }
            db.insert(make_descriptor(id, &place(&spots), &cfg), &cfg);
        }
        let mut kept = original.clone();
        kept.shuffle(&mut rng);
        kept.truncate(54);
        let revisit = moved(&place(&kept), rng.gen_range(-3.0..3.0), Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0));
        let query = make_descriptor(1000, &revisit, &cfg);
        let hits = db.query(&query, &cfg);
        assert!(!hits.is_empty(), "trial {trial}: no candidate");
        assert_eq!(hits[0].keyframe_id, target, "trial {trial}: {hits:?}");
        let verdict = verify(db.get(target).unwrap(), &query, &cfg, &PsoConfig::default());
        assert!(matches!(verdict, Verification::Accepted(_)), "trial {trial}: {verdict:?}");
    }
}

#[test]
fn same_histograms_at_a_different_place_are_rejected() {
    let cfg = LoopConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for trial in 0..20 {
        let spots = random_spots(&mut rng, 20);
        // Same ranges and classes, unrelated bearings: the descriptors coincide.
        let scrambled: Vec<_> = spots.iter().map(|&(r, _, c)| (r, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI), c)).collect();
        let a = make_descriptor(0, &place(&spots), &cfg);
        let b = make_descriptor(100, &place(&scrambled), &cfg);
        assert_eq!(a.histograms, b.histograms);
        let mut db = DescriptorDatabase::new();
        db.insert(a.clone(), &cfg);
        assert_eq!(db.query(&b, &cfg).len(), 1);
        match verify(&a, &b, &cfg, &PsoConfig::default().with_seed(trial)) {
            Verification::Rejected { pairs, overlap_ratio } => {
                assert!(pairs < cfg.min_pairs || overlap_ratio < cfg.overlap_ratio, "trial {trial}: {pairs} {overlap_ratio}")
            }
            Verification::Accepted(c) => panic!("trial {trial}: accepted {c:?}"),
        }
    }
}
