mod common;

use nalgebra::Point2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force_hull, monte_carlo_intersection, random_ellipse_polygon, shoelace};
use sdslam_core::geometry::{
    convex_hull, convex_intersection, hull_similarity, polygon_area, transform_polygon, Polygon2D, PoseDelta2D,
};

fn random_set(rng: &mut ChaCha8Rng) -> Vec<Point2<f64>> {
    let n = rng.gen_range(1..=200);
    if rng.gen_bool(0.3) {
        // Small integer grid: duplicates and collinear runs, exact arithmetic.
        (0..n).map(|_| Point2::new(rng.gen_range(0..8) as f64, rng.gen_range(0..8) as f64)).collect()
    } else {
        (0..n).map(|_| Point2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0))).collect()
    }
}

#[test]
fn graham_scan_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let pts = random_set(&mut rng);
        assert_eq!(convex_hull(&pts).vertices, brute_force_hull(&pts), "case {case}");
    }
}

#[test]
fn hull_of_collinear_points_is_two_vertices() {
    let pts: Vec<_> = (0..10).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
    assert_eq!(convex_hull(&pts).vertices, vec![Point2::new(0.0, 0.0), Point2::new(9.0, 18.0)]);
}

#[test]
fn intersection_area_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..10 {
        let a = random_ellipse_polygon(&mut rng, Point2::origin(), 1.0, 3.0);
        let c = Point2::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
        let b = random_ellipse_polygon(&mut rng, c, 1.0, 3.0);
        let exact = convex_intersection(&a, &b).area();
        let mc = monte_carlo_intersection(&a.vertices, &b.vertices, 1_000_000, &mut rng);
        assert!((exact - mc).abs() <= 0.01 * mc, "case {case}: {exact} vs {mc}");
    }
}

#[test]
fn disjoint_polygons_do_not_intersect() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random_ellipse_polygon(&mut rng, Point2::origin(), 1.0, 2.0);
    let b = random_ellipse_polygon(&mut rng, Point2::new(10.0, 0.0), 1.0, 2.0);
    assert!(convex_intersection(&a, &b).is_empty());
}

fn points() -> impl Strategy<Value = Vec<Point2<f64>>> {
    prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 3..80)
        .prop_map(|v| v.into_iter().map(|(x, y)| Point2::new(x, y)).collect())
}

fn pose() -> impl Strategy<Value = PoseDelta2D> {
    (-30.0..30.0f64, -30.0..30.0f64, -3.1..3.1f64).prop_map(|(x, y, t)| PoseDelta2D::new(x, y, t))
}

fn hull_of(p: &[Point2<f64>]) -> Polygon2D {
    convex_hull(p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn every_point_lies_in_its_hull(pts in points()) {
        let h = hull_of(&pts);
        prop_assume!(h.len() >= 3);
        for p in &pts {
            prop_assert!(h.contains(p, 1e-9));
        }
    }

    #[test]
    fn hull_turns_left_at_every_vertex(pts in points()) {
        let v = hull_of(&pts).vertices;
        let n = v.len();
        prop_assume!(n >= 3);
        for i in 0..n {
            let (a, b, c) = (v[i], v[(i + 1) % n], v[(i + 2) % n]);
            let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
            prop_assert!(cross >= -1e-12);
        }
    }

    #[test]
    fn area_is_rigid_invariant(pts in points(), t in pose()) {
        let h = hull_of(&pts);
        let moved = transform_polygon(&h, &t);
        prop_assert!(polygon_area(&h) >= 0.0);
        prop_assert!((polygon_area(&moved) - polygon_area(&h)).abs() <= 1e-9);
        prop_assert!((polygon_area(&h) - shoelace(&h.vertices)).abs() <= 1e-9);
    }

    #[test]
    fn intersection_is_bounded_and_symmetric(a in points(), b in points()) {
        let (ha, hb) = (hull_of(&a), hull_of(&b));
        let ab = convex_intersection(&ha, &hb).area();
        let ba = convex_intersection(&hb, &ha).area();
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= ha.area().min(hb.area()) + 1e-9);
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert_eq!(hull_similarity(&ha, &hb), hull_similarity(&hb, &ha));
    }

    #[test]
    fn self_intersection_is_identity(a in points()) {
        let h = hull_of(&a);
        prop_assert!((convex_intersection(&h, &h).area() - h.area()).abs() <= 1e-9);
    }

    #[test]
    fn intersection_area_survives_a_shared_rigid_motion(a in points(), b in points(), t in pose()) {
        let (ha, hb) = (hull_of(&a), hull_of(&b));
        let before = convex_intersection(&ha, &hb).area();
        let after = convex_intersection(&transform_polygon(&ha, &t), &transform_polygon(&hb, &t)).area();
        prop_assert!((before - after).abs() <= 1e-9, "{} vs {}", before, after);
    }

    #[test]
    fn similarity_is_a_unit_interval_value(a in points(), b in points()) {
        let s = hull_similarity(&hull_of(&a), &hull_of(&b));
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn intersection_points_lie_in_both_inputs(a in points(), b in points()) {
        let (ha, hb) = (hull_of(&a), hull_of(&b));
        prop_assume!(ha.len() >= 3 && hb.len() >= 3);
        for p in &convex_intersection(&ha, &hb).vertices {
            prop_assert!(ha.contains(p, 1e-7) && hb.contains(p, 1e-7));
        }
    }
}
