//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the code it is compared against, except to build
//! inputs.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{Point2, Point3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use sdslam_core::geometry::{convex_hull, Layer, Polygon2D, PoseDelta2D};
use sdslam_core::pose_estimation::ConvexHullFeature;
use sdslam_core::dataio::LabeledFrame;
use sdslam_core::segmentation::{partition_by_class, SegmentationConfig};
use sdslam_core::semantic::{self, ClassId};

// ---------------------------------------------------------------- geometry

fn orient(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_closed_segment(a: &Point2<f64>, b: &Point2<f64>, p: &Point2<f64>) -> bool {
    (p - a).dot(&(b - a)) >= 0.0 && (p - b).dot(&(a - b)) >= 0.0
}

/// O(n³) hull: `(i, j)` is a hull edge when every other point is strictly to
/// its left or on the closed segment. Vertices are returned CCW from the
/// lowest (then leftmost) point.
pub fn brute_force_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut uniq: Vec<Point2<f64>> = Vec::new();
    for p in points {
        if !uniq.contains(p) {
            uniq.push(*p);
        }
    }
    if uniq.len() <= 1 {
        return uniq;
    }
    let n = uniq.len();
    let mut next = vec![None; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let edge = (0..n).filter(|&k| k != i && k != j).all(|k| {
                let c = orient(&uniq[i], &uniq[j], &uniq[k]);
                c > 0.0 || (c == 0.0 && on_closed_segment(&uniq[i], &uniq[j], &uniq[k]))
            });
            if edge {
                next[i] = Some(j);
            }
        }
    }
    let start = (0..n)
        .min_by(|&a, &b| uniq[a].y.total_cmp(&uniq[b].y).then(uniq[a].x.total_cmp(&uniq[b].x)))
        .unwrap();
    let mut out = vec![uniq[start]];
    let mut cur = next[start].expect("lowest point starts a hull edge");
    while cur != start {
        out.push(uniq[cur]);
        cur = next[cur].expect("hull edges form a cycle");
        assert!(out.len() <= n, "hull walk did not close");
    }
    out
}

/// Inside-or-on test for a CCW convex polygon.
pub fn inside_convex(poly: &[Point2<f64>], p: &Point2<f64>) -> bool {
    let n = poly.len();
    (0..n).all(|i| orient(&poly[i], &poly[(i + 1) % n], p) >= 0.0)
}

/// Rejection-sampling estimate of `area(a ∩ b)`, sampling the overlap of the
/// two bounding boxes.
pub fn monte_carlo_intersection(a: &[Point2<f64>], b: &[Point2<f64>], samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let bbox = |v: &[Point2<f64>]| {
        v.iter().fold((f64::MAX, f64::MAX, f64::MIN, f64::MIN), |(x0, y0, x1, y1), p| {
            (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y))
        })
    };
    let (ax0, ay0, ax1, ay1) = bbox(a);
    let (bx0, by0, bx1, by1) = bbox(b);
    let (x0, y0, x1, y1) = (ax0.max(bx0), ay0.max(by0), ax1.min(bx1), ay1.min(by1));
    if x0 >= x1 || y0 >= y1 {
        return 0.0;
    }
    let mut hits = 0usize;
    for _ in 0..samples {
        let p = Point2::new(rng.gen_range(x0..x1), rng.gen_range(y0..y1));
        if inside_convex(a, &p) && inside_convex(b, &p) {
            hits += 1;
        }
    }
    (x1 - x0) * (y1 - y0) * hits as f64 / samples as f64
}

/// Shoelace area computed independently of the crate.
pub fn shoelace(v: &[Point2<f64>]) -> f64 {
    let n = v.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n).map(|i| v[i].x * v[(i + 1) % n].y - v[(i + 1) % n].x * v[i].y).sum::<f64>()
}

/// Convex polygon inscribed in a rotated ellipse, CCW.
pub fn random_ellipse_polygon(rng: &mut ChaCha8Rng, centre: Point2<f64>, r_lo: f64, r_hi: f64) -> Polygon2D {
    let n = rng.gen_range(5..16);
    let (a, b) = (rng.gen_range(r_lo..r_hi), rng.gen_range(r_lo..r_hi));
    let phi: f64 = rng.gen_range(0.0..TAU);
    let (s, c) = phi.sin_cos();
    let offset: f64 = rng.gen_range(0.0..TAU);
    let jitter = 0.4 * TAU / n as f64;
    let vertices = (0..n)
        .map(|k| {
            let t = offset + TAU * k as f64 / n as f64 + rng.gen_range(-0.5..0.5) * jitter;
            let (ex, ey) = (a * t.cos(), b * t.sin());
            Point2::new(centre.x + c * ex - s * ey, centre.y + s * ex + c * ey)
        })
        .collect();
    Polygon2D::new(vertices)
}

// ------------------------------------------------------------------ DBSCAN

/// O(n²) DBSCAN: core points by direct counting, clusters as connected
/// components of the core graph numbered by their lowest core index, border
/// points attached to the lowest-numbered neighbouring cluster.
pub fn dbscan_oracle(points: &[Point3<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| (points[i] - points[j]).norm_squared() <= eps * eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    // Root of each component is its lowest index; rank components by it.
    let mut roots: Vec<usize> = (0..n).filter(|&i| core[i]).map(|i| find(&mut parent, i)).collect();
    roots.sort_unstable();
    roots.dedup();
    let id_of = |root: usize| roots.binary_search(&root).unwrap();

    let mut labels = vec![None; n];
    for i in 0..n {
        if core[i] {
            labels[i] = Some(id_of(find(&mut parent, i)));
        }
    }
    for i in 0..n {
        if !core[i] {
            labels[i] = (0..n)
                .filter(|&j| core[j] && near(i, j))
                .map(|j| id_of(find(&mut parent, j)))
                .min();
        }
    }
    labels
}

const SCENE_CLASSES: [ClassId; 8] = [
    semantic::CAR,
    semantic::PERSON,
    semantic::BUILDING,
    semantic::POLE,
    semantic::TRUNK,
    semantic::ROAD,
    semantic::UNLABELED,
    semantic::BUS,
];

/// Blobs of one class around a few centres plus uniform clutter.
pub fn random_scene(rng: &mut ChaCha8Rng, max_points: usize) -> LabeledFrame {
    let n = rng.gen_range(1..=max_points);
    let blobs: Vec<(Point3<f64>, f64, ClassId)> = (0..rng.gen_range(1..8))
        .map(|_| {
            let c = Point3::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(-1.0..2.0));
            (c, rng.gen_range(0.3..3.0), SCENE_CLASSES[rng.gen_range(0..SCENE_CLASSES.len())])
        })
        .collect();
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.gen_bool(0.8) {
            let (c, r, class) = blobs[rng.gen_range(0..blobs.len())];
            points.push(c + Vector3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r)));
            labels.push(class);
        } else {
            points.push(Point3::new(rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0), rng.gen_range(-2.0..3.0)));
            labels.push(SCENE_CLASSES[rng.gen_range(0..SCENE_CLASSES.len())]);
        }
    }
    LabeledFrame::labeled(0, points, labels).unwrap()
}

/// Clusters of each class as produced by the oracle, as point lists, after
/// the class partition and range cut of the pipeline.
pub fn oracle_clusters(frame: &LabeledFrame, cfg: &SegmentationConfig) -> Vec<(ClassId, Vec<Point3<f64>>)> {
    let partition = partition_by_class(frame).unwrap();
    let mut out = Vec::new();
    for group in [&partition.static_candidates, &partition.unknown_candidates] {
        let mut by_class: BTreeMap<ClassId, Vec<Point3<f64>>> = BTreeMap::new();
        for p in group.iter().filter(|p| p.position.coords.norm() <= cfg.max_range_m) {
            by_class.entry(p.class_id).or_default().push(p.position);
        }
        for (class, pts) in by_class {
            let params = cfg.adaptive_params(class).unwrap();
            let labels = dbscan_oracle(&pts, params.eps, params.min_pts);
            let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
            let mut clusters = vec![Vec::new(); count];
            for (p, l) in pts.iter().zip(&labels) {
                if let Some(l) = l {
                    clusters[*l].push(*p);
                }
            }
            out.extend(clusters.into_iter().filter(|c| c.len() >= params.min_pts).map(|c| (class, c)));
        }
    }
    out
}

// ------------------------------------------------------------------ Kalman

pub type M4 = [[f64; 4]; 4];

pub fn m4_identity() -> M4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn m4_mul(a: &M4, b: &M4) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

pub fn m4_t(a: &M4) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = a[j][i];
        }
    }
    m
}

/// Transition over `tau` of the continuous model `ẍ = -ω ẏ`, `ÿ = ω ẋ`
/// (state `[x, ẋ, y, ẏ]`), by summing the exponential series of `Aτ`.
pub fn oracle_transition(omega: f64, tau: f64) -> M4 {
    let mut a = [[0.0; 4]; 4];
    a[0][1] = tau;
    a[1][3] = -omega * tau;
    a[2][3] = tau;
    a[3][1] = omega * tau;
    let mut sum = m4_identity();
    let mut term = m4_identity();
    for k in 1..40 {
        term = m4_mul(&term, &a);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                sum[i][j] += term[i][j];
            }
        }
    }
    sum
}

/// Textbook prediction with white acceleration noise entering through
/// `G = [[τ²/2, 0], [τ, 0], [0, τ²/2], [0, τ]]`.
pub fn oracle_predict(x: &[f64; 4], p: &M4, omega: f64, tau: f64, sigma: f64) -> ([f64; 4], M4) {
    let f = oracle_transition(omega, tau);
    let xn: [f64; 4] = std::array::from_fn(|i| (0..4).map(|k| f[i][k] * x[k]).sum());
    let mut pn = m4_mul(&m4_mul(&f, p), &m4_t(&f));
    let g = [[0.5 * tau * tau, 0.0], [tau, 0.0], [0.0, 0.5 * tau * tau], [0.0, tau]];
    for i in 0..4 {
        for j in 0..4 {
            pn[i][j] += sigma * sigma * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    (xn, pn)
}

/// Textbook update observing `(x, y)`: `K = P Hᵀ S⁻¹`, `P ← (I − K H) P`.
pub fn oracle_update(x: &[f64; 4], p: &M4, z: [f64; 2], sigma: f64) -> ([f64; 4], M4) {
    let obs = [0usize, 2];
    let r = sigma * sigma;
    let s = [
        [p[0][0] + r, p[0][2]],
        [p[2][0], p[2][2] + r],
    ];
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    let s_inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
    let mut k = [[0.0; 2]; 4];
    for i in 0..4 {
        for j in 0..2 {
            k[i][j] = (0..2).map(|m| p[i][obs[m]] * s_inv[m][j]).sum();
        }
    }
    let innov = [z[0] - x[0], z[1] - x[2]];
    let xn: [f64; 4] = std::array::from_fn(|i| x[i] + k[i][0] * innov[0] + k[i][1] * innov[1]);
    let mut ikh = m4_identity();
    for i in 0..4 {
        for m in 0..2 {
            ikh[i][obs[m]] -= k[i][m];
        }
    }
    (xn, m4_mul(&ikh, p))
}

// --------------------------------------------------------------------- PSO

/// Twenty hull features whose current hulls are the previous hulls moved by
/// `truth⁻¹`, with Gaussian vertex noise of `noise_m`.
pub fn registration_scene(rng: &mut ChaCha8Rng, truth: &PoseDelta2D, noise_m: f64) -> Vec<ConvexHullFeature> {
    let noise = Normal::new(0.0, noise_m.max(f64::MIN_POSITIVE)).unwrap();
    let back = truth.inverse();
    (0..20)
        .map(|_| {
            let r = rng.gen_range(5.0..30.0);
            let a: f64 = rng.gen_range(0.0..TAU);
            let prev_hull = random_ellipse_polygon(rng, Point2::new(r * a.cos(), r * a.sin()), 0.3, 2.5);
            let noisy: Vec<Point2<f64>> = prev_hull
                .vertices
                .iter()
                .map(|v| {
                    let m = back.apply(v);
                    if noise_m > 0.0 {
                        Point2::new(m.x + noise.sample(rng), m.y + noise.sample(rng))
                    } else {
                        m
                    }
                })
                .collect();
            ConvexHullFeature {
                prev_hull,
                curr_hull: convex_hull(&noisy),
                layer: Layer::Upper,
                similarity: 1.0,
                class_id: semantic::POLE,
            }
        })
        .collect()
}
