//! Planar convex-polygon kernel used by the hull-overlap registration.

use std::f64::consts::PI;

use nalgebra::{Point2, Point3, Vector2};

use crate::segmentation::Landmark;

/// Cross products with magnitude below this are treated as collinear.
pub const COLLINEAR_EPS: f64 = 1e-12;
/// Hulls with smaller area cannot serve as registration features.
pub const DEGENERATE_AREA: f64 = 1e-6;

/// Planar rigid motion `[dx, dy, dtheta]` mapping frame-k coordinates into frame k-1.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseDelta2D {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

impl PoseDelta2D {
    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Self {
            dx,
            dy,
            dtheta: wrap_angle(dtheta),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn apply(&self, p: &Point2<f64>) -> Point2<f64> {
        let (s, c) = self.dtheta.sin_cos();
        Point2::new(c * p.x - s * p.y + self.dx, s * p.x + c * p.y + self.dy)
    }

    /// Applies the planar motion to a 3D point, leaving z untouched.
    pub fn apply3(&self, p: &Point3<f64>) -> Point3<f64> {
        let q = self.apply(&p.xy());
        Point3::new(q.x, q.y, p.z)
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &PoseDelta2D) -> PoseDelta2D {
        let t = self.apply(&Point2::new(other.dx, other.dy));
        PoseDelta2D::new(t.x, t.y, self.dtheta + other.dtheta)
    }

    pub fn inverse(&self) -> PoseDelta2D {
        let (s, c) = self.dtheta.sin_cos();
        PoseDelta2D::new(-(c * self.dx + s * self.dy), s * self.dx - c * self.dy, -self.dtheta)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dtheta]
    }

    pub fn translation_norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

#[inline]
fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex polygon with counter-clockwise vertices.
///
/// Fewer than three vertices encode a degenerate (point or segment) polygon
/// with zero area.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon2D {
    pub vertices: Vec<Point2<f64>>,
}

impl Polygon2D {
    pub fn new(vertices: Vec<Point2<f64>>) -> Self {
        Self { vertices }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() < DEGENERATE_AREA
    }

    /// Area centroid; vertex mean for degenerate polygons.
    pub fn centroid(&self) -> Point2<f64> {
        let v = &self.vertices;
        if v.is_empty() {
            return Point2::origin();
        }
        let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for i in 0..v.len() {
            let (p, q) = (v[i], v[(i + 1) % v.len()]);
            let w = p.x * q.y - q.x * p.y;
            a2 += w;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        if a2.abs() < 1e-15 {
            let s: Vector2<f64> = v.iter().map(|p| p.coords).sum();
            return Point2::from(s / v.len() as f64);
        }
        Point2::new(cx / (3.0 * a2), cy / (3.0 * a2))
    }

    pub fn translated(&self, offset: Vector2<f64>) -> Polygon2D {
        Polygon2D::new(self.vertices.iter().map(|p| p + offset).collect())
    }

    /// True when `p` is inside or on the boundary (within `tol` of each edge line).
    pub fn contains(&self, p: &Point2<f64>, tol: f64) -> bool {
        let v = &self.vertices;
        if v.len() < 3 {
            return false;
        }
        (0..v.len()).all(|i| {
            let (a, b) = (&v[i], &v[(i + 1) % v.len()]);
            let edge = b - a;
            cross(a, b, p) >= -tol * edge.norm()
        })
    }

    pub fn bounding_box(&self) -> Option<(Point2<f64>, Point2<f64>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (
                Point2::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point2::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        }))
    }
}

/// Graham's scan. Returns a CCW hull with collinear boundary points removed;
/// coincident input yields a single vertex, collinear input two.
pub fn convex_hull(points: &[Point2<f64>]) -> Polygon2D {
    let Some(&pivot) = points
        .iter()
        .min_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)))
    else {
        return Polygon2D::empty();
    };

    let mut rest: Vec<(f64, f64, Point2<f64>)> = points
        .iter()
        .filter(|p| **p != pivot)
        .map(|p| {
            let d = p - pivot;
            (d.y.atan2(d.x), d.norm_squared(), *p)
        })
        .collect();
    rest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let mut stack: Vec<Point2<f64>> = vec![pivot];
    for &(_, _, p) in &rest {
        let mut keep = true;
        while stack.len() >= 2 {
            let (o, top) = (stack[stack.len() - 2], stack[stack.len() - 1]);
            let c = cross(&o, &top, &p);
            if c > COLLINEAR_EPS {
                break;
            }
            if c < -COLLINEAR_EPS || (p - o).norm_squared() >= (top - o).norm_squared() {
                stack.pop();
            } else {
                // p lies on the segment o-top.
                keep = false;
                break;
            }
        }
        if keep && stack.last() != Some(&p) {
            stack.push(p);
        }
    }
    // Closing edge back to the pivot may leave a collinear last vertex.
    while stack.len() >= 3 {
        let n = stack.len();
        if cross(&stack[n - 2], &stack[n - 1], &pivot).abs() <= COLLINEAR_EPS {
            stack.pop();
        } else {
            break;
        }
    }
    Polygon2D::new(stack)
}

/// Shoelace area; non-negative for CCW input, zero for degenerate polygons.
pub fn polygon_area(poly: &Polygon2D) -> f64 {
    ring_area(&poly.vertices)
}

fn ring_area(v: &[Point2<f64>]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..v.len() {
        let (p, q) = (&v[i], &v[(i + 1) % v.len()]);
        s += p.x * q.y - q.x * p.y;
    }
    0.5 * s
}

/// The ⊗ operator: every vertex mapped by `R(dtheta) v + (dx, dy)`.
pub fn transform_polygon(poly: &Polygon2D, t: &PoseDelta2D) -> Polygon2D {
    Polygon2D::new(poly.vertices.iter().map(|p| t.apply(p)).collect())
}

/// Clips `subject` by every edge of `clip` (both CCW convex) into `out`.
fn clip_into(subject: &[Point2<f64>], clip: &[Point2<f64>], out: &mut Vec<Point2<f64>>, scratch: &mut Vec<Point2<f64>>) {
    out.clear();
    out.extend_from_slice(subject);
    let n = clip.len();
    for i in 0..n {
        if out.len() < 3 {
            out.clear();
            return;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        std::mem::swap(out, scratch);
        out.clear();
        let m = scratch.len();
        let mut prev = scratch[m - 1];
        let mut prev_side = cross(&a, &b, &prev);
        for j in 0..m {
            let cur = scratch[j];
            let side = cross(&a, &b, &cur);
            if side >= 0.0 {
                if prev_side < 0.0 {
                    out.push(edge_cut(&prev, &cur, prev_side, side));
                }
                out.push(cur);
            } else if prev_side >= 0.0 {
                out.push(edge_cut(&prev, &cur, prev_side, side));
            }
            prev = cur;
            prev_side = side;
        }
    }
}

#[inline]
fn edge_cut(p: &Point2<f64>, q: &Point2<f64>, sp: f64, sq: f64) -> Point2<f64> {
    let t = sp / (sp - sq);
    p + (q - p) * t
}

fn dedup_ring(v: &mut Vec<Point2<f64>>) {
    v.dedup_by(|b, a| (*a - *b).norm_squared() < 1e-24);
    while v.len() > 1 && (v[0] - v[v.len() - 1]).norm_squared() < 1e-24 {
        v.pop();
    }
}

fn boxes_overlap(a: &[Point2<f64>], b: &[Point2<f64>]) -> bool {
    let bb = |v: &[Point2<f64>]| {
        v.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
        )
    };
    let (ax0, ay0, ax1, ay1) = bb(a);
    let (bx0, by0, bx1, by1) = bb(b);
    ax0 <= bx1 && bx0 <= ax1 && ay0 <= by1 && by0 <= ay1
}

/// Intersection of two convex polygons; empty when they do not overlap.
pub fn convex_intersection(a: &Polygon2D, b: &Polygon2D) -> Polygon2D {
    if a.len() < 3 || b.len() < 3 || !boxes_overlap(&a.vertices, &b.vertices) {
        return Polygon2D::empty();
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut scratch = Vec::with_capacity(a.len() + b.len());
    clip_into(&a.vertices, &b.vertices, &mut out, &mut scratch);
    dedup_ring(&mut out);
    if out.len() < 3 {
        return Polygon2D::empty();
    }
    Polygon2D::new(out)
}

/// Reusable buffers for repeated intersection-area queries.
#[derive(Debug, Default)]
pub struct Clipper {
    out: Vec<Point2<f64>>,
    scratch: Vec<Point2<f64>>,
    moved: Vec<Point2<f64>>,
}

impl Clipper {
    pub fn new() -> Self {
        Self::default()
    }

    /// `area((subject ⊗ t) ∩ clip)` without allocating.
    pub fn transformed_overlap(&mut self, subject: &Polygon2D, t: &PoseDelta2D, clip: &Polygon2D) -> f64 {
        if subject.len() < 3 || clip.len() < 3 {
            return 0.0;
        }
        let (s, c) = t.dtheta.sin_cos();
        self.moved.clear();
        self.moved.extend(
            subject
                .vertices
                .iter()
                .map(|p| Point2::new(c * p.x - s * p.y + t.dx, s * p.x + c * p.y + t.dy)),
        );
        if !boxes_overlap(&self.moved, &clip.vertices) {
            return 0.0;
        }
        clip_into(&self.moved, &clip.vertices, &mut self.out, &mut self.scratch);
        ring_area(&self.out).max(0.0)
    }
}

fn canonical_order(a: &Polygon2D, b: &Polygon2D) -> bool {
    let key = |p: &Polygon2D| p.vertices.iter().flat_map(|v| [v.x, v.y]).collect::<Vec<_>>();
    let (ka, kb) = (key(a), key(b));
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(ka.len().cmp(&kb.len()))
        .is_le()
}

/// Centroid-aligned intersection-over-union of two hulls, in [0, 1].
pub fn hull_similarity(a: &Polygon2D, b: &Polygon2D) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a < DEGENERATE_AREA || area_b < DEGENERATE_AREA {
        return 0.0;
    }
    // Clip in a fixed order so that swapping the arguments is exact.
    let (a, b) = if canonical_order(a, b) { (a, b) } else { (b, a) };
    let a0 = a.translated(-a.centroid().coords);
    let b0 = b.translated(-b.centroid().coords);
    let inter = convex_intersection(&a0, &b0).area().min(area_a).min(area_b);
    let union = area_a + area_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Upper,
    Lower,
}

/// Projected upper and lower point sets of one landmark.
#[derive(Debug, Clone, Default)]
pub struct Layers {
    pub upper: Vec<Point2<f64>>,
    pub lower: Vec<Point2<f64>>,
}

impl Layers {
    pub fn get(&self, layer: Layer) -> &[Point2<f64>] {
        match layer {
            Layer::Upper => &self.upper,
            Layer::Lower => &self.lower,
        }
    }
}

/// Both landmarks of a pair split at their joint mean height.
#[derive(Debug, Clone)]
pub struct LayeredPair {
    pub threshold_z: f64,
    pub prev: Layers,
    pub curr: Layers,
}

impl LayeredPair {
    /// A layer is usable only when neither landmark leaves it empty.
    pub fn is_eligible(&self, layer: Layer) -> bool {
        !self.prev.get(layer).is_empty() && !self.curr.get(layer).is_empty()
    }
}

fn split_at(points: &[Point3<f64>], threshold: f64) -> Layers {
    let mut layers = Layers::default();
    for p in points {
        if p.z >= threshold {
            layers.upper.push(p.xy());
        } else {
            layers.lower.push(p.xy());
        }
    }
    layers
}

/// Vertical layering of a landmark pair; points at exactly the mean height go up.
pub fn split_layers(prev: &Landmark, curr: &Landmark) -> LayeredPair {
    let n = prev.points.len() + curr.points.len();
    let threshold_z = if n == 0 {
        0.0
    } else {
        prev.points.iter().chain(&curr.points).map(|p| p.z).sum::<f64>() / n as f64
    };
    LayeredPair {
        threshold_z,
        prev: split_at(&prev.points, threshold_z),
        curr: split_at(&curr.points, threshold_z),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square(x0: f64, y0: f64, side: f64) -> Polygon2D {
        Polygon2D::new(vec![
            Point2::new(x0, y0),
            Point2::new(x0 + side, y0),
            Point2::new(x0 + side, y0 + side),
            Point2::new(x0, y0 + side),
        ])
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(0.5), 0.5);
    }

    #[test]
    fn pose_inverse_and_compose() {
        let t = PoseDelta2D::new(1.0, -2.0, 0.3);
        let id = t.compose(&t.inverse());
        assert!(id.dx.abs() < 1e-12 && id.dy.abs() < 1e-12 && id.dtheta.abs() < 1e-12);
    }

    #[test]
    fn hull_drops_interior_point() {
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
            Point2::new(0.5, 0.5),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert_relative_eq!(hull.area(), 1.0);
    }

    #[test]
    fn hull_of_collinear_points_is_segment() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(2.0, 2.0)];
        let hull = convex_hull(&pts);
        assert_eq!(hull.vertices, vec![Point2::new(0.0, 0.0), Point2::new(2.0, 2.0)]);
        assert_eq!(hull.area(), 0.0);
    }

    #[test]
    fn hull_of_coincident_points_is_single_vertex() {
        let hull = convex_hull(&[Point2::new(3.0, 4.0); 5]);
        assert_eq!(hull.vertices, vec![Point2::new(3.0, 4.0)]);
    }

    #[test]
    fn hull_removes_edge_midpoints() {
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(0.5, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 0.5),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
            Point2::new(0.0, 0.5),
        ];
        assert_eq!(convex_hull(&pts).len(), 4);
    }

    #[test]
    fn areas() {
        assert_relative_eq!(polygon_area(&square(0.0, 0.0, 1.0)), 1.0);
        let tri = Polygon2D::new(vec![Point2::new(0.0, 0.0), Point2::new(2.0, 0.0), Point2::new(0.0, 2.0)]);
        assert_relative_eq!(polygon_area(&tri), 2.0);
    }

    #[test]
    fn transform_identity_and_shift() {
        let sq = square(0.0, 0.0, 1.0);
        assert_eq!(transform_polygon(&sq, &PoseDelta2D::identity()), sq);
        let moved = transform_polygon(&sq, &PoseDelta2D::new(1.0, 0.0, 0.0));
        assert_eq!(moved, square(1.0, 0.0, 1.0));
    }

    #[test]
    fn intersections() {
        let a = square(0.0, 0.0, 1.0);
        assert_relative_eq!(convex_intersection(&a, &a).area(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(convex_intersection(&a, &square(0.5, 0.0, 1.0)).area(), 0.5, epsilon = 1e-12);
        assert!(convex_intersection(&a, &square(10.0, 0.0, 1.0)).is_empty());
    }

    #[test]
    fn clipper_matches_allocating_path() {
        let a = square(0.0, 0.0, 2.0);
        let b = square(0.7, 0.4, 1.5);
        let t = PoseDelta2D::new(0.2, -0.1, 0.3);
        let direct = convex_intersection(&transform_polygon(&a, &t), &b).area();
        let fast = Clipper::new().transformed_overlap(&a, &t, &b);
        assert_relative_eq!(direct, fast, epsilon = 1e-12);
    }

    #[test]
    fn similarity_cases() {
        assert_relative_eq!(hull_similarity(&square(0.0, 0.0, 1.0), &square(7.0, -3.0, 1.0)), 1.0, epsilon = 1e-12);
        assert_relative_eq!(hull_similarity(&square(0.0, 0.0, 1.0), &square(-0.5, -0.5, 2.0)), 0.25, epsilon = 1e-12);
        let seg = Polygon2D::new(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)]);
        assert_eq!(hull_similarity(&seg, &square(0.0, 0.0, 1.0)), 0.0);
    }

    fn lm(zs: &[f64]) -> Landmark {
        Landmark::new(0, 50, zs.iter().enumerate().map(|(i, z)| Point3::new(i as f64, 0.0, *z)).collect())
    }

    #[test]
    fn layer_split_by_joint_mean() {
        let pair = split_layers(&lm(&[0.0, 2.0]), &lm(&[0.0, 2.0]));
        assert_relative_eq!(pair.threshold_z, 1.0);
        assert_eq!(pair.prev.upper.len(), 1);
        assert_eq!(pair.curr.upper.len(), 1);
        assert!(pair.is_eligible(Layer::Upper) && pair.is_eligible(Layer::Lower));
    }

    #[test]
    fn flat_pair_goes_to_upper() {
        let pair = split_layers(&lm(&[1.5, 1.5]), &lm(&[1.5]));
        assert_relative_eq!(pair.threshold_z, 1.5);
        assert_eq!(pair.prev.upper.len() + pair.curr.upper.len(), 3);
        assert!(!pair.is_eligible(Layer::Lower));
    }
}
