//! Pitch and height change from plane fits to the ground ahead of and behind the sensor.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_abs_max: f64,
}

impl GroundRegion {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y.abs() <= self.y_abs_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerticalConfig {
    pub front: GroundRegion,
    pub rear: GroundRegion,
    /// Residual cut in robust standard deviations.
    pub trim_sigma: f64,
    pub trim_rounds: usize,
    pub min_points: usize,
}

impl Default for VerticalConfig {
    fn default() -> Self {
        Self {
            front: GroundRegion {
                x_min: 2.0,
                x_max: 12.0,
                y_abs_max: 3.0,
            },
            rear: GroundRegion {
                x_min: -12.0,
                x_max: -2.0,
                y_abs_max: 3.0,
            },
            trim_sigma: 3.0,
            trim_rounds: 2,
            min_points: 20,
        }
    }
}

/// Plane `normal · p + offset = 0` with a unit, upward-facing normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) + self.offset
    }
}

/// Noise floor for the robust residual scale, meters.
const MIN_SIGMA: f64 = 0.01;

fn fit_once(points: &[&Point3<f64>]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mean: Vector3<f64> = points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let mut normal: Vector3<f64> = eig.eigenvectors.column(idx).into_owned();
    if normal.z < 0.0 {
        normal = -normal;
    }
    let normal = normal.normalize();
    Some(Plane {
        normal,
        offset: -normal.dot(&mean),
    })
}

/// Total-least-squares plane with residual trimming.
///
/// Trimming starts from a level plane at the median height. Each round drops
/// points whose residual exceeds `trim_sigma` robust standard deviations
/// (1.4826 × median absolute residual) and refits.
pub fn fit_plane(points: &[Point3<f64>], trim_sigma: f64, rounds: usize) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let mut inliers: Vec<&Point3<f64>> = points.iter().collect();
    let mut heights: Vec<f64> = points.iter().map(|p| p.z).collect();
    heights.sort_by(f64::total_cmp);
    let mut plane = Plane {
        normal: Vector3::z(),
        offset: -heights[heights.len() / 2],
    };
    for round in 0..=rounds {
        let mut residuals: Vec<f64> = inliers.iter().map(|p| plane.distance(p).abs()).collect();
        residuals.sort_by(f64::total_cmp);
        let sigma = (1.4826 * residuals[residuals.len() / 2]).max(MIN_SIGMA);
        let cut = trim_sigma * sigma;
        let kept: Vec<&Point3<f64>> = inliers.iter().copied().filter(|p| plane.distance(p).abs() <= cut).collect();
        if kept.len() < 3 {
            break;
        }
        let unchanged = kept.len() == inliers.len();
        inliers = kept;
        plane = fit_once(&inliers)?;
        if unchanged && round > 0 {
            break;
        }
    }
    Some(plane)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerticalEstimate {
    /// Radians, relative to the ground normal seen in the first usable frame.
    pub pitch: f64,
    /// Change of the sensor's height above the ground since the last usable frame, meters.
    pub dz: f64,
    /// Not enough ground: values carried over from the previous frame.
    pub degraded: bool,
}

/// Stateful pitch / height-change estimator over a sequence of frames.
#[derive(Debug, Clone)]
pub struct VerticalEstimator {
    pub cfg: VerticalConfig,
    reference_angle: Option<f64>,
    prev_height: Option<f64>,
    last: VerticalEstimate,
}

impl VerticalEstimator {
    pub fn new(cfg: VerticalConfig) -> Self {
        Self {
            cfg,
            reference_angle: None,
            prev_height: None,
            last: VerticalEstimate::default(),
        }
    }

    fn region_plane(&self, ground: &[Point3<f64>], region: &GroundRegion) -> Option<Plane> {
        let pts: Vec<Point3<f64>> = ground.iter().filter(|p| region.contains(p)).copied().collect();
        if pts.len() < self.cfg.min_points {
            return None;
        }
        fit_plane(&pts, self.cfg.trim_sigma, self.cfg.trim_rounds)
    }

    /// Consumes one frame's ground points (sensor frame).
    pub fn estimate(&mut self, ground: &[Point3<f64>]) -> VerticalEstimate {
        let front = self.region_plane(ground, &self.cfg.front);
        let rear = self.region_plane(ground, &self.cfg.rear);
        let (Some(front), Some(rear)) = (front, rear) else {
            self.last.degraded = true;
            return self.last;
        };
        let normal = (front.normal + rear.normal).normalize();
        let height = 0.5 * (front.offset + rear.offset);
        let angle = normal.x.atan2(normal.z);
        let reference = *self.reference_angle.get_or_insert(angle);
        // A sensor pitched by +θ (about y) sees the ground normal tilted by -θ.
        let pitch = reference - angle;
        let dz = self.prev_height.map_or(0.0, |h| height - h);
        self.prev_height = Some(height);
        self.last = VerticalEstimate {
            pitch,
            dz,
            degraded: false,
        };
        self.last
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Flat world ground at `-height`, seen by a sensor pitched by `pitch` about y.
    fn ground(pitch: f64, height: f64, outliers: f64, seed: u64) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), pitch).inverse();
        let mut pts = Vec::new();
        for _ in 0..800 {
            let x: f64 = rng.gen_range(-14.0..14.0);
            let y: f64 = rng.gen_range(-3.0..3.0);
            let z = if rng.gen::<f64>() < outliers { 5.0 } else { -height };
            pts.push(Point3::from(r * Vector3::new(x, y, z)));
        }
        pts
    }

    #[test]
    fn flat_ground_gives_zero() {
        let mut est = VerticalEstimator::new(VerticalConfig::default());
        est.estimate(&ground(0.0, 1.7, 0.0, 1));
        let out = est.estimate(&ground(0.0, 1.7, 0.0, 2));
        assert!(out.pitch.abs() < 1e-9 && out.dz.abs() < 1e-9 && !out.degraded);
    }

    #[test]
    fn tilt_is_recovered() {
        let mut est = VerticalEstimator::new(VerticalConfig::default());
        est.estimate(&ground(0.0, 1.7, 0.0, 1));
        let out = est.estimate(&ground(2f64.to_radians(), 1.7, 0.0, 2));
        assert!((out.pitch.to_degrees() - 2.0).abs() < 0.05, "{}", out.pitch.to_degrees());
    }

    #[test]
    fn outliers_are_trimmed() {
        let mut est = VerticalEstimator::new(VerticalConfig::default());
        est.estimate(&ground(0.0, 1.7, 0.0, 1));
        let out = est.estimate(&ground(0.0, 1.7, 0.1, 3));
        assert!(out.pitch.to_degrees().abs() < 0.1);
    }

    #[test]
    fn height_change_is_reported() {
        let mut est = VerticalEstimator::new(VerticalConfig::default());
        est.estimate(&ground(0.0, 1.7, 0.0, 1));
        let out = est.estimate(&ground(0.0, 1.9, 0.0, 2));
        assert!((out.dz - 0.2).abs() < 1e-9);
    }

    #[test]
    fn sparse_ground_carries_forward() {
        let mut est = VerticalEstimator::new(VerticalConfig::default());
        est.estimate(&ground(0.0, 1.7, 0.0, 1));
        let tilted = est.estimate(&ground(1f64.to_radians(), 1.7, 0.0, 2));
        let out = est.estimate(&[]);
        assert!(out.degraded);
        assert_eq!(out.pitch, tilted.pitch);
    }
}
