//! KITTI odometry relative errors.

use crate::dataio::PoseSE3;
use crate::error::{Error, Result};

pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];
pub const START_STEP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeErrors {
    /// Mean translation error over segment length, percent.
    pub t_rel: f64,
    /// Mean rotation error over segment length, degrees per meter.
    pub r_rel: f64,
    pub segments: usize,
}

impl RelativeErrors {
    pub fn r_rel_per_100m(&self) -> f64 {
        self.r_rel * 100.0
    }
}

fn path_distances(poses: &[PoseSE3]) -> Vec<f64> {
    let mut d = Vec::with_capacity(poses.len());
    let mut acc = 0.0;
    for (i, p) in poses.iter().enumerate() {
        if i > 0 {
            acc += (p.translation - poses[i - 1].translation).norm();
        }
        d.push(acc);
    }
    d
}

/// Averages over every start frame (stride 10) and every segment length the
/// relative-pose error between frame `i` and the first frame at least `L`
/// meters further along the ground-truth path.
pub fn kitti_relative_errors(estimated: &[PoseSE3], ground_truth: &[PoseSE3]) -> Result<RelativeErrors> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::Precondition(format!(
            "trajectory lengths differ: {} estimated vs {} ground truth",
            estimated.len(),
            ground_truth.len()
        )));
    }
    let dist = path_distances(ground_truth);
    let total = dist.last().copied().unwrap_or(0.0);
    let (mut t_sum, mut r_sum, mut n) = (0.0, 0.0, 0usize);
    for first in (0..ground_truth.len()).step_by(START_STEP) {
        for &len in &SEGMENT_LENGTHS {
            let target = dist[first] + len;
            let Some(last) = (first..dist.len()).find(|&j| dist[j] > target) else {
                continue;
            };
            let gt = ground_truth[first].inverse().compose(&ground_truth[last]);
            let est = estimated[first].inverse().compose(&estimated[last]);
            let err = est.inverse().compose(&gt);
            t_sum += err.translation.norm() / len;
            r_sum += err.rotation_angle() / len;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientLength(total));
    }
    Ok(RelativeErrors {
        t_rel: 100.0 * t_sum / n as f64,
        r_rel: (r_sum / n as f64).to_degrees(),
        segments: n,
    })
}
