//! Place recognition over pure-static landmarks and pose-graph correction.
//!
//! Keyframes are described by per-class radial histograms of landmark centres.
//! Candidates returned by a cosine query are verified by semantic pairing and
//! hull-overlap registration before they become loop edges.

mod graph;

pub use graph::{correct, interpolate_corrections, CorrectionOutcome, GraphEdge, GraphNode, PoseGraph};

use nalgebra::{Point2, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::PoseDelta2D;
use crate::pose_estimation::{build_features, overlap_objective, pair_landmark_refs, solve_pso, total_prev_area, PsoConfig};
use crate::segmentation::Landmark;
use crate::semantic::{self, STATIC_CLASSES};

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub keyframe_every: usize,
    pub bins: usize,
    pub bin_width_m: f64,
    /// Descriptors with fewer static landmarks are weak and never queried.
    pub min_static: usize,
    pub sim_threshold: f64,
    /// Minimum keyframe-id gap between a query and its candidates.
    pub min_separation: usize,
    pub top_k: usize,
    pub min_pairs: usize,
    pub overlap_ratio: f64,
    /// Verification search half-widths: meters, meters, radians.
    pub verify_bounds: [f64; 3],
    /// Point cap per landmark kept in a keyframe snapshot.
    pub snapshot_points: usize,
    /// Hypotheses tried when aligning snapshots without a pose prior.
    pub alignment_trials: usize,
    /// Keyframes to wait after a correction before the next one.
    pub correction_cooldown: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            keyframe_every: 5,
            bins: 16,
            bin_width_m: 4.0,
            min_static: 5,
            sim_threshold: 0.85,
            min_separation: 50,
            top_k: 3,
            min_pairs: 5,
            overlap_ratio: 0.4,
            verify_bounds: [10.0, 10.0, std::f64::consts::PI],
            snapshot_points: 300,
            alignment_trials: 400,
            correction_cooldown: 10,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keyframe_every == 0 || self.bins == 0 || !(self.bin_width_m > 0.0) {
            return Err(Error::Config("loop.keyframe_every, bins and bin width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sim_threshold) || !(0.0..=1.0).contains(&self.overlap_ratio) {
            return Err(Error::Config("loop thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeDescriptor {
    pub keyframe_id: usize,
    /// `STATIC_CLASSES.len() × bins` counts, class-major.
    pub histograms: Vec<u32>,
    pub weak: bool,
    /// Pure-static landmarks in the keyframe's sensor frame (points capped).
    pub snapshot: Vec<Landmark>,
}

impl KeyframeDescriptor {
    pub fn class_histogram(&self, class_id: semantic::ClassId, bins: usize) -> Option<&[u32]> {
        let k = STATIC_CLASSES.iter().position(|c| *c == semantic::canonical(class_id))?;
        Some(&self.histograms[k * bins..(k + 1) * bins])
    }

    /// Per-class L2-normalised histograms, concatenated.
    fn normalized(&self, bins: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.histograms.len());
        for chunk in self.histograms.chunks(bins) {
            let norm = chunk.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
            out.extend(chunk.iter().map(|c| if norm > 0.0 { *c as f64 / norm } else { 0.0 }));
        }
        out
    }
}

/// Radial histogram of pure-static landmark centres; anything else is skipped.
pub fn make_descriptor(keyframe_id: usize, landmarks: &[Landmark], cfg: &LoopConfig) -> KeyframeDescriptor {
    let bins = cfg.bins;
    let mut histograms = vec![0u32; STATIC_CLASSES.len() * bins];
    let mut snapshot = Vec::new();
    for l in landmarks {
        let class_id = semantic::canonical(l.class_id);
        let Some(k) = STATIC_CLASSES.iter().position(|c| *c == class_id) else {
            continue;
        };
        let range = l.centre.x.hypot(l.centre.y);
        let bin = (range / cfg.bin_width_m).floor();
        if bin < bins as f64 {
            histograms[k * bins + bin as usize] += 1;
        }
        snapshot.push(downsample(l, cfg.snapshot_points));
    }
    KeyframeDescriptor {
        keyframe_id,
        histograms,
        weak: snapshot.len() < cfg.min_static,
        snapshot,
    }
}

fn downsample(l: &Landmark, cap: usize) -> Landmark {
    if l.points.len() <= cap || cap == 0 {
        return l.clone();
    }
    let step = l.points.len() as f64 / cap as f64;
    let points: Vec<Point3<f64>> = (0..cap).map(|i| l.points[(i as f64 * step) as usize]).collect();
    Landmark::new(l.instance_id, l.class_id, points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub keyframe_id: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DescriptorDatabase {
    pub entries: Vec<KeyframeDescriptor>,
    normalized: Vec<Vec<f64>>,
}

impl DescriptorDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, descriptor: KeyframeDescriptor, cfg: &LoopConfig) {
        self.normalized.push(descriptor.normalized(cfg.bins));
        self.entries.push(descriptor);
    }

    pub fn get(&self, keyframe_id: usize) -> Option<&KeyframeDescriptor> {
        self.entries.iter().find(|d| d.keyframe_id == keyframe_id)
    }

    /// Best `top_k` non-weak keyframes at least `min_separation` older than the
    /// query whose cosine similarity reaches `sim_threshold`.
    pub fn query(&self, descriptor: &KeyframeDescriptor, cfg: &LoopConfig) -> Vec<Candidate> {
        if descriptor.weak {
            return Vec::new();
        }
        let q = descriptor.normalized(cfg.bins);
        let q_norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if q_norm == 0.0 {
            return Vec::new();
        }
        let mut out: Vec<Candidate> = self
            .entries
            .iter()
            .zip(&self.normalized)
            .filter(|(d, _)| !d.weak && d.keyframe_id + cfg.min_separation <= descriptor.keyframe_id)
            .filter_map(|(d, v)| {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return None;
                }
                let sim = q.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (q_norm * norm);
                (sim >= cfg.sim_threshold).then_some(Candidate {
                    keyframe_id: d.keyframe_id,
                    similarity: sim,
                })
            })
            .collect();
        out.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.keyframe_id.cmp(&b.keyframe_id)));
        out.truncate(cfg.top_k);
        out
    }
}

/// Least-squares rigid motion mapping `from` points onto `to` points.
pub fn kabsch_2d(from: &[Point2<f64>], to: &[Point2<f64>]) -> Option<PoseDelta2D> {
    if from.len() != to.len() || from.is_empty() {
        return None;
    }
    let n = from.len() as f64;
    let cf = from.iter().map(|p| p.coords).sum::<nalgebra::Vector2<f64>>() / n;
    let ct = to.iter().map(|p| p.coords).sum::<nalgebra::Vector2<f64>>() / n;
    let (mut dot, mut cross) = (0.0, 0.0);
    for (a, b) in from.iter().zip(to) {
        let a = a.coords - cf;
        let b = b.coords - ct;
        dot += a.dot(&b);
        cross += a.x * b.y - a.y * b.x;
    }
    let theta = if dot == 0.0 && cross == 0.0 { 0.0 } else { cross.atan2(dot) };
    let (s, c) = theta.sin_cos();
    let rotated = nalgebra::Vector2::new(c * cf.x - s * cf.y, s * cf.x + c * cf.y);
    let t = ct - rotated;
    Some(PoseDelta2D::new(t.x, t.y, theta))
}

/// Distance within which an aligned centre counts as an inlier, meters.
const ALIGN_INLIER_M: f64 = 1.0;

/// Prior-free alignment of `curr` onto `prev` from sampled two-landmark correspondences.
fn coarse_alignment(prev: &[Landmark], curr: &[Landmark], trials: usize, seed: u64) -> Option<PoseDelta2D> {
    if prev.len() < 2 || curr.len() < 2 {
        return None;
    }
    let pc: Vec<Point2<f64>> = prev.iter().map(|l| l.centre.xy()).collect();
    let cc: Vec<Point2<f64>> = curr.iter().map(|l| l.centre.xy()).collect();
    let inliers = |t: &PoseDelta2D| -> usize {
        cc.iter()
            .zip(curr)
            .filter(|(c, lc)| {
                let m = t.apply(c);
                pc.iter()
                    .zip(prev)
                    .any(|(p, lp)| lp.class_id == lc.class_id && (p - m).norm() <= ALIGN_INLIER_M)
            })
            .count()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, PoseDelta2D)> = None;
    for _ in 0..trials {
        let i = rng.gen_range(0..cc.len());
        let j = rng.gen_range(0..cc.len());
        let span = (cc[i] - cc[j]).norm();
        if i == j || span < 2.0 {
            continue;
        }
        for a in 0..pc.len() {
            if prev[a].class_id != curr[i].class_id {
                continue;
            }
            for b in 0..pc.len() {
                if a == b || prev[b].class_id != curr[j].class_id || ((pc[a] - pc[b]).norm() - span).abs() > 0.5 {
                    continue;
                }
                let Some(t) = kabsch_2d(&[cc[i], cc[j]], &[pc[a], pc[b]]) else {
                    continue;
                };
                let score = inliers(&t);
                if best.as_ref().map_or(true, |(s, _)| score > *s) {
                    best = Some((score, t));
                }
            }
        }
    }
    best.map(|(_, t)| t)
}

/// Relative pose of the current keyframe in the candidate keyframe's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConstraint {
    pub from_keyframe: usize,
    pub to_keyframe: usize,
    pub delta: PoseDelta2D,
    pub dz: f64,
    pub pairs: usize,
    pub overlap_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verification {
    Accepted(LoopConstraint),
    Rejected { pairs: usize, overlap_ratio: f64 },
}

/// Registers the current snapshot against the candidate's with semantic pairing
/// and a wide-bounds swarm; accepted when enough pairs overlap well.
pub fn verify(candidate: &KeyframeDescriptor, current: &KeyframeDescriptor, cfg: &LoopConfig, pso: &PsoConfig) -> Verification {
    let reject = |pairs, overlap_ratio| Verification::Rejected { pairs, overlap_ratio };
    let prev = &candidate.snapshot;
    let curr = &current.snapshot;
    debug_assert!(prev.iter().chain(curr).all(|l| semantic::is_static(l.class_id)));
    let seed = pso.seed ^ ((candidate.keyframe_id as u64) << 32) ^ current.keyframe_id as u64;
    let Some(mut prior) = coarse_alignment(prev, curr, cfg.alignment_trials, seed) else {
        return reject(0, 0.0);
    };
    let prev_refs: Vec<&Landmark> = prev.iter().collect();
    let curr_refs: Vec<&Landmark> = curr.iter().collect();
    for _ in 0..2 {
        let pairs = pair_landmark_refs(&prev_refs, &curr_refs, &prior);
        if pairs.len() < 2 {
            break;
        }
        let from: Vec<Point2<f64>> = pairs.iter().map(|p| p.curr.centre.xy()).collect();
        let to: Vec<Point2<f64>> = pairs.iter().map(|p| p.prev.centre.xy()).collect();
        prior = kabsch_2d(&from, &to).unwrap_or(prior);
    }
    let pairs = pair_landmark_refs(&prev_refs, &curr_refs, &prior);
    if pairs.len() < cfg.min_pairs {
        return reject(pairs.len(), 0.0);
    }
    let features = build_features(&pairs);
    let wide = PsoConfig {
        bounds: cfg.verify_bounds,
        seed,
        ..pso.clone()
    };
    let outcome = solve_pso(&features, &prior, &wide);
    let area = total_prev_area(&features);
    let ratio = if area > 0.0 { outcome.objective / area } else { 0.0 };
    // Pairs only count when the registration actually overlaps their hulls.
    let supported = features
        .iter()
        .filter(|f| overlap_objective(&outcome.pose, std::slice::from_ref(*f)) > 0.0)
        .count();
    if supported < cfg.min_pairs || ratio < cfg.overlap_ratio {
        return reject(supported, ratio);
    }
    let mut dzs: Vec<f64> = pairs.iter().map(|p| p.prev.centre.z - p.curr.centre.z).collect();
    dzs.sort_by(f64::total_cmp);
    Verification::Accepted(LoopConstraint {
        from_keyframe: candidate.keyframe_id,
        to_keyframe: current.keyframe_id,
        delta: outcome.pose,
        dz: dzs[dzs.len() / 2],
        pairs: supported,
        overlap_ratio: ratio,
    })
}
