//! Sliding-window local submap and scan-to-submap refinement.

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_features, pair_landmark_refs, solve_pso, PsoConfig, MIN_FEATURES};
use crate::dataio::PoseSE3;
use crate::geometry::PoseDelta2D;
use crate::segmentation::{centroid, Landmark};
use crate::semantic::ClassId;

#[derive(Debug, Clone, PartialEq)]
pub struct SubmapConfig {
    /// Frames a landmark survives without being re-observed.
    pub window: usize,
    /// Reservoir size of accumulated points per landmark.
    pub max_points: usize,
    /// Horizontal centre distance for merging a static observation into an entry.
    pub merge_gate_m: f64,
    /// Search half-widths relative to the scan-to-scan swarm.
    pub bound_scale: f64,
}

impl Default for SubmapConfig {
    fn default() -> Self {
        Self {
            window: 10,
            max_points: 2000,
            merge_gate_m: 1.0,
            bound_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubmapKey {
    Static(u64),
    Track(u64),
}

#[derive(Debug, Clone)]
pub struct SubmapLandmark {
    pub key: SubmapKey,
    pub class_id: ClassId,
    pub points_world: Vec<Point3<f64>>,
    /// Points offered to the reservoir so far.
    pub seen: u64,
    pub last_seen: usize,
    pub centre_world: Point3<f64>,
}

impl SubmapLandmark {
    fn absorb(&mut self, points: impl Iterator<Item = Point3<f64>>, cap: usize, rng: &mut ChaCha8Rng) {
        for p in points {
            self.seen += 1;
            if self.points_world.len() < cap {
                self.points_world.push(p);
            } else {
                let j = rng.gen_range(0..self.seen);
                if (j as usize) < cap {
                    self.points_world[j as usize] = p;
                }
            }
        }
        self.centre_world = centroid(&self.points_world);
    }
}

/// World-frame pure-static and semi-static landmarks of the last `window` frames.
#[derive(Debug, Clone)]
pub struct LocalSubmap {
    pub cfg: SubmapConfig,
    pub entries: Vec<SubmapLandmark>,
    next_static: u64,
    rng: ChaCha8Rng,
}

impl LocalSubmap {
    pub fn new(cfg: SubmapConfig, seed: u64) -> Self {
        Self {
            cfg,
            entries: Vec::new(),
            next_static: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push_points(&mut self, idx: usize, frame_index: usize, landmark: &Landmark, world: &PoseSE3) {
        let cap = self.cfg.max_points;
        let entry = &mut self.entries[idx];
        entry.last_seen = frame_index;
        entry.absorb(landmark.points.iter().map(|p| world.transform_point(p)), cap, &mut self.rng);
    }

    fn new_entry(&mut self, key: SubmapKey, frame_index: usize, landmark: &Landmark, world: &PoseSE3) {
        self.entries.push(SubmapLandmark {
            key,
            class_id: landmark.class_id,
            points_world: Vec::new(),
            seen: 0,
            last_seen: frame_index,
            centre_world: Point3::origin(),
        });
        let idx = self.entries.len() - 1;
        self.push_points(idx, frame_index, landmark, world);
    }

    /// Adds a pure-static observation, merging it into the nearest same-class entry within the gate.
    pub fn insert_static(&mut self, frame_index: usize, landmark: &Landmark, world: &PoseSE3) {
        let c = world.transform_point(&landmark.centre).xy();
        let gate = self.cfg.merge_gate_m;
        let nearest = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e.key, SubmapKey::Static(_)) && e.class_id == landmark.class_id)
            .map(|(i, e)| (i, (e.centre_world.xy() - c).norm()))
            .filter(|(_, d)| *d <= gate)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((idx, _)) => self.push_points(idx, frame_index, landmark, world),
            None => {
                let key = SubmapKey::Static(self.next_static);
                self.next_static += 1;
                self.new_entry(key, frame_index, landmark, world);
            }
        }
    }

    /// Adds a semi-static observation keyed by its track.
    pub fn insert_tracked(&mut self, frame_index: usize, track_id: u64, landmark: &Landmark, world: &PoseSE3) {
        let key = SubmapKey::Track(track_id);
        match self.entries.iter().position(|e| e.key == key) {
            Some(idx) => self.push_points(idx, frame_index, landmark, world),
            None => self.new_entry(key, frame_index, landmark, world),
        }
    }

    /// Drops a track's landmark, e.g. once it has been recognised as moving.
    pub fn remove_track(&mut self, track_id: u64) {
        self.entries.retain(|e| e.key != SubmapKey::Track(track_id));
    }

    /// Forgets entries not observed within the window ending at `frame_index`.
    pub fn evict(&mut self, frame_index: usize) {
        let window = self.cfg.window;
        self.entries.retain(|e| e.last_seen + window > frame_index);
    }

    /// Entries expressed in the frame whose world pose is `reference`.
    pub fn landmarks_in(&self, reference: &PoseSE3) -> Vec<Landmark> {
        let inv = reference.inverse();
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| Landmark::new(i, e.class_id, e.points_world.iter().map(|p| inv.transform_point(p)).collect()))
            .collect()
    }

    /// Re-expresses every stored point after a trajectory correction.
    pub fn apply_correction(&mut self, correction: &PoseSE3) {
        for e in &mut self.entries {
            for p in &mut e.points_world {
                *p = correction.transform_point(p);
            }
            e.centre_world = centroid(&e.points_world);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreciseOutcome {
    pub pose: PoseDelta2D,
    pub pairs: usize,
    pub features: usize,
    pub objective: f64,
    /// Too few pairs against the submap: `pose` is the preliminary estimate.
    pub flagged: bool,
}

/// Refines the preliminary motion by registering the current pure-static and
/// semi-static landmarks against the submap.
///
/// `reference` is the world pose of frame k-1; the submap is expressed in that
/// frame so the result stays a frame-to-frame motion.
pub fn estimate_precise_horizontal(
    curr: &[&Landmark],
    submap: &LocalSubmap,
    reference: &PoseSE3,
    prelim: &PoseDelta2D,
    pso: &PsoConfig,
) -> PreciseOutcome {
    let fallback = |pairs, features| PreciseOutcome {
        pose: *prelim,
        pairs,
        features,
        objective: 0.0,
        flagged: true,
    };
    if submap.is_empty() || curr.is_empty() {
        return fallback(0, 0);
    }
    let local = submap.landmarks_in(reference);
    let local_refs: Vec<&Landmark> = local.iter().collect();
    let pairs = pair_landmark_refs(&local_refs, curr, prelim);
    if pairs.len() < MIN_FEATURES {
        return fallback(pairs.len(), 0);
    }
    let features = build_features(&pairs);
    let outcome = solve_pso(&features, prelim, &pso.scaled_bounds(submap.cfg.bound_scale));
    if outcome.low_confidence {
        return fallback(pairs.len(), features.len());
    }
    PreciseOutcome {
        pose: outcome.pose,
        pairs: pairs.len(),
        features: features.len(),
        objective: outcome.objective,
        flagged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::{BUILDING, CAR};
    use nalgebra::Vector3;

    fn blob(class: ClassId, x: f64, y: f64, n: usize) -> Landmark {
        Landmark::new(0, class, (0..n).map(|i| Point3::new(x + (i % 5) as f64 * 0.2, y + (i / 5) as f64 * 0.2, 0.0)).collect())
    }

    #[test]
    fn static_observations_merge_within_gate() {
        let mut map = LocalSubmap::new(SubmapConfig::default(), 1);
        map.insert_static(0, &blob(BUILDING, 0.0, 0.0, 25), &PoseSE3::identity());
        map.insert_static(1, &blob(BUILDING, 0.1, 0.0, 25), &PoseSE3::identity());
        map.insert_static(1, &blob(BUILDING, 20.0, 0.0, 25), &PoseSE3::identity());
        assert_eq!(map.len(), 2);
        assert_eq!(map.entries[0].points_world.len(), 50);
    }

    #[test]
    fn reservoir_caps_points() {
        let cfg = SubmapConfig {
            max_points: 30,
            ..SubmapConfig::default()
        };
        let mut map = LocalSubmap::new(cfg, 1);
        for f in 0..5 {
            map.insert_tracked(f, 7, &blob(CAR, 0.0, 0.0, 25), &PoseSE3::identity());
        }
        assert_eq!(map.len(), 1);
        assert_eq!(map.entries[0].points_world.len(), 30);
        assert_eq!(map.entries[0].seen, 125);
        map.remove_track(7);
        assert!(map.is_empty());
    }

    #[test]
    fn eviction_after_window() {
        let mut map = LocalSubmap::new(SubmapConfig::default(), 1);
        map.insert_static(0, &blob(BUILDING, 0.0, 0.0, 25), &PoseSE3::identity());
        map.evict(9);
        assert_eq!(map.len(), 1);
        map.evict(10);
        assert!(map.is_empty());
    }

    #[test]
    fn landmarks_round_trip_through_world() {
        let mut map = LocalSubmap::new(SubmapConfig::default(), 1);
        let pose = PoseSE3::from_yaw_pitch(0.4, 0.0, Vector3::new(5.0, -3.0, 0.2));
        let lm = blob(BUILDING, 2.0, 1.0, 25);
        map.insert_static(0, &lm, &pose);
        let back = map.landmarks_in(&pose);
        assert!((back[0].centre - lm.centre).norm() < 1e-9);
    }

    #[test]
    fn empty_submap_returns_prelim_flagged() {
        let map = LocalSubmap::new(SubmapConfig::default(), 1);
        let prelim = PoseDelta2D::new(1.0, 0.0, 0.0);
        let lm = blob(BUILDING, 0.0, 0.0, 25);
        let out = estimate_precise_horizontal(&[&lm], &map, &PoseSE3::identity(), &prelim, &PsoConfig::default());
        assert!(out.flagged);
        assert_eq!(out.pose, prelim);
    }
}
