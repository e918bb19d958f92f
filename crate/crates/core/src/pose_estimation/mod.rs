//! Planar pose estimation from landmark convex-hull overlap.
//!
//! Landmarks of two frames are paired by centre proximity and class, each pair
//! contributes the layer whose two hulls look most alike, and the motion that
//! maximises the summed hull overlap is searched with a particle swarm.

mod pso;
mod submap;
mod vertical;

pub use pso::{solve_pso, PsoConfig, PsoOutcome, MIN_FEATURES};
pub use submap::{estimate_precise_horizontal, LocalSubmap, PreciseOutcome, SubmapConfig, SubmapKey, SubmapLandmark};
pub use vertical::{fit_plane, GroundRegion, Plane, VerticalConfig, VerticalEstimate, VerticalEstimator};

pub use crate::geometry::PoseDelta2D;

use crate::geometry::{
    convex_hull, hull_similarity, split_layers, Clipper, Layer, LayeredPair, Polygon2D,
};
use crate::segmentation::Landmark;
use crate::semantic::ClassId;

/// Two landmarks from consecutive frames that pass both pairing criteria.
#[derive(Debug, Clone, Copy)]
pub struct LandmarkPair<'a> {
    pub prev: &'a Landmark,
    pub curr: &'a Landmark,
    /// Horizontal centre distance after mapping `curr` into the previous frame.
    pub centre_distance: f64,
}

/// Pairs every previous landmark with its nearest current landmark.
///
/// `curr_to_prev` maps current-frame coordinates into the previous frame
/// (typically the motion prior). A candidate survives when its centre distance
/// is at most the mean of all candidates' nearest distances and both
/// landmarks share a class.
pub fn pair_landmarks<'a>(
    prev: &'a [Landmark],
    curr: &'a [Landmark],
    curr_to_prev: &PoseDelta2D,
) -> Vec<LandmarkPair<'a>> {
    pair_landmark_refs(
        &prev.iter().collect::<Vec<_>>(),
        &curr.iter().collect::<Vec<_>>(),
        curr_to_prev,
    )
}

pub fn pair_landmark_refs<'a>(
    prev: &[&'a Landmark],
    curr: &[&'a Landmark],
    curr_to_prev: &PoseDelta2D,
) -> Vec<LandmarkPair<'a>> {
    if prev.is_empty() || curr.is_empty() {
        return Vec::new();
    }
    let moved: Vec<_> = curr.iter().map(|l| curr_to_prev.apply(&l.centre.xy())).collect();
    let candidates: Vec<(usize, f64)> = prev
        .iter()
        .map(|p| {
            let c = p.centre.xy();
            moved
                .iter()
                .enumerate()
                .map(|(j, m)| (j, (m - c).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
        })
        .collect();
    let mean = candidates.iter().map(|c| c.1).sum::<f64>() / candidates.len() as f64;
    prev.iter()
        .zip(&candidates)
        .filter(|(p, (j, d))| *d <= mean && p.class_id == curr[*j].class_id)
        .map(|(p, &(j, d))| LandmarkPair {
            prev: p,
            curr: curr[j],
            centre_distance: d,
        })
        .collect()
}

/// The registration primitive of one landmark pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHullFeature {
    pub prev_hull: Polygon2D,
    pub curr_hull: Polygon2D,
    pub layer: Layer,
    pub similarity: f64,
    pub class_id: ClassId,
}

fn layer_hulls(pair: &LayeredPair, layer: Layer) -> Option<(Polygon2D, Polygon2D)> {
    if !pair.is_eligible(layer) {
        return None;
    }
    let prev = convex_hull(pair.prev.get(layer));
    let curr = convex_hull(pair.curr.get(layer));
    (!prev.is_degenerate() && !curr.is_degenerate()).then_some((prev, curr))
}

/// Picks the layer whose two hulls are more similar (ties go to the upper layer).
/// Returns `None` when neither layer yields two non-degenerate hulls.
pub fn select_feature_layer(pair: &LandmarkPair) -> Option<ConvexHullFeature> {
    let layered = split_layers(pair.prev, pair.curr);
    let mut best: Option<ConvexHullFeature> = None;
    for layer in [Layer::Upper, Layer::Lower] {
        if let Some((prev_hull, curr_hull)) = layer_hulls(&layered, layer) {
            let similarity = hull_similarity(&prev_hull, &curr_hull);
            if best.as_ref().map_or(true, |b| similarity > b.similarity) {
                best = Some(ConvexHullFeature {
                    prev_hull,
                    curr_hull,
                    layer,
                    similarity,
                    class_id: pair.prev.class_id,
                });
            }
        }
    }
    best
}

pub fn build_features(pairs: &[LandmarkPair]) -> Vec<ConvexHullFeature> {
    pairs.iter().filter_map(select_feature_layer).collect()
}

/// Total overlap `Σ area((curr_hull ⊗ t) ∩ prev_hull)`, square meters.
pub fn overlap_objective(t: &PoseDelta2D, features: &[ConvexHullFeature]) -> f64 {
    overlap_objective_with(&mut Clipper::new(), t, features)
}

pub(crate) fn overlap_objective_with(clipper: &mut Clipper, t: &PoseDelta2D, features: &[ConvexHullFeature]) -> f64 {
    features
        .iter()
        .map(|f| clipper.transformed_overlap(&f.curr_hull, t, &f.prev_hull))
        .sum()
}

/// Sum of previous-frame hull areas: the objective's upper bound.
pub fn total_prev_area(features: &[ConvexHullFeature]) -> f64 {
    features.iter().map(|f| f.prev_hull.area()).sum()
}

/// Which landmarks feed the scan-to-scan registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Pure-static landmarks only.
    StaticOnly,
    /// Pure-static and unknown-motion landmarks.
    AllLandmarks,
}

impl InputMode {
    pub fn name(self) -> &'static str {
        match self {
            InputMode::StaticOnly => "static",
            InputMode::AllLandmarks => "all",
        }
    }
}

/// Static-only registration needs at least `n_min` static landmarks and no
/// fewer static than unknown-motion landmarks.
pub fn select_input_mode(static_count: usize, unknown_count: usize, n_min: usize) -> InputMode {
    if static_count >= n_min.max(unknown_count) {
        InputMode::StaticOnly
    } else {
        InputMode::AllLandmarks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreliminaryConfig {
    pub n_min: usize,
    /// Overrides the count rule when set.
    pub force_mode: Option<InputMode>,
}

impl Default for PreliminaryConfig {
    fn default() -> Self {
        Self {
            n_min: 10,
            force_mode: None,
        }
    }
}

/// A frame's landmarks split by motion group.
#[derive(Debug, Clone, Copy)]
pub struct FrameLandmarks<'a> {
    pub pure_static: &'a [Landmark],
    pub unknown: &'a [Landmark],
}

impl<'a> FrameLandmarks<'a> {
    fn select(&self, mode: InputMode) -> Vec<&'a Landmark> {
        match mode {
            InputMode::StaticOnly => self.pure_static.iter().collect(),
            InputMode::AllLandmarks => self.pure_static.iter().chain(self.unknown).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreliminaryOutcome {
    pub pose: PoseDelta2D,
    pub mode: InputMode,
    pub pairs: usize,
    pub features: usize,
    pub objective: f64,
    /// No usable registration: `pose` is the prior.
    pub degraded: bool,
}

/// Scan-to-scan planar motion of frame k relative to frame k-1.
pub fn estimate_preliminary(
    prev: FrameLandmarks,
    curr: FrameLandmarks,
    prior: &PoseDelta2D,
    cfg: &PreliminaryConfig,
    pso: &PsoConfig,
) -> PreliminaryOutcome {
    let mode = cfg
        .force_mode
        .unwrap_or_else(|| select_input_mode(curr.pure_static.len(), curr.unknown.len(), cfg.n_min));
    let prev_sel = prev.select(mode);
    let curr_sel = curr.select(mode);
    let pairs = pair_landmark_refs(&prev_sel, &curr_sel, prior);
    let features = build_features(&pairs);
    let outcome = solve_pso(&features, prior, pso);
    PreliminaryOutcome {
        pose: outcome.pose,
        mode,
        pairs: pairs.len(),
        features: features.len(),
        objective: outcome.objective,
        degraded: outcome.low_confidence,
    }
}
