//! Per-landmark constant-turn-rate Kalman tracking and motion-state recognition.
//!
//! State is `[x, ẋ, y, ẏ]` in the world frame. The velocity block rotates at the
//! ego turn rate `ω = Δθ / τ`.

use std::collections::HashMap;

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Point2, SymmetricEigen, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::semantic::{self, ClassId};

/// Below this turn rate (rad/s) the transition matrix uses its series form.
pub const SMALL_OMEGA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackState {
    pub x: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl TrackState {
    pub fn position(&self) -> Point2<f64> {
        Point2::new(self.x[0], self.x[2])
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.x[1], self.x[3])
    }

    /// Symmetric within 1e-9 and no eigenvalue below -1e-9.
    pub fn covariance_is_valid(&self) -> bool {
        let p = &self.covariance;
        if (p - p.transpose()).amax() > 1e-9 {
            return false;
        }
        SymmetricEigen::new(*p).eigenvalues.iter().all(|e| *e >= -1e-9)
    }
}

/// `sin(ωτ)/ω` and `(1 - cos(ωτ))/ω`, using their Taylor series near ω = 0.
fn turn_terms(omega: f64, tau: f64) -> (f64, f64) {
    if omega.abs() < SMALL_OMEGA {
        series_turn_terms(omega, tau)
    } else {
        let wt = omega * tau;
        (wt.sin() / omega, (1.0 - wt.cos()) / omega)
    }
}

fn series_turn_terms(omega: f64, tau: f64) -> (f64, f64) {
    let x = omega * tau;
    let x2 = x * x;
    let sinc = tau * (1.0 - x2 / 6.0 * (1.0 - x2 / 20.0));
    let cosc = omega * tau * tau * (0.5 - x2 / 24.0 * (1.0 - x2 / 30.0));
    (sinc, cosc)
}

fn assemble_transition(omega: f64, tau: f64, sinc: f64, cosc: f64) -> Matrix4<f64> {
    let (s, c) = (omega * tau).sin_cos();
    #[rustfmt::skip]
    let f = Matrix4::new(
        1.0, sinc, 0.0, -cosc,
        0.0, c,    0.0, -s,
        0.0, cosc, 1.0, sinc,
        0.0, s,    0.0, c,
    );
    f
}

/// Constant-turn-rate transition matrix.
pub fn transition_matrix(omega: f64, tau: f64) -> Matrix4<f64> {
    let (sinc, cosc) = turn_terms(omega, tau);
    assemble_transition(omega, tau, sinc, cosc)
}

/// Transition matrix evaluated with the closed-form quotients, no small-ω switch.
pub fn transition_matrix_exact(omega: f64, tau: f64) -> Matrix4<f64> {
    let wt = omega * tau;
    assemble_transition(omega, tau, wt.sin() / omega, (1.0 - wt.cos()) / omega)
}

/// Transition matrix evaluated with the small-ω series, whatever the value of ω.
pub fn transition_matrix_series(omega: f64, tau: f64) -> Matrix4<f64> {
    let (sinc, cosc) = series_turn_terms(omega, tau);
    assemble_transition(omega, tau, sinc, cosc)
}

/// Maps the acceleration noise `[w_x, w_y]` into the state.
pub fn noise_matrix(tau: f64) -> Matrix4x2<f64> {
    let h = 0.5 * tau * tau;
    #[rustfmt::skip]
    let g = Matrix4x2::new(
        h,   0.0,
        tau, 0.0,
        0.0, h,
        0.0, tau,
    );
    g
}

pub fn measurement_matrix() -> nalgebra::Matrix2x4<f64> {
    nalgebra::Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0)
}

fn symmetrize(p: &Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

/// Kalman prediction `x ← F x`, `P ← F P Fᵀ + Γ Q Γᵀ` with `Q = σ² I`.
pub fn predict(state: &TrackState, omega: f64, tau: f64, process_sigma: f64) -> Result<TrackState> {
    if !(tau > 0.0) {
        return Err(Error::Precondition(format!("sampling period must be positive, got {tau}")));
    }
    let f = transition_matrix(omega, tau);
    let g = noise_matrix(tau);
    let q = process_sigma * process_sigma;
    Ok(TrackState {
        x: f * state.x,
        covariance: symmetrize(&(f * state.covariance * f.transpose() + g * g.transpose() * q)),
    })
}

/// Kalman update with a world-frame position measurement; `None` for non-finite input.
pub fn update(state: &TrackState, z: &Vector2<f64>, measurement_sigma: f64) -> Option<TrackState> {
    if !(z.x.is_finite() && z.y.is_finite()) {
        return None;
    }
    let h = measurement_matrix();
    let r = Matrix2::identity() * (measurement_sigma * measurement_sigma);
    let p = &state.covariance;
    let s = h * p * h.transpose() + r;
    let s_inv = s.try_inverse()?;
    let k = p * h.transpose() * s_inv;
    let innovation = z - h * state.x;
    let ikh = Matrix4::identity() - k * h;
    // Joseph form keeps P positive semidefinite.
    let covariance = ikh * p * ikh.transpose() + k * r * k.transpose();
    Some(TrackState {
        x: state.x + k * innovation,
        covariance: symmetrize(&covariance),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionVerdict {
    Unknown,
    Dynamic,
    SemiStatic,
}

impl MotionVerdict {
    pub fn name(self) -> &'static str {
        match self {
            MotionVerdict::Unknown => "unknown",
            MotionVerdict::Dynamic => "dynamic",
            MotionVerdict::SemiStatic => "semi-static",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub class_id: ClassId,
    pub state: TrackState,
    /// Frames since the track was spawned.
    pub age: usize,
    /// Consecutive frames without an associated landmark.
    pub misses: usize,
    /// Successful associations so far.
    pub associations: usize,
    pub verdict: MotionVerdict,
    pub last_centre_world: Point2<f64>,
}

/// Per-class upper bounds on velocity magnitude and centre displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionThresholds {
    pub v_max: f64,
    pub d_max: f64,
}

/// Semi-static iff both discrepancies stay strictly below their bounds.
pub fn classify_motion(
    track: &Track,
    previous_centre: &Point2<f64>,
    new_centre: &Point2<f64>,
    thresholds: &MotionThresholds,
) -> MotionVerdict {
    let v_diff = track.state.velocity().norm();
    let d_diff = (new_centre - previous_centre).norm();
    if v_diff < thresholds.v_max && d_diff < thresholds.d_max {
        MotionVerdict::SemiStatic
    } else {
        MotionVerdict::Dynamic
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingConfig {
    pub gate_m: f64,
    pub max_misses: usize,
    pub vehicle: MotionThresholds,
    pub pedestrian: MotionThresholds,
    pub process_sigma_vehicle: f64,
    pub process_sigma_pedestrian: f64,
    pub measurement_sigma: f64,
    /// Diagonal of the initial covariance `[x, ẋ, y, ẏ]`.
    pub initial_variance: [f64; 4],
    /// Associations after which a verdict is considered settled.
    pub stable_after: usize,
    pub threshold_overrides: HashMap<ClassId, MotionThresholds>,
    pub process_sigma_overrides: HashMap<ClassId, f64>,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            gate_m: 3.0,
            max_misses: 3,
            vehicle: MotionThresholds { v_max: 0.8, d_max: 0.3 },
            pedestrian: MotionThresholds { v_max: 0.4, d_max: 0.2 },
            process_sigma_vehicle: 0.5,
            process_sigma_pedestrian: 0.3,
            measurement_sigma: 0.15,
            initial_variance: [1.0, 25.0, 1.0, 25.0],
            stable_after: 3,
            threshold_overrides: HashMap::new(),
            process_sigma_overrides: HashMap::new(),
        }
    }
}

impl TrackingConfig {
    pub fn thresholds(&self, class_id: ClassId) -> MotionThresholds {
        let class_id = semantic::canonical(class_id);
        self.threshold_overrides.get(&class_id).copied().unwrap_or(if semantic::is_vehicle(class_id) {
            self.vehicle
        } else {
            self.pedestrian
        })
    }

    pub fn process_sigma(&self, class_id: ClassId) -> f64 {
        let class_id = semantic::canonical(class_id);
        self.process_sigma_overrides.get(&class_id).copied().unwrap_or(if semantic::is_vehicle(class_id) {
            self.process_sigma_vehicle
        } else {
            self.process_sigma_pedestrian
        })
    }
}

/// A landmark centre in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub centre: Point2<f64>,
    pub class_id: ClassId,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, observation index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_observations: Vec<usize>,
}

fn nearest_same_class(from: &Point2<f64>, class_id: ClassId, to: &[(Point2<f64>, ClassId)]) -> Option<(usize, f64)> {
    to.iter()
        .enumerate()
        .filter(|(_, (_, c))| *c == class_id)
        .map(|(i, (p, _))| (i, (p - from).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

/// Mutual nearest neighbours within the same class, gated at `gate_m`.
pub fn associate(tracks: &[(Point2<f64>, ClassId)], observations: &[(Point2<f64>, ClassId)], gate_m: f64) -> Association {
    let mut out = Association::default();
    let mut obs_taken = vec![false; observations.len()];
    for (i, (tp, tc)) in tracks.iter().enumerate() {
        let matched = nearest_same_class(tp, *tc, observations).and_then(|(j, d)| {
            let (op, oc) = observations[j];
            let back = nearest_same_class(&op, oc, tracks)?;
            (back.0 == i && d <= gate_m).then_some(j)
        });
        match matched {
            Some(j) => {
                out.matches.push((i, j));
                obs_taken[j] = true;
            }
            None => out.unmatched_tracks.push(i),
        }
    }
    out.unmatched_observations = (0..observations.len()).filter(|j| !obs_taken[*j]).collect();
    out
}

/// Result of tracking one observation in the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedObservation {
    pub track_id: u64,
    pub verdict: MotionVerdict,
    pub associations: usize,
    /// Verdict backed by at least `stable_after` associations.
    pub stable: bool,
}

/// Bank of independent per-landmark filters.
#[derive(Debug, Clone)]
pub struct MultiTracker {
    pub cfg: TrackingConfig,
    pub tracks: Vec<Track>,
    next_id: u64,
}

impl MultiTracker {
    pub fn new(cfg: TrackingConfig) -> Self {
        Self {
            cfg,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    /// Predicts every track, associates the observations, updates and classifies.
    /// Returns one entry per observation, in input order.
    pub fn step(&mut self, observations: &[Observation], omega: f64, tau: f64) -> Result<Vec<TrackedObservation>> {
        for t in &mut self.tracks {
            let sigma = self.cfg.process_sigma(t.class_id);
            t.state = predict(&t.state, omega, tau, sigma)?;
            t.age += 1;
        }
        let track_keys: Vec<_> = self.tracks.iter().map(|t| (t.state.position(), t.class_id)).collect();
        let obs_keys: Vec<_> = observations.iter().map(|o| (o.centre, o.class_id)).collect();
        let assoc = associate(&track_keys, &obs_keys, self.cfg.gate_m);

        let mut results: Vec<Option<TrackedObservation>> = vec![None; observations.len()];
        let mut missed = assoc.unmatched_tracks.clone();
        for &(ti, oi) in &assoc.matches {
            let obs = &observations[oi];
            let track = &mut self.tracks[ti];
            match update(&track.state, &obs.centre.coords, self.cfg.measurement_sigma) {
                Some(state) => {
                    track.state = state;
                    let previous = track.last_centre_world;
                    track.verdict = classify_motion(track, &previous, &obs.centre, &self.cfg.thresholds(track.class_id));
                    track.last_centre_world = obs.centre;
                    track.associations += 1;
                    track.misses = 0;
                    results[oi] = Some(TrackedObservation {
                        track_id: track.track_id,
                        verdict: track.verdict,
                        associations: track.associations,
                        stable: track.associations >= self.cfg.stable_after,
                    });
                }
                None => missed.push(ti),
            }
        }
        for ti in missed {
            self.tracks[ti].misses += 1;
        }

        for (oi, slot) in results.iter_mut().enumerate() {
            if slot.is_some() {
                continue;
            }
            let obs = &observations[oi];
            let v = self.cfg.initial_variance;
            let track = Track {
                track_id: self.next_id,
                class_id: obs.class_id,
                state: TrackState {
                    x: Vector4::new(obs.centre.x, 0.0, obs.centre.y, 0.0),
                    covariance: Matrix4::from_diagonal(&Vector4::new(v[0], v[1], v[2], v[3])),
                },
                age: 0,
                misses: 0,
                associations: 0,
                verdict: MotionVerdict::Unknown,
                last_centre_world: obs.centre,
            };
            self.next_id += 1;
            *slot = Some(TrackedObservation {
                track_id: track.track_id,
                verdict: MotionVerdict::Unknown,
                associations: 0,
                stable: false,
            });
            self.tracks.push(track);
        }
        let max_misses = self.cfg.max_misses;
        self.tracks.retain(|t| t.misses < max_misses);
        Ok(results.into_iter().map(|r| r.expect("every observation is tracked")).collect())
    }

    /// Applies a planar rigid correction to every track (after loop closure).
    pub fn apply_correction(&mut self, rotation: f64, translation: Vector2<f64>) {
        let (s, c) = rotation.sin_cos();
        let rot = Matrix2::new(c, -s, s, c);
        let mut block = Matrix4::zeros();
        block.fixed_view_mut::<1, 1>(0, 0).fill(c);
        block.fixed_view_mut::<1, 1>(0, 2).fill(-s);
        block.fixed_view_mut::<1, 1>(2, 0).fill(s);
        block.fixed_view_mut::<1, 1>(2, 2).fill(c);
        block.fixed_view_mut::<1, 1>(1, 1).fill(c);
        block.fixed_view_mut::<1, 1>(1, 3).fill(-s);
        block.fixed_view_mut::<1, 1>(3, 1).fill(s);
        block.fixed_view_mut::<1, 1>(3, 3).fill(c);
        for t in &mut self.tracks {
            let mut x = block * t.state.x;
            x[0] += translation.x;
            x[2] += translation.y;
            t.state.x = x;
            t.state.covariance = symmetrize(&(block * t.state.covariance * block.transpose()));
            t.last_centre_world = Point2::from(rot * t.last_centre_world.coords + translation);
        }
    }
}
