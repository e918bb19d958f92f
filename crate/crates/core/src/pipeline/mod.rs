//! Frame-by-frame odometry, tracking, loop closure and mapping.

mod config;
mod metrics;

pub use config::RunConfig;
pub use metrics::{kitti_relative_errors, RelativeErrors, SEGMENT_LENGTHS, START_STEP};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use nalgebra::{Point2, Point3, Vector2, Vector3};

use crate::dataio::{write_trajectory, DatasetLabels, FrameSource, KittiSequence, LabeledFrame, PoseSE3};
use crate::error::{Error, Result};
use crate::geometry::PoseDelta2D;
use crate::loop_closure::{
    correct, interpolate_corrections, make_descriptor, verify, DescriptorDatabase, GraphEdge, GraphNode, PoseGraph,
    Verification,
};
use crate::mapping::{export_map, SemanticVoxelMap};
use crate::pose_estimation::{
    estimate_precise_horizontal, estimate_preliminary, FrameLandmarks, InputMode, LocalSubmap, VerticalEstimator,
};
use crate::segmentation::{segment_frame, Landmark, SegmentedFrame};
use crate::semantic::ClassId;
use crate::tracking::{MotionVerdict, MultiTracker, Observation};

/// Graph weights for odometry and loop edges: `[x, y, θ, z]`.
const EDGE_INFORMATION: [f64; 4] = [100.0, 100.0, 1000.0, 100.0];

/// One tracked unknown-motion landmark in a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedLandmark {
    pub track_id: u64,
    pub class_id: ClassId,
    pub verdict: MotionVerdict,
    pub associations: usize,
    pub stable: bool,
    pub centre_sensor: Point3<f64>,
    pub centre_world: Point2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub static_landmarks: usize,
    pub unknown_landmarks: usize,
    pub mode: Option<InputMode>,
    pub prelim_pairs: usize,
    pub prelim_objective: f64,
    pub prelim_degraded: bool,
    pub precise_pairs: usize,
    pub precise_objective: f64,
    pub precise_flagged: bool,
    pub vertical_degraded: bool,
    pub semi_static: usize,
    pub dynamic: usize,
    pub unknown: usize,
    pub keyframe: bool,
    pub loop_candidates: usize,
    pub loops_accepted: usize,
    pub corrected: bool,
    pub tracked: Vec<TrackedLandmark>,
}

impl FrameDiagnostics {
    fn new(frame: usize, seg: &SegmentedFrame) -> Self {
        Self {
            frame,
            static_landmarks: seg.static_landmarks.len(),
            unknown_landmarks: seg.unknown_landmarks.len(),
            mode: None,
            prelim_pairs: 0,
            prelim_objective: 0.0,
            prelim_degraded: false,
            precise_pairs: 0,
            precise_objective: 0.0,
            precise_flagged: false,
            vertical_degraded: false,
            semi_static: 0,
            dynamic: 0,
            unknown: 0,
            keyframe: false,
            loop_candidates: 0,
            loops_accepted: 0,
            corrected: false,
            tracked: Vec::new(),
        }
    }

    /// One `key=value` line.
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "frame={} static={} unknown_motion={} mode={} prelim_pairs={} prelim_objective={:.4} prelim_degraded={} \
             precise_pairs={} precise_objective={:.4} precise_flagged={} vertical_degraded={} semi_static={} dynamic={} \
             unverified={} keyframe={} loop_candidates={} loops_accepted={} corrected={}",
            self.frame,
            self.static_landmarks,
            self.unknown_landmarks,
            self.mode.map_or("none", |m| m.name()),
            self.prelim_pairs,
            self.prelim_objective,
            self.prelim_degraded,
            self.precise_pairs,
            self.precise_objective,
            self.precise_flagged,
            self.vertical_degraded,
            self.semi_static,
            self.dynamic,
            self.unknown,
            self.keyframe,
            self.loop_candidates,
            self.loops_accepted,
            self.corrected
        );
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// World pose of every frame; the first frame defines the world.
    pub trajectory: Vec<PoseSE3>,
    pub diagnostics: Vec<FrameDiagnostics>,
    pub loop_edges: usize,
    pub corrections: usize,
    pub map: Option<SemanticVoxelMap>,
    pub errors: Option<RelativeErrors>,
}

impl RunResult {
    /// Frame-to-frame motions `T_{k-1}⁻¹ T_k`.
    pub fn relative_motions(&self) -> Vec<PoseSE3> {
        self.trajectory.windows(2).map(|w| w[0].inverse().compose(&w[1])).collect()
    }
}

fn stage_seed(seed: u64, frame: usize, stage: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((frame as u64) << 8) ^ stage
}

struct Previous {
    static_landmarks: Vec<Landmark>,
    unknown_landmarks: Vec<Landmark>,
}

/// Incremental processor; feed frames in order with [`Pipeline::process`].
pub struct Pipeline {
    cfg: RunConfig,
    prev: Option<Previous>,
    prior: PoseDelta2D,
    yaw: f64,
    translation: Vector3<f64>,
    pub trajectory: Vec<PoseSE3>,
    pub diagnostics: Vec<FrameDiagnostics>,
    tracker: MultiTracker,
    submap: LocalSubmap,
    vertical: VerticalEstimator,
    database: DescriptorDatabase,
    graph: PoseGraph,
    keyframe_frames: Vec<usize>,
    last_correction_keyframe: Option<usize>,
    corrections: usize,
    map: Option<SemanticVoxelMap>,
    map_stale: bool,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let map = if cfg.export_map { Some(SemanticVoxelMap::new(cfg.voxel_size)?) } else { None };
        Ok(Self {
            tracker: MultiTracker::new(cfg.tracking.clone()),
            submap: LocalSubmap::new(cfg.submap.clone(), stage_seed(cfg.seed, 0, 7)),
            vertical: VerticalEstimator::new(cfg.vertical.clone()),
            cfg,
            prev: None,
            prior: PoseDelta2D::identity(),
            yaw: 0.0,
            translation: Vector3::zeros(),
            trajectory: Vec::new(),
            diagnostics: Vec::new(),
            database: DescriptorDatabase::new(),
            graph: PoseGraph::new(),
            keyframe_frames: Vec::new(),
            last_correction_keyframe: None,
            corrections: 0,
            map,
            map_stale: false,
        })
    }

    fn world_observations(seg: &SegmentedFrame, pose: &PoseSE3) -> Vec<Observation> {
        seg.unknown_landmarks
            .iter()
            .map(|l| Observation {
                centre: pose.transform_point(&l.centre).xy(),
                class_id: l.class_id,
            })
            .collect()
    }

    /// Processes the next frame and returns its world pose.
    pub fn process(&mut self, frame: &LabeledFrame) -> Result<PoseSE3> {
        let k = self.trajectory.len();
        let seg = segment_frame(frame, &self.cfg.segmentation)?;
        let ground: Vec<Point3<f64>> = seg.partition.ground.iter().map(|p| p.position).collect();
        let mut diag = FrameDiagnostics::new(k, &seg);
        let tau = frame.period;
        if !(tau > 0.0) {
            return Err(Error::Precondition(format!("frame {k}: non-positive period {tau}")));
        }

        let previous_pose = self.trajectory.last().copied().unwrap_or_else(PoseSE3::identity);
        let vertical = self.vertical.estimate(&ground);
        diag.vertical_degraded = vertical.degraded;

        let mut registration: Vec<(usize, u64)> = Vec::new();
        let (delta, dz, pitch) = match &self.prev {
            None => (PoseDelta2D::identity(), 0.0, vertical.pitch),
            Some(prev) => {
                let pso = self.cfg.pso.with_seed(stage_seed(self.cfg.seed, k, 1));
                let prelim = estimate_preliminary(
                    FrameLandmarks {
                        pure_static: &prev.static_landmarks,
                        unknown: &prev.unknown_landmarks,
                    },
                    FrameLandmarks {
                        pure_static: &seg.static_landmarks,
                        unknown: &seg.unknown_landmarks,
                    },
                    &self.prior,
                    &self.cfg.prelim,
                    &pso,
                );
                diag.mode = Some(prelim.mode);
                diag.prelim_pairs = prelim.pairs;
                diag.prelim_objective = prelim.objective;
                diag.prelim_degraded = prelim.degraded;
                let mut delta = prelim.pose;
                if self.cfg.precise {
                    let prelim_pose = self.accumulate(&previous_pose, &prelim.pose, 0.0, previous_pose_pitch(&previous_pose));
                    let omega = prelim.pose.dtheta / tau;
                    registration = self.track(&seg, &prelim_pose, omega, tau, &mut diag)?;
                    let mut curr: Vec<&Landmark> = seg.static_landmarks.iter().collect();
                    curr.extend(registration.iter().map(|&(i, _)| &seg.unknown_landmarks[i]));
                    let pso = self.cfg.pso.with_seed(stage_seed(self.cfg.seed, k, 2));
                    let precise = estimate_precise_horizontal(&curr, &self.submap, &previous_pose, &prelim.pose, &pso);
                    diag.precise_pairs = precise.pairs;
                    diag.precise_objective = precise.objective;
                    diag.precise_flagged = precise.flagged;
                    delta = precise.pose;
                }
                (delta, vertical.dz, vertical.pitch)
            }
        };

        let biased = PoseDelta2D {
            dtheta: delta.dtheta + if self.prev.is_some() { self.cfg.yaw_bias } else { 0.0 },
            ..delta
        };
        let pose = self.accumulate(&previous_pose, &biased, dz, pitch);
        self.yaw += biased.dtheta;
        self.translation = pose.translation;
        self.trajectory.push(pose);

        if self.cfg.precise {
            if self.prev.is_none() {
                let obs = Self::world_observations(&seg, &pose);
                let tracked = self.tracker.step(&obs, 0.0, tau)?;
                record_tracked(&seg, &obs, &tracked, &mut diag);
            }
            for l in &seg.static_landmarks {
                self.submap.insert_static(k, l, &pose);
            }
            for &(i, track_id) in &registration {
                self.submap.insert_tracked(k, track_id, &seg.unknown_landmarks[i], &pose);
            }
            self.submap.evict(k);
        }

        if self.cfg.loop_closure && k % self.cfg.loop_cfg.keyframe_every == 0 {
            self.keyframe(k, &seg, &pose, &mut diag)?;
        }

        if let Some(map) = self.map.as_mut().filter(|_| !self.map_stale) {
            map.integrate(&map_points(&seg), &self.trajectory[k])?;
        }

        self.prior = delta;
        self.prev = Some(Previous {
            static_landmarks: seg.static_landmarks,
            unknown_landmarks: seg.unknown_landmarks,
        });
        debug!("{}", diag.to_line());
        self.diagnostics.push(diag);
        Ok(*self.trajectory.last().expect("pose just pushed"))
    }

    /// World pose after applying a planar motion, height change and new pitch.
    fn accumulate(&self, previous: &PoseSE3, delta: &PoseDelta2D, dz: f64, pitch: f64) -> PoseSE3 {
        let step = previous.rotation * Vector3::new(delta.dx, delta.dy, dz);
        PoseSE3::from_yaw_pitch(self.yaw + delta.dtheta, pitch, previous.translation + step)
    }

    /// Runs the trackers and returns `(landmark index, track id)` of semi-static
    /// landmarks with a settled verdict.
    fn track(
        &mut self,
        seg: &SegmentedFrame,
        prelim_pose: &PoseSE3,
        omega: f64,
        tau: f64,
        diag: &mut FrameDiagnostics,
    ) -> Result<Vec<(usize, u64)>> {
        let obs = Self::world_observations(seg, prelim_pose);
        let tracked = self.tracker.step(&obs, omega, tau)?;
        let mut registration = Vec::new();
        for (i, t) in tracked.iter().enumerate() {
            match t.verdict {
                MotionVerdict::Dynamic => self.submap.remove_track(t.track_id),
                MotionVerdict::SemiStatic if t.stable => registration.push((i, t.track_id)),
                _ => {}
            }
        }
        record_tracked(seg, &obs, &tracked, diag);
        Ok(registration)
    }

    fn keyframe(&mut self, k: usize, seg: &SegmentedFrame, pose: &PoseSE3, diag: &mut FrameDiagnostics) -> Result<()> {
        diag.keyframe = true;
        let id = self.graph.push_node(GraphNode::from_pose(pose), EDGE_INFORMATION);
        self.keyframe_frames.push(k);
        let descriptor = make_descriptor(id, &seg.static_landmarks, &self.cfg.loop_cfg);
        let candidates = self.database.query(&descriptor, &self.cfg.loop_cfg);
        diag.loop_candidates = candidates.len();
        let pso = self.cfg.pso.with_seed(stage_seed(self.cfg.seed, k, 3));
        for c in &candidates {
            let Some(old) = self.database.get(c.keyframe_id) else {
                continue;
            };
            match verify(old, &descriptor, &self.cfg.loop_cfg, &pso) {
                Verification::Accepted(lc) => {
                    info!(
                        "frame {k}: loop keyframe {} -> {} (pairs {}, overlap {:.2})",
                        lc.from_keyframe, lc.to_keyframe, lc.pairs, lc.overlap_ratio
                    );
                    self.graph.add_loop(GraphEdge {
                        from: lc.from_keyframe,
                        to: lc.to_keyframe,
                        measurement: [lc.delta.dx, lc.delta.dy, lc.delta.dtheta, lc.dz],
                        information: EDGE_INFORMATION,
                    })?;
                    diag.loops_accepted += 1;
                }
                Verification::Rejected { pairs, overlap_ratio } => {
                    debug!("frame {k}: candidate {} rejected (pairs {pairs}, overlap {overlap_ratio:.2})", c.keyframe_id);
                }
            }
        }
        self.database.insert(descriptor, &self.cfg.loop_cfg);

        let cooled = self
            .last_correction_keyframe
            .map_or(true, |last| id >= last + self.cfg.loop_cfg.correction_cooldown);
        if diag.loops_accepted > 0 && cooled {
            self.apply_graph_correction(k, id, diag)?;
        }
        Ok(())
    }

    fn apply_graph_correction(&mut self, k: usize, keyframe: usize, diag: &mut FrameDiagnostics) -> Result<()> {
        let outcome = correct(&self.graph)?;
        if outcome.aborted {
            warn!("frame {k}: pose-graph correction diverged; keeping the odometry trajectory");
            return Ok(());
        }
        let corrections = interpolate_corrections(&self.keyframe_frames, &self.graph.nodes, &outcome.nodes, k + 1);
        for (pose, c) in self.trajectory.iter_mut().zip(&corrections) {
            *pose = c.compose(pose);
        }
        let last = corrections[k];
        self.submap.apply_correction(&last);
        self.tracker
            .apply_correction(last.yaw(), Vector2::new(last.translation.x, last.translation.y));
        self.graph.nodes = outcome.nodes;
        let pose = self.trajectory[k];
        self.yaw += last.yaw();
        self.translation = pose.translation;
        self.last_correction_keyframe = Some(keyframe);
        self.corrections += 1;
        self.map_stale = true;
        diag.corrected = true;
        info!(
            "frame {k}: pose graph corrected (cost {:.4} -> {:.4}, {} iterations)",
            outcome.initial_cost, outcome.final_cost, outcome.iterations
        );
        Ok(())
    }

    /// Finishes the run; rebuilds the map from `source` if a correction made it stale.
    pub fn finish(self, source: &dyn FrameSource) -> Result<RunResult> {
        let mut map = self.map;
        if self.map_stale {
            if let Some(m) = map.as_mut() {
                *m = SemanticVoxelMap::new(self.cfg.voxel_size)?;
                for (k, pose) in self.trajectory.iter().enumerate() {
                    let frame = source.frame(k).map_err(|e| frame_error(k, e))?;
                    let seg = segment_frame(&frame, &self.cfg.segmentation).map_err(|e| frame_error(k, e))?;
                    m.integrate(&map_points(&seg), pose)?;
                }
            }
        }
        Ok(RunResult {
            trajectory: self.trajectory,
            diagnostics: self.diagnostics,
            loop_edges: self.graph.loops.len(),
            corrections: self.corrections,
            map,
            errors: None,
        })
    }
}

fn previous_pose_pitch(pose: &PoseSE3) -> f64 {
    let r = &pose.rotation;
    (-r[(2, 0)]).asin()
}

fn record_tracked(seg: &SegmentedFrame, obs: &[Observation], tracked: &[crate::tracking::TrackedObservation], diag: &mut FrameDiagnostics) {
    for ((l, o), t) in seg.unknown_landmarks.iter().zip(obs).zip(tracked) {
        match t.verdict {
            MotionVerdict::SemiStatic => diag.semi_static += 1,
            MotionVerdict::Dynamic => diag.dynamic += 1,
            MotionVerdict::Unknown => diag.unknown += 1,
        }
        diag.tracked.push(TrackedLandmark {
            track_id: t.track_id,
            class_id: l.class_id,
            verdict: t.verdict,
            associations: t.associations,
            stable: t.stable,
            centre_sensor: l.centre,
            centre_world: o.centre,
        });
    }
}

/// Ground and pure-static landmark points of a segmented frame.
fn map_points(seg: &SegmentedFrame) -> Vec<(Point3<f64>, ClassId)> {
    seg.partition
        .ground
        .iter()
        .map(|p| (p.position, p.class_id))
        .chain(seg.static_landmarks.iter().flat_map(|l| l.points.iter().map(move |p| (*p, l.class_id))))
        .collect()
}

fn frame_error(frame: usize, e: Error) -> Error {
    match e {
        Error::Frame { .. } => e,
        other => Error::Frame {
            frame,
            source: Box::new(other),
        },
    }
}

/// Runs every frame of `source` in order.
pub fn run_sequence(cfg: &RunConfig, source: &dyn FrameSource) -> Result<RunResult> {
    let mut pipeline = Pipeline::new(cfg.clone())?;
    for k in 0..source.len() {
        let frame = source.frame(k).map_err(|e| frame_error(k, e))?;
        pipeline.process(&frame).map_err(|e| frame_error(k, e))?;
    }
    pipeline.finish(source)
}

/// Paths written by [`run_dataset`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub trajectory: PathBuf,
    pub metrics: PathBuf,
    pub diagnostics: PathBuf,
    pub map: Option<PathBuf>,
}

/// Runs a KITTI-layout sequence and writes trajectory, metrics, diagnostics and map.
///
/// With a `calib.txt` next to the scans the trajectory is written (and
/// evaluated) in the camera frame, like the KITTI ground truth.
pub fn run_dataset(cfg: &RunConfig, output: &Path) -> Result<(RunResult, RunOutputs)> {
    let root = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset root given".into()))?;
    let mut sequence = KittiSequence::open(root, &cfg.sequence)?;
    if let Some(dir) = &cfg.label_dir {
        sequence.labels = Box::new(DatasetLabels { dir: dir.clone() });
    }
    if sequence.is_empty() {
        return Err(Error::Precondition(format!("sequence {} has no scans", cfg.sequence)));
    }
    info!("sequence {}: {} scans", cfg.sequence, sequence.len());
    let mut result = run_sequence(cfg, &sequence)?;

    let trajectory = match sequence.velo_to_cam().transpose()? {
        Some(tr) => {
            let inv = tr.inverse();
            result.trajectory.iter().map(|p| tr.compose(p).compose(&inv)).collect()
        }
        None => result.trajectory.clone(),
    };
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let outputs = RunOutputs {
        trajectory: output.join(format!("{}.txt", cfg.sequence)),
        metrics: output.join("metrics.txt"),
        diagnostics: output.join("diagnostics.log"),
        map: cfg.export_map.then(|| output.join("map.ply")),
    };
    write_trajectory(&trajectory, &outputs.trajectory)?;

    let mut metrics = format!(
        "sequence {}\nframes {}\nloop_edges {}\ncorrections {}\n",
        cfg.sequence,
        trajectory.len(),
        result.loop_edges,
        result.corrections
    );
    match sequence.ground_truth().transpose()? {
        Some(gt) if gt.len() == trajectory.len() => match kitti_relative_errors(&trajectory, &gt) {
            Ok(e) => {
                let _ = write!(
                    metrics,
                    "t_rel_percent {:.4}\nr_rel_deg_per_m {:.6}\nr_rel_deg_per_100m {:.4}\nsegments {}\n",
                    e.t_rel,
                    e.r_rel,
                    e.r_rel_per_100m(),
                    e.segments
                );
                result.errors = Some(e);
            }
            Err(e) => {
                let _ = writeln!(metrics, "evaluation skipped: {e}");
            }
        },
        Some(gt) => {
            let _ = writeln!(metrics, "evaluation skipped: {} ground-truth poses for {} frames", gt.len(), trajectory.len());
        }
        None => metrics.push_str("evaluation skipped: no ground truth\n"),
    }
    fs::write(&outputs.metrics, metrics).map_err(|e| Error::io(&outputs.metrics, e))?;

    let log: String = result.diagnostics.iter().map(|d| d.to_line() + "\n").collect();
    fs::write(&outputs.diagnostics, log).map_err(|e| Error::io(&outputs.diagnostics, e))?;

    if let (Some(path), Some(map)) = (&outputs.map, &result.map) {
        export_map(map, path)?;
    }
    Ok((result, outputs))
}
