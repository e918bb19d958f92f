//! Synthetic labeled LiDAR worlds with exact ground truth.
//!
//! Objects are fixed point patterns (poles, trunks, signs, buildings, cars,
//! pedestrians) standing on a flat ground plane. Every object within sensor
//! range is fully visible; each frame adds independent Gaussian jitter.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Point2, Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{encode_labels, encode_point_cloud, write_trajectory, FrameSource, LabeledFrame, PoseSE3, DEFAULT_PERIOD};
use crate::error::{Error, Result};
use crate::semantic::{self, ClassId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// About 100 m of straight road, 20 static and 5 dynamic objects.
    Straight,
    /// One lap of a rounded square plus a revisit of the start.
    SquareLoop,
    /// Straight road where at least a quarter of the visible objects move.
    Dynamic,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Straight => "straight",
            Scenario::SquareLoop => "square-loop",
            Scenario::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(Scenario::Straight),
            "square-loop" => Ok(Scenario::SquareLoop),
            "dynamic" => Ok(Scenario::Dynamic),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

/// Where an object stands over time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Fixed { position: Point2<f64> },
    /// Constant velocity in m/s starting at `start` at frame 0.
    Linear { start: Point2<f64>, velocity: Vector2<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldObject {
    pub id: usize,
    pub class_id: ClassId,
    /// Points relative to the footprint centre, z up from the ground.
    pub pattern: Vec<Vector3<f64>>,
    pub heading: f64,
    pub motion: Motion,
}

impl WorldObject {
    pub fn position(&self, t: f64) -> Point2<f64> {
        match self.motion {
            Motion::Fixed { position } => position,
            Motion::Linear { start, velocity } => start + velocity * t,
        }
    }

    pub fn speed(&self) -> f64 {
        match self.motion {
            Motion::Fixed { .. } => 0.0,
            Motion::Linear { velocity, .. } => velocity.norm(),
        }
    }

    pub fn is_moving(&self) -> bool {
        self.speed() > 0.0
    }

    /// Mean of the pattern, offset to the footprint centre.
    fn pattern_centre(&self) -> Vector3<f64> {
        self.pattern.iter().sum::<Vector3<f64>>() / self.pattern.len() as f64
    }
}

/// Object state at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectTruth {
    pub id: usize,
    pub class_id: ClassId,
    pub moving: bool,
    pub centre_world: Point3<f64>,
    pub centre_sensor: Point3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub scenario: Scenario,
    pub seed: u64,
    pub frames: usize,
    pub period: f64,
    pub sensor_height: f64,
    /// Objects whose centre lies farther than this (horizontally) are not seen.
    pub max_range: f64,
    pub ground_points: usize,
    /// Per-coordinate point noise, meters.
    pub jitter: f64,
}

impl SynthParams {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let frames = match scenario {
            Scenario::Straight => 215,
            Scenario::SquareLoop => square_loop_frames(),
            Scenario::Dynamic => 115,
        };
        Self {
            scenario,
            seed,
            frames,
            period: DEFAULT_PERIOD,
            sensor_height: 1.73,
            max_range: 50.0,
            ground_points: 2000,
            jitter: 0.01,
        }
    }
}

/// A generated world; frames are produced on demand.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub params: SynthParams,
    pub objects: Vec<WorldObject>,
    pub ground_truth: Vec<PoseSE3>,
}

const SQUARE_STRAIGHT_M: f64 = 60.0;
const SQUARE_RADIUS_M: f64 = 15.0;
const SQUARE_STEP_M: f64 = 1.0;
const SQUARE_EXTRA_FRAMES: usize = 80;

fn square_lap_length() -> f64 {
    4.0 * (SQUARE_STRAIGHT_M + std::f64::consts::FRAC_PI_2 * SQUARE_RADIUS_M)
}

/// First frame at or past one full lap.
fn square_lap_frames() -> usize {
    (0..).find(|&k| arc_length(k, SQUARE_STEP_M) >= square_lap_length()).expect("lap is finite")
}

fn square_loop_frames() -> usize {
    square_lap_frames() + SQUARE_EXTRA_FRAMES
}

/// Frames over which the sensor accelerates from rest to cruise speed.
pub const RAMP_FRAMES: usize = 20;

/// Arc length travelled by frame `k` when accelerating linearly to `step` m/frame.
fn arc_length(k: usize, step: f64) -> f64 {
    (0..k).map(|j| step * ((j + 1) as f64 / RAMP_FRAMES as f64).min(1.0)).sum()
}

/// Planar path `(x, y, yaw)` per frame for a scenario.
fn path(scenario: Scenario, frames: usize) -> Vec<(f64, f64, f64)> {
    match scenario {
        Scenario::Straight => (0..frames).map(|k| (arc_length(k, 0.5), 0.0, 0.0)).collect(),
        Scenario::Dynamic => (0..frames).map(|k| (arc_length(k, 1.0), 0.0, 0.0)).collect(),
        Scenario::SquareLoop => {
            // Arc length → curvature: straights followed by left quarter arcs.
            let seg = SQUARE_STRAIGHT_M + std::f64::consts::FRAC_PI_2 * SQUARE_RADIUS_M;
            let curvature = |s: f64| {
                let u = s.rem_euclid(seg);
                if u < SQUARE_STRAIGHT_M {
                    0.0
                } else {
                    1.0 / SQUARE_RADIUS_M
                }
            };
            let mut out = Vec::with_capacity(frames);
            let (mut x, mut y, mut yaw) = (0.0f64, 0.0f64, 0.0f64);
            let substeps = 20;
            for k in 0..frames {
                out.push((x, y, yaw));
                let (s0, s1) = (arc_length(k, SQUARE_STEP_M), arc_length(k + 1, SQUARE_STEP_M));
                let h = (s1 - s0) / substeps as f64;
                for j in 0..substeps {
                    let s = s0 + (j as f64 + 0.5) * h;
                    let dyaw = curvature(s) * h;
                    x += h * (yaw + 0.5 * dyaw).cos();
                    y += h * (yaw + 0.5 * dyaw).sin();
                    yaw += dyaw;
                }
            }
            out
        }
    }
}

fn ring_pattern(radius: f64, azimuths: usize, z_lo: f64, z_hi: f64, dz: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    let mut z = z_lo;
    let mut level = 0;
    while z <= z_hi + 1e-9 {
        for a in 0..azimuths {
            let phi = (a as f64 + 0.5 * (level % 2) as f64) / azimuths as f64 * std::f64::consts::TAU;
            out.push(Vector3::new(radius * phi.cos(), radius * phi.sin(), z));
        }
        z += dz;
        level += 1;
    }
    out
}

/// Surface samples of an axis-aligned box with footprint `length × width`.
fn box_pattern(length: f64, width: f64, z_lo: f64, z_hi: f64, spacing: f64, roof: bool) -> Vec<Vector3<f64>> {
    let steps = |extent: f64| ((extent / spacing).ceil() as usize).max(1);
    let (nl, nw, nh) = (steps(length), steps(width), steps(z_hi - z_lo));
    let (hl, hw) = (0.5 * length, 0.5 * width);
    let mut out = Vec::new();
    for k in 0..=nh {
        let z = z_lo + (z_hi - z_lo) * k as f64 / nh as f64;
        for i in 0..=nl {
            let x = -hl + length * i as f64 / nl as f64;
            out.push(Vector3::new(x, -hw, z));
            out.push(Vector3::new(x, hw, z));
        }
        for j in 1..nw {
            let y = -hw + width * j as f64 / nw as f64;
            out.push(Vector3::new(-hl, y, z));
            out.push(Vector3::new(hl, y, z));
        }
    }
    if roof {
        for i in 1..nl {
            for j in 1..nw {
                out.push(Vector3::new(-hl + length * i as f64 / nl as f64, -hw + width * j as f64 / nw as f64, z_hi));
            }
        }
    }
    out
}

fn pattern_for(class_id: ClassId, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    match class_id {
        semantic::POLE => ring_pattern(0.12, 4, 0.1, rng.gen_range(3.5..5.0), 0.3),
        semantic::TRUNK => ring_pattern(rng.gen_range(0.2..0.3), 6, 0.1, 2.5, 0.3),
        semantic::TRAFFIC_SIGN => box_pattern(0.05, 0.6, 2.2, 2.8, 0.2, false),
        semantic::BUILDING => box_pattern(rng.gen_range(8.0..14.0), rng.gen_range(6.0..10.0), 0.2, 6.0, 0.8, false),
        semantic::CAR => box_pattern(4.5, 1.8, 0.3, 1.5, 0.4, true),
        semantic::PERSON => ring_pattern(0.25, 6, 0.1, 1.7, 0.2),
        _ => ring_pattern(0.2, 4, 0.1, 1.0, 0.3),
    }
}

struct Builder {
    rng: ChaCha8Rng,
    objects: Vec<WorldObject>,
}

impl Builder {
    fn push(&mut self, class_id: ClassId, heading: f64, motion: Motion) {
        let pattern = pattern_for(class_id, &mut self.rng);
        self.objects.push(WorldObject {
            id: self.objects.len(),
            class_id,
            pattern,
            heading,
            motion,
        });
    }

    /// Keeps `p` only if it clears every fixed object by `gap` and the path by `clearance`.
    fn free(&self, p: &Point2<f64>, gap: f64, track: &[(f64, f64, f64)], clearance: f64) -> bool {
        let clear_of_objects = self.objects.iter().all(|o| match o.motion {
            Motion::Fixed { position } => (position - p).norm() >= gap,
            Motion::Linear { .. } => true,
        });
        clear_of_objects && track.iter().all(|(x, y, _)| (Point2::new(*x, *y) - p).norm() >= clearance)
    }

    fn scatter_static(&mut self, count: usize, classes: &[ClassId], track: &[(f64, f64, f64)], sample: impl Fn(&mut ChaCha8Rng) -> Point2<f64>) {
        let mut placed = 0;
        let mut attempts = 0;
        while placed < count && attempts < count * 200 {
            attempts += 1;
            let class_id = classes[self.rng.gen_range(0..classes.len())];
            let p = sample(&mut self.rng);
            let (gap, clearance) = if class_id == semantic::BUILDING { (16.0, 12.0) } else { (4.0, 6.0) };
            if self.free(&p, gap, track, clearance) {
                let heading = self.rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                self.push(class_id, heading, Motion::Fixed { position: p });
                placed += 1;
            }
        }
    }
}

const SMALL_STATIC: [ClassId; 3] = [semantic::POLE, semantic::TRUNK, semantic::TRAFFIC_SIGN];

impl SynthWorld {
    pub fn generate(scenario: Scenario, seed: u64) -> Self {
        Self::with_params(SynthParams::new(scenario, seed))
    }

    pub fn with_params(params: SynthParams) -> Self {
        let track = path(params.scenario, params.frames);
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            objects: Vec::new(),
        };
        let side = |rng: &mut ChaCha8Rng| if rng.gen::<bool>() { 1.0 } else { -1.0 };
        match params.scenario {
            Scenario::Straight => {
                let classes = [semantic::POLE, semantic::TRUNK, semantic::TRAFFIC_SIGN, semantic::BUILDING];
                b.scatter_static(20, &classes, &track, |rng| {
                    Point2::new(rng.gen_range(-20.0..120.0), side(rng) * rng.gen_range(7.0..25.0))
                });
                b.push(semantic::PERSON, 0.0, Motion::Linear { start: Point2::new(20.0, 9.5), velocity: Vector2::new(1.5, 0.0) });
                b.push(semantic::PERSON, 0.0, Motion::Linear { start: Point2::new(70.0, -9.5), velocity: Vector2::new(-1.5, 0.0) });
                b.push(semantic::CAR, 0.0, Motion::Linear { start: Point2::new(10.0, 3.5), velocity: Vector2::new(10.0, 0.0) });
                b.push(semantic::CAR, std::f64::consts::PI, Motion::Linear { start: Point2::new(150.0, -3.5), velocity: Vector2::new(-10.0, 0.0) });
                b.push(semantic::CAR, 0.0, Motion::Linear { start: Point2::new(30.0, -3.0), velocity: Vector2::new(2.5, 0.0) });
            }
            Scenario::SquareLoop => {
                let classes = [semantic::POLE, semantic::TRUNK, semantic::TRAFFIC_SIGN, semantic::BUILDING];
                let (lo, hi) = (-40.0, SQUARE_STRAIGHT_M + 2.0 * SQUARE_RADIUS_M + 40.0);
                b.scatter_static(170, &classes, &track, |rng| Point2::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi)));
                for i in 0..4 {
                    let x = 10.0 + 12.0 * i as f64;
                    b.push(semantic::PERSON, 0.0, Motion::Linear { start: Point2::new(x, -9.0), velocity: Vector2::new(1.5, 0.0) });
                }
            }
            Scenario::Dynamic => {
                let end = params.frames as f64;
                b.scatter_static(((end + 100.0) * 0.14) as usize, &SMALL_STATIC, &track, |rng| {
                    Point2::new(rng.gen_range(-50.0..end + 50.0), side(rng) * rng.gen_range(8.0..20.0))
                });
                // Parked cars along both kerbs.
                let mut x = -50.0 + b.rng.gen_range(0.0..10.0);
                while x < end + 50.0 {
                    let y = side(&mut b.rng) * 7.0;
                    b.push(semantic::CAR, 0.0, Motion::Fixed { position: Point2::new(x, y) });
                    x += b.rng.gen_range(18.0..32.0);
                }
                // Pedestrians on both sidewalks, one direction per side.
                for (y, dir) in [(10.0, 1.0), (-10.0, -1.0)] {
                    let mut x = -60.0 + b.rng.gen_range(0.0..20.0);
                    while x < end + 80.0 {
                        b.push(semantic::PERSON, 0.0, Motion::Linear { start: Point2::new(x, y), velocity: Vector2::new(1.5 * dir, 0.0) });
                        x += b.rng.gen_range(35.0..55.0);
                    }
                }
                // Traffic keeping pace with the sensor in the next lane.
                let mut offsets = [-30.0, -12.0, 12.0, 30.0];
                for o in &mut offsets {
                    *o += b.rng.gen_range(-3.0..3.0);
                }
                for o in offsets {
                    b.push(semantic::CAR, 0.0, Motion::Linear { start: Point2::new(o, 3.5), velocity: Vector2::new(10.0, 0.0) });
                }
                // Slow traffic in the other lane.
                let mut x = -40.0 + b.rng.gen_range(0.0..15.0);
                while x < end + 50.0 {
                    b.push(semantic::CAR, 0.0, Motion::Linear { start: Point2::new(x, -3.0), velocity: Vector2::new(1.5, 0.0) });
                    x += b.rng.gen_range(40.0..60.0);
                }
            }
        }
        let ground_truth = track
            .iter()
            .map(|&(x, y, yaw)| PoseSE3::from_yaw_pitch(yaw, 0.0, Vector3::new(x, y, 0.0)))
            .collect();
        Self {
            params,
            objects: b.objects,
            ground_truth,
        }
    }

    fn time(&self, k: usize) -> f64 {
        k as f64 * self.params.period
    }

    fn object_points_world(&self, o: &WorldObject, t: f64) -> impl Iterator<Item = Point3<f64>> + '_ {
        let (s, c) = o.heading.sin_cos();
        let p = o.position(t);
        let z0 = -self.params.sensor_height;
        o.pattern
            .clone()
            .into_iter()
            .map(move |v| Point3::new(p.x + c * v.x - s * v.y, p.y + s * v.x + c * v.y, z0 + v.z))
    }

    fn visible(&self, o: &WorldObject, k: usize) -> bool {
        let sensor = self.ground_truth[k].translation.xy();
        (o.position(self.time(k)).coords - sensor).norm() <= self.params.max_range
    }

    /// Objects in sensor range at frame `k`, with noise-free centres.
    pub fn truth_at(&self, k: usize) -> Vec<ObjectTruth> {
        let inv = self.ground_truth[k].inverse();
        let t = self.time(k);
        self.objects
            .iter()
            .filter(|o| self.visible(o, k))
            .map(|o| {
                let (s, c) = o.heading.sin_cos();
                let pc = o.pattern_centre();
                let p = o.position(t);
                let centre_world = Point3::new(p.x + c * pc.x - s * pc.y, p.y + s * pc.x + c * pc.y, pc.z - self.params.sensor_height);
                ObjectTruth {
                    id: o.id,
                    class_id: o.class_id,
                    moving: o.is_moving(),
                    centre_world,
                    centre_sensor: inv.transform_point(&centre_world),
                }
            })
            .collect()
    }

    /// Mean over frames of the moving share of visible landmark objects.
    pub fn dynamic_fraction(&self) -> f64 {
        let total: f64 = (0..self.params.frames)
            .map(|k| {
                let seen = self.truth_at(k);
                if seen.is_empty() {
                    0.0
                } else {
                    seen.iter().filter(|o| o.moving).count() as f64 / seen.len() as f64
                }
            })
            .sum();
        total / self.params.frames.max(1) as f64
    }

    /// Frame `k` in the sensor frame.
    pub fn render(&self, k: usize) -> LabeledFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        rng.set_stream(k as u64 + 1);
        let noise = Normal::new(0.0, self.params.jitter.max(1e-12)).expect("finite jitter");
        let jitter = |rng: &mut ChaCha8Rng| Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
        let inv = self.ground_truth[k].inverse();
        let t = self.time(k);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for o in self.objects.iter().filter(|o| self.visible(o, k)) {
            for p in self.object_points_world(o, t) {
                points.push(inv.transform_point(&p) + jitter(&mut rng));
                labels.push(o.class_id);
            }
        }
        for _ in 0..self.params.ground_points {
            let r: f64 = rng.gen_range(2.0..40.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = Point3::new(r * phi.cos(), r * phi.sin(), -self.params.sensor_height);
            points.push(p + jitter(&mut rng));
            labels.push(if phi.sin().abs() * r > 6.0 { semantic::SIDEWALK } else { semantic::ROAD });
        }
        let mut frame = LabeledFrame::labeled(k, points, labels).expect("one label per point");
        frame.period = self.params.period;
        frame
    }

    /// Writes `<root>/sequences/<sequence>/{velodyne,labels,poses.txt}`.
    pub fn write_kitti(&self, root: impl AsRef<Path>, sequence: &str) -> Result<PathBuf> {
        let dir = root.as_ref().join("sequences").join(sequence);
        let velodyne = dir.join("velodyne");
        let label_dir = dir.join("labels");
        for d in [&velodyne, &label_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for k in 0..self.params.frames {
            let frame = self.render(k);
            let bin = velodyne.join(format!("{k:06}.bin"));
            fs::write(&bin, encode_point_cloud(&frame.points)).map_err(|e| Error::io(&bin, e))?;
            let lab = label_dir.join(format!("{k:06}.label"));
            let labels = frame.labels.as_deref().unwrap_or_default();
            fs::write(&lab, encode_labels(labels)).map_err(|e| Error::io(&lab, e))?;
        }
        write_trajectory(&self.ground_truth, dir.join("poses.txt"))?;
        Ok(dir)
    }
}

impl FrameSource for SynthWorld {
    fn len(&self) -> usize {
        self.params.frames
    }

    fn frame(&self, index: usize) -> Result<LabeledFrame> {
        if index >= self.params.frames {
            return Err(Error::Precondition(format!("frame {index} out of range")));
        }
        Ok(self.render(index))
    }
}
