//! Class partition and per-class DBSCAN instance clustering.

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::{Point3, Vector3};

use crate::dataio::LabeledFrame;
use crate::error::{Error, Result};
use crate::semantic::{self, ClassGroup, ClassId, SizeGroup};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticPoint {
    pub position: Point3<f64>,
    pub class_id: ClassId,
}

/// Exact split of a frame by semantic group.
#[derive(Debug, Clone, Default)]
pub struct ClassPartition {
    pub ground: Vec<SemanticPoint>,
    pub static_candidates: Vec<SemanticPoint>,
    pub unknown_candidates: Vec<SemanticPoint>,
    pub discarded: Vec<SemanticPoint>,
    /// Points whose code is outside the class table (also counted in `discarded`).
    pub unrecognized: usize,
}

impl ClassPartition {
    pub fn total(&self) -> usize {
        self.ground.len() + self.static_candidates.len() + self.unknown_candidates.len() + self.discarded.len()
    }
}

pub fn partition_by_class(frame: &LabeledFrame) -> Result<ClassPartition> {
    let labels = frame
        .labels
        .as_ref()
        .ok_or_else(|| Error::Precondition(format!("frame {} has no labels", frame.frame_index)))?;
    let mut part = ClassPartition::default();
    for (&position, &raw) in frame.points.iter().zip(labels) {
        let class_id = semantic::canonical(raw);
        let point = SemanticPoint { position, class_id };
        match semantic::group_of(class_id) {
            Some(ClassGroup::Ground) => part.ground.push(point),
            Some(ClassGroup::PureStatic) => part.static_candidates.push(point),
            Some(ClassGroup::UnknownMotion) => part.unknown_candidates.push(point),
            Some(ClassGroup::Discarded) => part.discarded.push(point),
            None => {
                part.unrecognized += 1;
                part.discarded.push(point);
            }
        }
    }
    if part.unrecognized > 0 {
        log::warn!(
            "frame {}: {} points with unrecognized class codes discarded",
            frame.frame_index,
            part.unrecognized
        );
    }
    Ok(part)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    /// Neighbourhood radius, meters.
    pub eps: f64,
    /// Neighbourhood population (the point itself included) that makes a core point.
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn new(eps: f64, min_pts: usize) -> Result<Self> {
        let p = Self { eps, min_pts };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) || self.min_pts < 2 {
            return Err(Error::Config(format!(
                "invalid DBSCAN parameters eps={} min_pts={}",
                self.eps, self.min_pts
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationConfig {
    pub small: DbscanParams,
    pub medium: DbscanParams,
    pub large: DbscanParams,
    pub max_range_m: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            small: DbscanParams { eps: 0.5, min_pts: 5 },
            medium: DbscanParams { eps: 1.0, min_pts: 10 },
            large: DbscanParams { eps: 2.0, min_pts: 20 },
            max_range_m: 60.0,
        }
    }
}

impl SegmentationConfig {
    pub fn params_for_group(&self, group: SizeGroup) -> DbscanParams {
        match group {
            SizeGroup::Small => self.small,
            SizeGroup::Medium => self.medium,
            SizeGroup::Large => self.large,
        }
    }

    pub fn params_for_group_mut(&mut self, group: SizeGroup) -> &mut DbscanParams {
        match group {
            SizeGroup::Small => &mut self.small,
            SizeGroup::Medium => &mut self.medium,
            SizeGroup::Large => &mut self.large,
        }
    }

    /// DBSCAN parameters for a clusterable class.
    pub fn adaptive_params(&self, class_id: ClassId) -> Result<DbscanParams> {
        semantic::size_group(class_id)
            .map(|g| self.params_for_group(g))
            .ok_or_else(|| {
                Error::Precondition(format!(
                    "class {class_id} ({}) is not clustered",
                    semantic::name(class_id)
                ))
            })
    }
}

/// One segmented object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub instance_id: usize,
    pub class_id: ClassId,
    pub points: Vec<Point3<f64>>,
    pub centre: Point3<f64>,
}

impl Landmark {
    pub fn new(instance_id: usize, class_id: ClassId, points: Vec<Point3<f64>>) -> Self {
        let centre = centroid(&points);
        Self {
            instance_id,
            class_id,
            points,
            centre,
        }
    }
}

pub fn centroid(points: &[Point3<f64>]) -> Point3<f64> {
    if points.is_empty() {
        return Point3::origin();
    }
    let sum: Vector3<f64> = points.iter().map(|p| p.coords).sum();
    Point3::from(sum / points.len() as f64)
}

type Cell = (i64, i64, i64);

struct Grid<'a> {
    points: &'a [Point3<f64>],
    eps: f64,
    cells: HashMap<Cell, Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Point3<f64>], eps: f64) -> Self {
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell(p, eps)).or_default().push(i);
        }
        Self { points, eps, cells }
    }

    fn cell(p: &Point3<f64>, eps: f64) -> Cell {
        (
            (p.x / eps).floor() as i64,
            (p.y / eps).floor() as i64,
            (p.z / eps).floor() as i64,
        )
    }

    fn for_each_neighbor(&self, i: usize, mut f: impl FnMut(usize)) {
        let p = &self.points[i];
        let (cx, cy, cz) = Self::cell(p, self.eps);
        let eps2 = self.eps * self.eps;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            if (self.points[j] - p).norm_squared() <= eps2 {
                                f(j);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// DBSCAN cluster label of every point (`None` = noise).
///
/// Clusters are numbered by their lowest-index core point. A border point
/// reachable from several clusters joins the lowest-numbered one.
pub fn dbscan_labels(points: &[Point3<f64>], params: &DbscanParams) -> Vec<Option<usize>> {
    let n = points.len();
    let grid = Grid::new(points, params.eps);
    let core: Vec<bool> = (0..n)
        .map(|i| {
            let mut count = 0;
            grid.for_each_neighbor(i, |_| count += 1);
            count >= params.min_pts
        })
        .collect();

    let mut labels = vec![None; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        let cluster = next;
        next += 1;
        labels[seed] = Some(cluster);
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            grid.for_each_neighbor(i, |j| {
                if labels[j].is_none() {
                    labels[j] = Some(cluster);
                    if core[j] {
                        queue.push_back(j);
                    }
                }
            });
        }
    }
    labels
}

/// Clusters the points of one class into landmarks; noise is dropped.
///
/// A cluster whose border points were all claimed by earlier clusters can end
/// up below `min_pts`; such clusters are dropped too.
pub fn cluster_instances(points: &[Point3<f64>], class_id: ClassId, params: &DbscanParams) -> Vec<Landmark> {
    let labels = dbscan_labels(points, params);
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<Point3<f64>>> = vec![Vec::new(); count];
    for (p, label) in points.iter().zip(&labels) {
        if let Some(c) = label {
            members[*c].push(*p);
        }
    }
    members
        .into_iter()
        .filter(|pts| pts.len() >= params.min_pts)
        .enumerate()
        .map(|(id, pts)| Landmark::new(id, class_id, pts))
        .collect()
}

/// Output of segmenting one frame.
#[derive(Debug, Clone, Default)]
pub struct SegmentedFrame {
    pub partition: ClassPartition,
    pub static_landmarks: Vec<Landmark>,
    pub unknown_landmarks: Vec<Landmark>,
}

impl SegmentedFrame {
    pub fn landmark_count(&self) -> usize {
        self.static_landmarks.len() + self.unknown_landmarks.len()
    }
}

fn cluster_group(
    points: &[SemanticPoint],
    cfg: &SegmentationConfig,
    next_id: &mut usize,
) -> Result<Vec<Landmark>> {
    let max_r2 = cfg.max_range_m * cfg.max_range_m;
    let mut by_class: BTreeMap<ClassId, Vec<Point3<f64>>> = BTreeMap::new();
    for p in points {
        if p.position.coords.norm_squared() <= max_r2 {
            by_class.entry(p.class_id).or_default().push(p.position);
        }
    }
    let mut out = Vec::new();
    for (class_id, pts) in by_class {
        let params = cfg.adaptive_params(class_id)?;
        for mut lm in cluster_instances(&pts, class_id, &params) {
            lm.instance_id = *next_id;
            *next_id += 1;
            out.push(lm);
        }
    }
    Ok(out)
}

/// Partitions a frame and clusters its static and unknown-motion points.
pub fn segment_frame(frame: &LabeledFrame, cfg: &SegmentationConfig) -> Result<SegmentedFrame> {
    let partition = partition_by_class(frame)?;
    let mut next_id = 0;
    let static_landmarks = cluster_group(&partition.static_candidates, cfg, &mut next_id)?;
    let unknown_landmarks = cluster_group(&partition.unknown_candidates, cfg, &mut next_id)?;
    Ok(SegmentedFrame {
        partition,
        static_landmarks,
        unknown_landmarks,
    })
}
