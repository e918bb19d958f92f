//! World-frame semantic voxel map of ground and pure-static points.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::dataio::PoseSE3;
use crate::error::{Error, Result};
use crate::semantic::{self, ClassId};

pub type VoxelIndex = (i64, i64, i64);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Voxel {
    sum: Vector3<f64>,
    pub count: u64,
    pub class_counts: BTreeMap<ClassId, u64>,
}

impl Voxel {
    pub fn centroid(&self) -> Point3<f64> {
        Point3::from(self.sum / self.count as f64)
    }

    /// Most frequent class; ties go to the lower id.
    pub fn majority_class(&self) -> ClassId {
        let mut best = (0, 0u64);
        for (&c, &n) in &self.class_counts {
            if n > best.1 {
                best = (c, n);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone)]
pub struct SemanticVoxelMap {
    pub voxel_size: f64,
    pub voxels: HashMap<VoxelIndex, Voxel>,
}

pub const DEFAULT_VOXEL_SIZE: f64 = 0.2;

impl SemanticVoxelMap {
    pub fn new(voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::Config(format!("mapping.voxel_size must be positive, got {voxel_size}")));
        }
        Ok(Self {
            voxel_size,
            voxels: HashMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn index_of(&self, p: &Point3<f64>) -> VoxelIndex {
        let s = self.voxel_size;
        ((p.x / s).floor() as i64, (p.y / s).floor() as i64, (p.z / s).floor() as i64)
    }

    /// Adds sensor-frame points of ground and pure-static classes at `world_pose`.
    pub fn integrate(&mut self, points: &[(Point3<f64>, ClassId)], world_pose: &PoseSE3) -> Result<()> {
        let m = world_pose.to_matrix();
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("map integration with a non-finite pose".into()));
        }
        if let Some((_, c)) = points.iter().find(|(_, c)| !(semantic::is_ground(*c) || semantic::is_static(*c))) {
            return Err(Error::Precondition(format!(
                "class {} ({}) may not enter the map",
                c,
                semantic::name(*c)
            )));
        }
        for (p, c) in points {
            let w = world_pose.transform_point(p);
            let idx = self.index_of(&w);
            let v = self.voxels.entry(idx).or_default();
            v.sum += w.coords;
            v.count += 1;
            *v.class_counts.entry(semantic::canonical(*c)).or_default() += 1;
        }
        Ok(())
    }

    /// Voxels ordered by index, for reproducible output.
    pub fn sorted(&self) -> Vec<(&VoxelIndex, &Voxel)> {
        let mut v: Vec<_> = self.voxels.iter().collect();
        v.sort_by_key(|(k, _)| **k);
        v
    }
}

/// Display colour of a class.
pub fn class_color(class_id: ClassId) -> [u8; 3] {
    match semantic::canonical(class_id) {
        semantic::ROAD => [255, 0, 255],
        semantic::PARKING => [255, 150, 255],
        semantic::SIDEWALK => [75, 0, 75],
        semantic::OTHER_GROUND => [175, 0, 75],
        semantic::LANE_MARKING => [150, 255, 170],
        semantic::TERRAIN => [150, 240, 80],
        semantic::BUILDING => [255, 230, 150],
        semantic::FENCE => [255, 120, 50],
        semantic::OTHER_STRUCTURE => [255, 150, 0],
        semantic::VEGETATION => [0, 175, 0],
        semantic::TRUNK => [135, 60, 0],
        semantic::POLE => [255, 240, 0],
        semantic::TRAFFIC_SIGN => [255, 0, 0],
        _ => [128, 128, 128],
    }
}

/// Writes one ASCII PLY vertex per voxel: centroid, class colour and class id.
pub fn export_map(map: &SemanticVoxelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if map.is_empty() {
        return Err(Error::Precondition("cannot export an empty map".into()));
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let voxels = map.sorted();
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nproperty ushort class_id\nend_header\n",
        voxels.len()
    )
    .map_err(io)?;
    for (_, v) in voxels {
        let c = v.majority_class();
        assert!(!semantic::is_unknown_motion(c), "unknown-motion class in the map");
        let p = v.centroid();
        let [r, g, b] = class_color(c);
        writeln!(w, "{} {} {} {r} {g} {b} {c}", p.x as f32, p.y as f32, p.z as f32).map_err(io)?;
    }
    w.flush().map_err(io)
}
