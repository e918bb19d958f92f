//! KITTI / SemanticKITTI ingestion and trajectory output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::semantic::ClassId;

/// LiDAR period of the KITTI Velodyne (10 Hz).
pub const DEFAULT_PERIOD: f64 = 0.1;

const POINT_RECORD: usize = 16;
const LABEL_RECORD: usize = 4;
const ORTHONORMAL_DRIFT_MAX: f64 = 1e-3;

/// One LiDAR scan in the sensor frame.
#[derive(Debug, Clone)]
pub struct LabeledFrame {
    pub frame_index: usize,
    pub points: Vec<Point3<f64>>,
    /// Per-point semantic codes; `None` until a label source has been applied.
    pub labels: Option<Vec<ClassId>>,
    /// Sampling period in seconds.
    pub period: f64,
}

impl LabeledFrame {
    pub fn new(frame_index: usize, points: Vec<Point3<f64>>) -> Self {
        Self {
            frame_index,
            points,
            labels: None,
            period: DEFAULT_PERIOD,
        }
    }

    /// Builds a frame from points that already carry labels.
    pub fn labeled(frame_index: usize, points: Vec<Point3<f64>>, labels: Vec<ClassId>) -> Result<Self> {
        let mut frame = Self::new(frame_index, points);
        frame.attach_labels(labels)?;
        Ok(frame)
    }

    pub fn attach_labels(&mut self, labels: Vec<ClassId>) -> Result<()> {
        if labels.len() != self.points.len() {
            return Err(Error::Precondition(format!(
                "frame {}: {} labels for {} points",
                self.frame_index,
                labels.len(),
                self.points.len()
            )));
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rigid 3D pose: `p_world = rotation * p_local + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// `Rz(yaw) * Ry(pitch)`, zero roll.
    pub fn from_yaw_pitch(yaw: f64, pitch: f64, translation: Vector3<f64>) -> Self {
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), pitch);
        Self {
            rotation: (rz * ry).into_inner(),
            translation,
        }
    }

    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Heading of the local x axis projected on the world xy plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Rotation angle of the whole rotation matrix, radians.
    pub fn rotation_angle(&self) -> f64 {
        let r = &self.rotation;
        let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        // atan2 stays accurate near zero where acos of the trace does not.
        (0.5 * axis.norm()).atan2(0.5 * (r.trace() - 1.0))
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Parses a row-major 3×4 `[R|t]`, projecting R onto SO(3) when it is close.
    pub fn from_row_major(values: &[f64; 12]) -> std::result::Result<Self, String> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        let r = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9], values[10],
        );
        let t = Vector3::new(values[3], values[7], values[11]);
        let drift = (r.transpose() * r - Matrix3::identity()).amax();
        if drift > ORTHONORMAL_DRIFT_MAX {
            return Err(format!("rotation is not orthonormal (drift {drift:.3e})"));
        }
        if r.determinant() <= 0.0 {
            return Err("rotation has non-positive determinant".into());
        }
        Ok(Self::new(nearest_rotation(&r), t))
    }

    pub fn row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }
}

/// Nearest orthonormal matrix in the Frobenius sense (polar factor).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    u * v_t
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads a KITTI Velodyne `.bin` scan (x, y, z, intensity as LE f32); intensity is dropped.
pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<LabeledFrame> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    decode_point_cloud(&bytes).map_err(|e| match e {
        Error::Format { line, message, .. } => Error::format(path, line, message),
        other => other,
    })
}

pub(crate) fn decode_point_cloud(bytes: &[u8]) -> Result<LabeledFrame> {
    if bytes.len() % POINT_RECORD != 0 {
        return Err(Error::format(
            PathBuf::new(),
            None,
            format!("length {} is not a multiple of {POINT_RECORD}", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / POINT_RECORD);
    for (index, rec) in bytes.chunks_exact(POINT_RECORD).enumerate() {
        let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]);
        let (x, y, z) = (f(0), f(4), f(8));
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::Data {
                index,
                message: "non-finite coordinate".into(),
            });
        }
        points.push(Point3::new(x as f64, y as f64, z as f64));
    }
    Ok(LabeledFrame::new(0, points))
}

/// Encodes points as a KITTI `.bin` payload with zero intensity.
pub fn encode_point_cloud(points: &[Point3<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * POINT_RECORD);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a SemanticKITTI `.label` file; returns the semantic code of each record.
pub fn read_labels(path: impl AsRef<Path>, expected_count: usize) -> Result<Vec<ClassId>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.len() != expected_count * LABEL_RECORD {
        return Err(Error::format(
            path,
            None,
            format!(
                "{} bytes hold {} label records, expected {expected_count}",
                bytes.len(),
                bytes.len() as f64 / LABEL_RECORD as f64
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(LABEL_RECORD)
        .map(|r| (u32::from_le_bytes([r[0], r[1], r[2], r[3]]) & 0xFFFF) as ClassId)
        .collect())
}

pub fn encode_labels(labels: &[ClassId]) -> Vec<u8> {
    labels.iter().flat_map(|&l| (l as u32).to_le_bytes()).collect()
}

/// Reads a KITTI pose file: one row-major 3×4 matrix per non-empty line.
pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<PoseSE3>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text).map_err(|(line, message)| Error::format(path, Some(line), message))
}

fn parse_poses(text: &str) -> std::result::Result<Vec<PoseSE3>, (usize, String)> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let values = parse_twelve(line).map_err(|m| (lineno, m))?;
        poses.push(PoseSE3::from_row_major(&values).map_err(|m| (lineno, m))?);
    }
    Ok(poses)
}

fn parse_twelve(line: &str) -> std::result::Result<[f64; 12], String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 12 {
        return Err(format!("expected 12 values, found {}", tokens.len()));
    }
    let mut values = [0.0; 12];
    for (slot, tok) in values.iter_mut().zip(&tokens) {
        *slot = tok.parse().map_err(|_| format!("not a number: {tok:?}"))?;
    }
    Ok(values)
}

/// Writes poses in KITTI format. Values use shortest round-trip formatting, so
/// reading the file back reproduces every element exactly.
pub fn write_trajectory(poses: &[PoseSE3], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if poses.is_empty() {
        return Err(Error::Precondition("cannot write an empty trajectory".into()));
    }
    let mut out = String::with_capacity(poses.len() * 160);
    for pose in poses {
        let row = pose.row_major();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            // -0 would print as "-0"; normalise it.
            let v = if *v == 0.0 { 0.0 } else { *v };
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the `Tr:` (Velodyne to camera) entry of a KITTI `calib.txt`.
pub fn read_velo_to_cam(path: impl AsRef<Path>) -> Result<PoseSE3> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("Tr:") {
            let values = parse_twelve(rest).map_err(|m| Error::format(path, Some(i + 1), m))?;
            return PoseSE3::from_row_major(&values).map_err(|m| Error::format(path, Some(i + 1), m));
        }
    }
    Err(Error::format(path, None, "no Tr: entry"))
}

/// Supplies per-point semantic labels for a scan.
pub trait LabelSource: Send + Sync {
    fn labels(&self, frame_index: usize, expected_count: usize) -> Result<Vec<ClassId>>;
}

/// SemanticKITTI ground-truth labels: `<dir>/<index:06>.label`.
#[derive(Debug, Clone)]
pub struct DatasetLabels {
    pub dir: PathBuf,
}

impl LabelSource for DatasetLabels {
    fn labels(&self, frame_index: usize, expected_count: usize) -> Result<Vec<ClassId>> {
        read_labels(self.dir.join(format!("{frame_index:06}.label")), expected_count)
    }
}

/// Random-access provider of labeled scans.
pub trait FrameSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn frame(&self, index: usize) -> Result<LabeledFrame>;
}

/// A KITTI odometry sequence on disk:
/// `<root>/sequences/<seq>/velodyne/*.bin` plus a pluggable label source.
pub struct KittiSequence {
    pub sequence_dir: PathBuf,
    pub scan_paths: Vec<PathBuf>,
    pub labels: Box<dyn LabelSource>,
}

impl KittiSequence {
    /// Opens a sequence with dataset ground-truth labels from `<seq>/labels`.
    pub fn open(root: impl AsRef<Path>, sequence: &str) -> Result<Self> {
        let sequence_dir = root.as_ref().join("sequences").join(sequence);
        let labels = DatasetLabels {
            dir: sequence_dir.join("labels"),
        };
        Self::with_label_source(sequence_dir, Box::new(labels))
    }

    pub fn with_label_source(sequence_dir: PathBuf, labels: Box<dyn LabelSource>) -> Result<Self> {
        let velodyne = sequence_dir.join("velodyne");
        let entries = fs::read_dir(&velodyne).map_err(|e| Error::io(&velodyne, e))?;
        let mut scan_paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        scan_paths.sort();
        Ok(Self {
            sequence_dir,
            scan_paths,
            labels,
        })
    }

    /// Ground-truth poses from `<seq>/poses.txt` or `<root>/poses/<seq>.txt`, if present.
    pub fn ground_truth(&self) -> Option<Result<Vec<PoseSE3>>> {
        let local = self.sequence_dir.join("poses.txt");
        if local.exists() {
            return Some(read_poses(local));
        }
        let seq = self.sequence_dir.file_name()?.to_string_lossy().into_owned();
        let root = self.sequence_dir.parent()?.parent()?;
        let shared = root.join("poses").join(format!("{seq}.txt"));
        shared.exists().then(|| read_poses(shared))
    }

    pub fn velo_to_cam(&self) -> Option<Result<PoseSE3>> {
        let calib = self.sequence_dir.join("calib.txt");
        calib.exists().then(|| read_velo_to_cam(calib))
    }
}

impl FrameSource for KittiSequence {
    fn len(&self) -> usize {
        self.scan_paths.len()
    }

    fn frame(&self, index: usize) -> Result<LabeledFrame> {
        let path = self
            .scan_paths
            .get(index)
            .ok_or_else(|| Error::Precondition(format!("frame {index} out of range")))?;
        let mut frame = read_point_cloud(path)?;
        frame.frame_index = index;
        let labels = self.labels.labels(index, frame.len())?;
        frame.attach_labels(labels)?;
        Ok(frame)
    }
}

/// Frames held in memory.
#[derive(Debug, Clone, Default)]
pub struct InMemoryFrames {
    pub frames: Vec<LabeledFrame>,
}

impl FrameSource for InMemoryFrames {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&self, index: usize) -> Result<LabeledFrame> {
        self.frames
            .get(index)
            .cloned()
            .ok_or_else(|| Error::Precondition(format!("frame {index} out of range")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(bytes: &[u8]) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), bytes).unwrap();
        f
    }

    #[test]
    fn reads_two_point_scan() {
        // (1,0,0,0.5), (0,2,0,0.1) encoded by hand.
        let mut bytes = Vec::new();
        for v in [1.0f32, 0.0, 0.0, 0.5, 0.0, 2.0, 0.0, 0.1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes.len(), 32);
        let f = write_tmp(&bytes);
        let frame = read_point_cloud(f.path()).unwrap();
        assert_eq!(frame.points, vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 2.0, 0.0)]);
        assert!(frame.labels.is_none());
    }

    #[test]
    fn empty_scan_has_no_points() {
        let f = write_tmp(&[]);
        assert!(read_point_cloud(f.path()).unwrap().is_empty());
    }

    #[test]
    fn truncated_scan_is_format_error() {
        let f = write_tmp(&[0u8; 17]);
        assert!(matches!(read_point_cloud(f.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn nan_coordinate_reports_index() {
        let mut bytes = encode_point_cloud(&[Point3::origin(), Point3::origin()]);
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_point_cloud(&bytes) {
            Err(Error::Data { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_low_bits_are_semantic_class() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x0000_000Au32.to_le_bytes());
        bytes.extend_from_slice(&0x0005_0032u32.to_le_bytes());
        let f = write_tmp(&bytes);
        assert_eq!(read_labels(f.path(), 2).unwrap(), vec![10, 50]);
    }

    #[test]
    fn label_count_mismatch_is_format_error() {
        let f = write_tmp(&encode_labels(&[1, 2, 3]));
        assert!(matches!(read_labels(f.path(), 4), Err(Error::Format { .. })));
    }

    #[test]
    fn attach_labels_checks_cardinality() {
        let mut frame = LabeledFrame::new(0, vec![Point3::origin(); 3]);
        assert!(frame.attach_labels(vec![40, 50]).is_err());
        assert!(frame.attach_labels(vec![40, 50, 10]).is_ok());
    }

    #[test]
    fn parses_identity_and_translation_lines() {
        let poses = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 5 0 1 0 0 0 0 1 0\n").unwrap();
        assert_eq!(poses[0], PoseSE3::identity());
        assert_eq!(poses[1].rotation, Matrix3::identity());
        assert_eq!(poses[1].translation, Vector3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn short_pose_line_reports_line_number() {
        let err = parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n").unwrap_err();
        assert_eq!(err.0, 2);
    }

    #[test]
    fn slightly_drifted_rotation_is_projected() {
        let pose = PoseSE3::from_row_major(&[1.0004, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let err = (pose.rotation.transpose() * pose.rotation - Matrix3::identity()).amax();
        assert!(err < 1e-12);
        assert!(PoseSE3::from_row_major(&[1.1, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
        assert!(PoseSE3::from_row_major(&[-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn identity_trajectory_text() {
        let f = tempfile::NamedTempFile::new().unwrap();
        write_trajectory(&[PoseSE3::identity()], f.path()).unwrap();
        let text = fs::read_to_string(f.path()).unwrap();
        assert_eq!(text.trim(), "1 0 0 0 0 1 0 0 0 0 1 0");
    }

    #[test]
    fn empty_trajectory_is_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(matches!(write_trajectory(&[], f.path()), Err(Error::Precondition(_))));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let r = write_trajectory(&[PoseSE3::identity()], "/nonexistent-dir/x/traj.txt");
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = PoseSE3::from_yaw_pitch(0.7, -0.1, Vector3::new(3.0, -2.0, 0.5));
        let id = p.compose(&p.inverse());
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
        assert!((p.yaw() - 0.7).abs() < 1e-12);
    }
}
