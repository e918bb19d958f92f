//! Run configuration and its flat `key = value` file format.
//!
//! The file is TOML restricted to dotted keys, e.g.
//!
//! ```toml
//! segmentation.eps.small = 0.5
//! pso.swarm_size = 50
//! vertical.front_region = [2.0, 12.0, 3.0]
//! tracking.v_max.car = 0.8
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use toml::Value;

use crate::error::{Error, Result};
use crate::loop_closure::LoopConfig;
use crate::mapping::DEFAULT_VOXEL_SIZE;
use crate::pose_estimation::{GroundRegion, InputMode, PreliminaryConfig, PsoConfig, SubmapConfig, VerticalConfig};
use crate::segmentation::SegmentationConfig;
use crate::semantic::{self, ClassId, SizeGroup};
use crate::tracking::{MotionThresholds, TrackingConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub sequence: String,
    /// Directory of `.label` files; defaults to `<sequence>/labels`.
    pub label_dir: Option<PathBuf>,
    pub loop_closure: bool,
    pub export_map: bool,
    pub seed: u64,
    /// Tracking and scan-to-submap refinement; off leaves the scan-to-scan estimate.
    pub precise: bool,
    pub segmentation: SegmentationConfig,
    pub pso: PsoConfig,
    pub prelim: PreliminaryConfig,
    pub submap: SubmapConfig,
    pub vertical: VerticalConfig,
    pub tracking: TrackingConfig,
    pub loop_cfg: LoopConfig,
    pub voxel_size: f64,
    /// Yaw error added to every estimated frame-to-frame motion, radians.
    pub yaw_bias: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            sequence: "00".into(),
            label_dir: None,
            loop_closure: true,
            export_map: false,
            seed: 0,
            precise: true,
            segmentation: SegmentationConfig::default(),
            pso: PsoConfig::default(),
            prelim: PreliminaryConfig::default(),
            submap: SubmapConfig::default(),
            vertical: VerticalConfig::default(),
            tracking: TrackingConfig::default(),
            loop_cfg: LoopConfig::default(),
            voxel_size: DEFAULT_VOXEL_SIZE,
            yaw_bias: 0.0,
        }
    }
}

impl RunConfig {
    /// The scan-to-scan, all-landmark configuration used as an ablation baseline.
    pub fn preliminary_only(&self) -> Self {
        Self {
            precise: false,
            prelim: PreliminaryConfig {
                force_mode: Some(InputMode::AllLandmarks),
                ..self.prelim.clone()
            },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pso.validate()?;
        self.loop_cfg.validate()?;
        for g in [SizeGroup::Small, SizeGroup::Medium, SizeGroup::Large] {
            self.segmentation.params_for_group(g).validate()?;
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::Config("mapping.voxel_size must be positive".into()));
        }
        let t = &self.tracking;
        let sigmas = [t.measurement_sigma, t.process_sigma_vehicle, t.process_sigma_pedestrian];
        if sigmas.iter().chain(t.process_sigma_overrides.values()).any(|s| !(*s > 0.0)) {
            return Err(Error::Config("tracking noise sigmas must be positive".into()));
        }
        let thresholds = [t.vehicle, t.pedestrian];
        if thresholds
            .iter()
            .chain(t.threshold_overrides.values())
            .any(|m| !(m.v_max > 0.0 && m.d_max > 0.0))
        {
            return Err(Error::Config("tracking thresholds must be positive".into()));
        }
        if let Some(dir) = &self.dataset {
            if !dir.exists() {
                return Err(Error::Config(format!("dataset root {} does not exist", dir.display())));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_str(&text)?;
        Ok(cfg)
    }

    /// Applies every key of a config text on top of the current values.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &Value::Table(table), &mut flat);
        let mut per_class: HashMap<ClassId, (Option<f64>, Option<f64>)> = HashMap::new();
        for (key, value) in &flat {
            self.apply_key(key, value, &mut per_class)?;
        }
        for (class_id, (v, d)) in per_class {
            let base = self.tracking.thresholds(class_id);
            self.tracking.threshold_overrides.insert(
                class_id,
                MotionThresholds {
                    v_max: v.unwrap_or(base.v_max),
                    d_max: d.unwrap_or(base.d_max),
                },
            );
        }
        self.validate()
    }

    fn apply_key(&mut self, key: &str, v: &Value, per_class: &mut HashMap<ClassId, (Option<f64>, Option<f64>)>) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["segmentation", "eps", g] => self.segmentation.params_for_group_mut(size_group(g)?).eps = float(key, v)?,
            ["segmentation", "min_pts", g] => self.segmentation.params_for_group_mut(size_group(g)?).min_pts = count(key, v)?,
            ["segmentation", "max_range_m"] => self.segmentation.max_range_m = float(key, v)?,

            ["pso", "swarm_size"] => self.pso.swarm_size = count(key, v)?,
            ["pso", "max_iterations"] => self.pso.max_iterations = count(key, v)?,
            ["pso", "inertia_start"] => self.pso.inertia_start = float(key, v)?,
            ["pso", "inertia_end"] => self.pso.inertia_end = float(key, v)?,
            ["pso", "c1"] => self.pso.c1 = float(key, v)?,
            ["pso", "c2"] => self.pso.c2 = float(key, v)?,
            ["pso", "bound_xy_m"] => {
                let b = float(key, v)?;
                self.pso.bounds[0] = b;
                self.pso.bounds[1] = b;
            }
            ["pso", "bound_theta_deg"] => self.pso.bounds[2] = float(key, v)?.to_radians(),

            ["prelim", "n_min"] => self.prelim.n_min = count(key, v)?,
            ["prelim", "mode"] => {
                self.prelim.force_mode = match string(key, v)? {
                    "auto" => None,
                    "static" => Some(InputMode::StaticOnly),
                    "all" => Some(InputMode::AllLandmarks),
                    other => return Err(Error::Config(format!("{key}: unknown mode '{other}'"))),
                }
            }

            ["precise", "enabled"] => self.precise = boolean(key, v)?,
            ["precise", "window"] => self.submap.window = count(key, v)?,
            ["precise", "max_points"] => self.submap.max_points = count(key, v)?,
            ["precise", "merge_gate_m"] => self.submap.merge_gate_m = float(key, v)?,
            ["precise", "bound_scale"] => self.submap.bound_scale = float(key, v)?,

            ["vertical", "front_region"] => self.vertical.front = region(key, v)?,
            ["vertical", "rear_region"] => self.vertical.rear = region(key, v)?,
            ["vertical", "trim_sigma"] => self.vertical.trim_sigma = float(key, v)?,
            ["vertical", "trim_rounds"] => self.vertical.trim_rounds = count(key, v)?,
            ["vertical", "min_points"] => self.vertical.min_points = count(key, v)?,

            ["tracking", "gate_m"] => self.tracking.gate_m = float(key, v)?,
            ["tracking", "max_misses"] => self.tracking.max_misses = count(key, v)?,
            ["tracking", "stable_after"] => self.tracking.stable_after = count(key, v)?,
            ["tracking", "measurement_sigma"] => self.tracking.measurement_sigma = float(key, v)?,
            ["tracking", "process_sigma", "vehicle"] => self.tracking.process_sigma_vehicle = float(key, v)?,
            ["tracking", "process_sigma", "pedestrian"] => self.tracking.process_sigma_pedestrian = float(key, v)?,
            ["tracking", "process_sigma", c] => {
                let c = class_by_name(c)?;
                self.tracking.process_sigma_overrides.insert(c, float(key, v)?);
            }
            ["tracking", "v_max", "vehicle"] => self.tracking.vehicle.v_max = float(key, v)?,
            ["tracking", "v_max", "pedestrian"] => self.tracking.pedestrian.v_max = float(key, v)?,
            ["tracking", "d_max", "vehicle"] => self.tracking.vehicle.d_max = float(key, v)?,
            ["tracking", "d_max", "pedestrian"] => self.tracking.pedestrian.d_max = float(key, v)?,
            ["tracking", "v_max", c] => per_class.entry(class_by_name(c)?).or_default().0 = Some(float(key, v)?),
            ["tracking", "d_max", c] => per_class.entry(class_by_name(c)?).or_default().1 = Some(float(key, v)?),

            ["loop", "enabled"] => self.loop_closure = boolean(key, v)?,
            ["loop", "keyframe_every"] => self.loop_cfg.keyframe_every = count(key, v)?,
            ["loop", "sim_threshold"] => self.loop_cfg.sim_threshold = float(key, v)?,
            ["loop", "min_separation"] => self.loop_cfg.min_separation = count(key, v)?,
            ["loop", "min_pairs"] => self.loop_cfg.min_pairs = count(key, v)?,
            ["loop", "overlap_ratio"] => self.loop_cfg.overlap_ratio = float(key, v)?,
            ["loop", "top_k"] => self.loop_cfg.top_k = count(key, v)?,
            ["loop", "bins"] => self.loop_cfg.bins = count(key, v)?,
            ["loop", "bin_width_m"] => self.loop_cfg.bin_width_m = float(key, v)?,
            ["loop", "min_static"] => self.loop_cfg.min_static = count(key, v)?,
            ["loop", "correction_cooldown"] => self.loop_cfg.correction_cooldown = count(key, v)?,

            ["mapping", "voxel_size"] => self.voxel_size = float(key, v)?,
            ["mapping", "export"] => self.export_map = boolean(key, v)?,

            ["run", "seed"] => self.seed = count(key, v)? as u64,
            ["run", "label_dir"] => self.label_dir = Some(PathBuf::from(string(key, v)?)),
            ["odometry", "yaw_bias_deg"] => self.yaw_bias = float(key, v)?.to_radians(),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn float(key: &str, v: &Value) -> Result<f64> {
    let x = match v {
        Value::Float(f) => *f,
        Value::Integer(i) => *i as f64,
        _ => return Err(Error::Config(format!("{key}: expected a number"))),
    };
    if !x.is_finite() {
        return Err(Error::Config(format!("{key}: must be finite")));
    }
    Ok(x)
}

fn count(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(Error::Config(format!("{key}: expected a non-negative integer"))),
    }
}

fn boolean(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| Error::Config(format!("{key}: expected true or false")))
}

fn string<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::Config(format!("{key}: expected a string")))
}

fn region(key: &str, v: &Value) -> Result<GroundRegion> {
    let arr = v.as_array().ok_or_else(|| Error::Config(format!("{key}: expected [x_min, x_max, y_abs_max]")))?;
    let vals = arr.iter().map(|x| float(key, x)).collect::<Result<Vec<f64>>>()?;
    match vals.as_slice() {
        [x_min, x_max, y] if x_min < x_max && *y > 0.0 => Ok(GroundRegion {
            x_min: *x_min,
            x_max: *x_max,
            y_abs_max: *y,
        }),
        _ => Err(Error::Config(format!("{key}: expected [x_min, x_max, y_abs_max] with x_min < x_max"))),
    }
}

fn size_group(name: &str) -> Result<SizeGroup> {
    match name {
        "small" => Ok(SizeGroup::Small),
        "medium" => Ok(SizeGroup::Medium),
        "large" => Ok(SizeGroup::Large),
        other => Err(Error::Config(format!("unknown size group '{other}'"))),
    }
}

fn class_by_name(name: &str) -> Result<ClassId> {
    (0..=259u16)
        .find(|c| semantic::canonical(*c) == *c && semantic::name(*c) == name && semantic::is_unknown_motion(*c))
        .ok_or_else(|| Error::Config(format!("'{name}' is not a trackable class")))
}
