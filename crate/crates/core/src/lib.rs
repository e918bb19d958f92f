//! Semantic, dynamics-aware LiDAR odometry and mapping.

pub mod dataio;
pub mod error;
pub mod geometry;
pub mod loop_closure;
pub mod mapping;
pub mod pipeline;
pub mod pose_estimation;
pub mod segmentation;
pub mod semantic;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
