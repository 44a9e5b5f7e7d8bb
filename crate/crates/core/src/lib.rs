//! Bird's-eye-view vehicle detection from an eight-camera 3x3 mosaic.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: a small float64 tensor with reverse-mode gradients and a
//!   finite-difference checker.
//! - [`geometry`]: oriented boxes, axis-aligned IoU, NMS and matching.
//! - [`dataset`]: mosaic assembly, the synthetic scene generator and the
//!   on-disk dataset layout.
//! - [`model`]: strided conv backbone, the per-scale detection head and
//!   grid-compensated decoding.
//! - [`loss`], [`optim`], [`trainer`]: the training stack.
//! - [`eval`], [`render`]: inference, metrics and BEV drawing.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod numcore;
pub mod optim;
pub mod render;
pub mod trainer;

pub use dataset::{Frame, GroundTruthFrame, MosaicFrame, SceneSpec};
pub use error::{Error, Result};
pub use eval::MetricsReport;
pub use geometry::{Aabb, Detection, OrientedBox};
pub use loss::{LossBreakdown, LossConfig};
pub use model::{BackboneConfig, Grid, HeadConfig, Model, ModelConfig};
pub use numcore::Tensor;
pub use optim::AdamState;
pub use trainer::{RunLog, TrainConfig};
