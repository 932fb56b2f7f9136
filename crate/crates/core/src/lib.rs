//! Full-body pose estimation from three tracked VR sensors (head and both
//! hands) with a body pose graph network.
//!
//! The pipeline runs sensor windows through a feature-initialization stage
//! (dual interactive feature integration, two temporal pyramids and a
//! spatial split), assigns one feature vector per joint, refines those with
//! graph convolutions over a learned adjacency, and decodes per-joint
//! rotations that forward kinematics turns into positions.

pub mod autograd;
pub mod bpgnet;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod featinit;
pub mod learning;
pub mod params;
pub mod rotmath;
pub mod sensorio;
pub mod skeleton;

pub use bpgnet::{AdjacencySet, BpgModel, OnlinePredictor};
pub use config::{ModelConfig, RunConfig, TrainConfig};
pub use error::{BpgError, Result};
pub use featinit::{NodeFeatureSet, SensorFeatureBlock};
pub use params::{ParamGrads, ParamStore};
pub use rotmath::{AxisAngle, RotMatrix, SixD};
pub use sensorio::{MotionFrame, MotionSequence, SensorFrame, SensorWindow, SynthKind};
pub use skeleton::{PoseEstimate, SkeletonModel, NUM_JOINTS};
pub use checkpoint::Checkpoint;
pub use learning::{LossBreakdown, MetricReport};
