//! Multi-camera 3D object detection with depth-guided object queries.
//!
//! Queries are seeded from 2D detections lifted through a depth map,
//! fused with motion-aligned queries from past frames by a hybrid-attention
//! transformer decoder, and scored with a center-distance AP metric. A
//! deterministic synthetic world stands in for the learned depth, 2D
//! detection and backbone networks.
//!
//! The math modules are generic over [`Real`] (`f32` or `f64`); the
//! simulator and pipeline run in `f64`. Aliases for the `f64`
//! instantiations live at the crate root.

pub mod decoder;
pub mod encoding;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod netcore;
pub mod pipeline;
pub mod querygen;
pub mod scalar;
pub mod simworld;
pub mod temporal;

pub use scalar::Real;

pub type Camera = geometry::CameraModel<f64>;
pub type Pose = geometry::EgoPose<f64>;
pub type Point = geometry::Point3<f64>;
pub type Roi = geometry::RoiBounds<f64>;
pub type Query64 = querygen::Query<f64>;
pub type Detections = decoder::DetectionSet<f64>;
pub type GroundTruth = matching::GtBox<f64>;
