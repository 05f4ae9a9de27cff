//! Multi-view depth-map shape completion.
//!
//! A partial point cloud is rendered into depth maps from cameras on the
//! corners of a cube, each map is completed by a U-Net generator that shares
//! a pooled shape descriptor across views, and the completed maps are fused
//! back into a point cloud by cross-view voting and radius outlier removal.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod kv;
pub mod metrics;
pub mod net;
pub mod shapes;

pub use error::{Error, Result};
pub use geometry::{CameraRig, DepthMap, PointCloud, Vec3};
