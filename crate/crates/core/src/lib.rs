//! Depth-based 3D human pose estimation.
//!
//! 2D landmark detections are lifted to 3D with a depth image and camera
//! intrinsics, missing landmarks are recovered from a pairwise limb prior,
//! and a small residual network refines the lifted pose.

pub mod cli;
pub mod data;
pub mod error;
pub mod lifting;
pub mod metrics;
pub mod nn;
pub mod regressor;
pub mod skeleton;

pub use error::{Error, Result};
pub use skeleton::SkeletonModel;
