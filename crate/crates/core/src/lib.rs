//! Coarse-to-fine ICP registration and semantic map-based LiDAR localization.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: point clouds, SE(3) poses, voxel grids, range images.
//! - [`registration`]: exact nearest-neighbour search, closed-form rigid
//!   alignment, ICP and the coarse-to-fine ICP ladder with pose gating.
//! - [`mapgen`]: semantic filtering, feature extraction and construction of
//!   the feature-point and long-lasting maps.
//! - [`localization`]: the four-step map-based localizer.
//! - [`evaluation`]: KITTI relative errors and absolute translation error.
//! - [`io`]: KITTI scan/label/pose readers, the map file format, config files.
//! - [`synth`]: ray-cast synthetic urban scenes with known ground truth.

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod localization;
pub mod mapgen;
pub mod registration;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Label, PointCloud, Pose};
