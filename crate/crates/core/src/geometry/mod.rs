//! Points, rigid transforms, voxel-grid downsampling and range-image
//! organization of raw scans.

mod cloud;
mod pose;
mod range_image;
mod voxel;

pub use cloud::{Label, PointCloud};
pub use pose::{nearest_rotation, orthonormality_error, rotation_angle, Pose, ROTATION_TOLERANCE};
pub use range_image::{organize, OrganizedIndex, RangeImageConfig, MIN_RANGE};
pub use voxel::{voxel_downsample, VoxelAccumulator, VoxelKey};
