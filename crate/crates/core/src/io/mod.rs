//! File formats and sequence access.

pub mod config;
pub mod kitti;
pub mod map_file;
pub mod sequence;

pub use config::KeyValueConfig;
pub use kitti::{
    camera_to_lidar, format_pose_line, lidar_to_camera, read_calibration, read_labels, read_poses, read_scan,
    write_calibration, write_labels, write_poses, write_scan,
};
pub use map_file::{read_map, read_map_pair, write_map, write_map_pair, write_ply, MapFileHeader, MapPaths};
pub use sequence::{SequenceSource, SEQUENCE_CONFIG};
