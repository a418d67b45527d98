//! KITTI odometry and SemanticKITTI file formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::{Label, PointCloud, Pose};

const SCAN_RECORD: usize = 16;
const LABEL_RECORD: usize = 4;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Velodyne scan: little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn read_scan(path: &Path) -> Result<PointCloud> {
    let bytes = read_bytes(path)?;
    parse_scan(&bytes).map_err(|reason| corrupt(path, reason))
}

pub fn parse_scan(bytes: &[u8]) -> std::result::Result<PointCloud, String> {
    if bytes.len() % SCAN_RECORD != 0 {
        return Err(format!("size {} is not a multiple of {SCAN_RECORD} bytes", bytes.len()));
    }
    let n = bytes.len() / SCAN_RECORD;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(SCAN_RECORD) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4 bytes"));
        points.push(Point3::new(f64::from(f(0)), f64::from(f(1)), f64::from(f(2))));
        intensity.push(f(3));
    }
    PointCloud::from_parts(points, None, Some(intensity)).map_err(|e| e.to_string())
}

pub fn encode_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * SCAN_RECORD);
    for (i, p) in cloud.points().iter().enumerate() {
        let intensity = cloud.intensity().map_or(0.0, |v| v[i]);
        for v in [p.x as f32, p.y as f32, p.z as f32, intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_scan(cloud)).map_err(|e| Error::io(path, e))
}

/// SemanticKITTI labels: little-endian `u32`, semantic class in the low 16
/// bits, instance ID (discarded) in the high 16 bits.
pub fn read_labels(path: &Path, expected_count: usize) -> Result<Vec<Label>> {
    let bytes = read_bytes(path)?;
    if bytes.len() % LABEL_RECORD != 0 {
        return Err(corrupt(
            path,
            format!("size {} is not a multiple of 4 bytes", bytes.len()),
        ));
    }
    let labels: Vec<Label> = bytes
        .chunks_exact(LABEL_RECORD)
        .map(|c| (u32::from_le_bytes(c.try_into().expect("4 bytes")) & 0xFFFF) as Label)
        .collect();
    if labels.len() != expected_count {
        return Err(corrupt(
            path,
            format!("{} labels for a scan of {expected_count} points", labels.len()),
        ));
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[Label]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().flat_map(|&l| u32::from(l).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_twelve(path: &Path, line_no: usize, fields: &[&str]) -> Result<[f64; 12]> {
    if fields.len() != 12 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected 12 values, found {}", fields.len()),
        });
    }
    let mut values = [0.0; 12];
    for (v, s) in values.iter_mut().zip(fields) {
        *v = s.parse().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("bad number '{s}': {e}"),
        })?;
    }
    Ok(values)
}

/// Row-major 3x4 poses, one per line. With `calibration` (the LiDAR→camera
/// transform `Tr`), camera-frame poses are converted to LiDAR-frame poses
/// `Tr⁻¹ · T · Tr`.
pub fn read_poses(path: &Path, calibration: Option<&Pose>) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(path, &text, calibration)
}

pub fn parse_poses(path: &Path, text: &str, calibration: Option<&Pose>) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let values = parse_twelve(path, n + 1, &fields)?;
        let pose = Pose::from_row_major(&values).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        poses.push(match calibration {
            Some(tr) => camera_to_lidar(&pose, tr),
            None => pose,
        });
    }
    Ok(poses)
}

pub fn camera_to_lidar(pose: &Pose, tr: &Pose) -> Pose {
    tr.inverse().compose(pose).compose(tr)
}

pub fn lidar_to_camera(pose: &Pose, tr: &Pose) -> Pose {
    tr.compose(pose).compose(&tr.inverse())
}

/// One pose per line; values in scientific notation with 9 fractional digits.
pub fn format_pose_line(pose: &Pose) -> String {
    pose.to_row_major()
        .iter()
        .map(|v| format!("{:.9e}", v + 0.0))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut text = String::new();
    for p in poses {
        let _ = writeln!(text, "{}", format_pose_line(p));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The `Tr:` entry of a KITTI `calib.txt`.
pub fn read_calibration(path: &Path) -> Result<Pose> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (n, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim_start().strip_prefix("Tr:") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            let values = parse_twelve(path, n + 1, &fields)?;
            return Pose::from_row_major(&values).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            });
        }
    }
    Err(corrupt(path, "no 'Tr:' line"))
}

pub fn write_calibration(path: &Path, tr: &Pose) -> Result<()> {
    let text = format!("Tr: {}\n", format_pose_line(tr));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
