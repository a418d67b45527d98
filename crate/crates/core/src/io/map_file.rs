//! Binary map files and ASCII PLY export.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     8  magic "COFIMAP\0"
//!      8     4  format version (u32)
//!     12     4  flags (u32), bit 0 = labels present
//!     16     8  voxel resolution, meters (f64)
//!     24     8  point count N (u64)
//!     32  12·N  x, y, z as f32
//!      …   4·N  label (u16) + 2 zero bytes, only when labeled
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose};
use crate::io::config::KeyValueConfig;
use crate::io::kitti::{read_poses, write_poses};
use crate::mapgen::{MapPair, MapStats};

pub const MAGIC: [u8; 8] = *b"COFIMAP\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
const FLAG_LABELS: u32 = 1;

/// Header of a map file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapFileHeader {
    pub version: u32,
    pub resolution: f64,
    pub count: u64,
    pub labeled: bool,
}

impl MapFileHeader {
    pub fn payload_len(&self) -> u64 {
        self.count * if self.labeled { 16 } else { 12 }
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..8].copy_from_slice(&MAGIC);
        out[8..12].copy_from_slice(&self.version.to_le_bytes());
        let flags = if self.labeled { FLAG_LABELS } else { 0 };
        out[12..16].copy_from_slice(&flags.to_le_bytes());
        out[16..24].copy_from_slice(&self.resolution.to_le_bytes());
        out[24..32].copy_from_slice(&self.count.to_le_bytes());
        out
    }
}

/// Encodes a map; coordinates are stored as `f32`.
pub fn encode_map(cloud: &PointCloud, resolution: f64) -> Vec<u8> {
    let header = MapFileHeader {
        version: FORMAT_VERSION,
        resolution,
        count: cloud.len() as u64,
        labeled: cloud.has_labels(),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + header.payload_len() as usize);
    out.extend_from_slice(&header.encode());
    for p in cloud.points() {
        for v in [p.x as f32, p.y as f32, p.z as f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(labels) = cloud.labels() {
        for &l in labels {
            out.extend_from_slice(&l.to_le_bytes());
            out.extend_from_slice(&[0, 0]);
        }
    }
    out
}

/// Decodes a map into `(cloud, header)`. Any size mismatch is an error; no
/// partial cloud is ever returned.
pub fn decode_map(path: &Path, bytes: &[u8]) -> Result<(PointCloud, MapFileHeader)> {
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(unsupported("bad magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("truncated header ({} bytes)", bytes.len())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != FORMAT_VERSION {
        return Err(unsupported(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let flags = u32_at(12);
    if flags & !FLAG_LABELS != 0 {
        return Err(unsupported(format!("unknown flags {flags:#x}")));
    }
    let header = MapFileHeader {
        version,
        resolution: f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")),
        count: u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes")),
        labeled: flags & FLAG_LABELS != 0,
    };
    let expected = header
        .count
        .checked_mul(if header.labeled { 16 } else { 12 })
        .and_then(|p| p.checked_add(HEADER_LEN as u64));
    if expected != Some(bytes.len() as u64) {
        return Err(corrupt(format!(
            "header declares {} points but file has {} bytes",
            header.count,
            bytes.len()
        )));
    }
    let n = header.count as usize;
    let xyz = &bytes[HEADER_LEN..HEADER_LEN + 12 * n];
    let points: Vec<Point3<f64>> = xyz
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f64::from(f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().expect("4 bytes")));
            Point3::new(f(0), f(1), f(2))
        })
        .collect();
    let labels = header.labeled.then(|| {
        bytes[HEADER_LEN + 12 * n..]
            .chunks_exact(4)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    });
    let cloud = PointCloud::from_parts(points, labels, None)?;
    Ok((cloud, header))
}

pub fn write_map(path: &Path, cloud: &PointCloud, resolution: f64) -> Result<()> {
    fs::write(path, encode_map(cloud, resolution)).map_err(|e| Error::io(path, e))
}

pub fn read_map(path: &Path) -> Result<(PointCloud, MapFileHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(path, &bytes)
}

/// File names of a persisted [`MapPair`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapPaths {
    pub feature: PathBuf,
    pub long_lasting: PathBuf,
    pub keyframes: PathBuf,
    pub stats: PathBuf,
}

impl MapPaths {
    pub fn from_prefix(prefix: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self {
            feature: with(".feature.cmap"),
            long_lasting: with(".longlasting.cmap"),
            keyframes: with(".keyframes.txt"),
            stats: with(".stats.txt"),
        }
    }
}

pub fn format_stats(stats: &MapStats) -> String {
    format!(
        "total_frames = {}\ntotal_raw_points = {}\nframe_fraction = {:e}\nfeature_fraction = {:e}\nlong_lasting_fraction = {:e}\n",
        stats.total_frames,
        stats.total_raw_points,
        stats.frame_fraction,
        stats.feature_fraction,
        stats.long_lasting_fraction
    )
}

pub fn parse_stats(path: &Path, text: &str) -> Result<MapStats> {
    let cfg = KeyValueConfig::parse(path, text)?;
    let get = |k: &str| {
        cfg.get_parsed::<f64>(k)?.ok_or_else(|| Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("missing key '{k}'"),
        })
    };
    Ok(MapStats {
        total_frames: get("total_frames")? as usize,
        total_raw_points: get("total_raw_points")? as u64,
        frame_fraction: get("frame_fraction")?,
        feature_fraction: get("feature_fraction")?,
        long_lasting_fraction: get("long_lasting_fraction")?,
    })
}

/// Writes `<prefix>.feature.cmap`, `<prefix>.longlasting.cmap`,
/// `<prefix>.keyframes.txt` and `<prefix>.stats.txt`.
pub fn write_map_pair(prefix: &Path, maps: &MapPair) -> Result<()> {
    let paths = MapPaths::from_prefix(prefix);
    if let Some(dir) = paths.feature.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_map(&paths.feature, &maps.feature_map, maps.voxel_resolution)?;
    write_map(&paths.long_lasting, &maps.long_lasting_map, maps.voxel_resolution)?;
    write_poses(&paths.keyframes, &maps.keyframe_poses)?;
    fs::write(&paths.stats, format_stats(&maps.stats)).map_err(|e| Error::io(&paths.stats, e))
}

pub fn read_map_pair(prefix: &Path) -> Result<MapPair> {
    let paths = MapPaths::from_prefix(prefix);
    let (feature_map, fh) = read_map(&paths.feature)?;
    let (long_lasting_map, lh) = read_map(&paths.long_lasting)?;
    if fh.resolution != lh.resolution {
        return Err(Error::CorruptFile {
            path: paths.long_lasting,
            reason: format!(
                "resolution {} differs from feature map's {}",
                lh.resolution, fh.resolution
            ),
        });
    }
    let keyframe_poses: Vec<Pose> = if paths.keyframes.exists() {
        read_poses(&paths.keyframes, None)?
    } else {
        Vec::new()
    };
    let stats = if paths.stats.exists() {
        let text = fs::read_to_string(&paths.stats).map_err(|e| Error::io(&paths.stats, e))?;
        parse_stats(&paths.stats, &text)?
    } else {
        MapStats::default()
    };
    Ok(MapPair {
        feature_map,
        long_lasting_map,
        voxel_resolution: fh.resolution,
        keyframe_poses,
        stats,
    })
}

/// ASCII PLY with `x y z` and, when present, a `label` property.
pub fn ply_string(cloud: &PointCloud) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.has_labels() {
        out.push_str("property ushort label\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x as f32, p.y as f32, p.z as f32);
        if let Some(labels) = cloud.labels() {
            let _ = write!(out, " {}", labels[i]);
        }
        out.push('\n');
    }
    out
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, ply_string(cloud)).map_err(|e| Error::io(path, e))
}
