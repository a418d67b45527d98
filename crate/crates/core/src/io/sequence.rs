use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose};
use crate::io::kitti::{read_calibration, read_labels, read_poses, read_scan};

/// Name of the optional per-sequence settings file.
pub const SEQUENCE_CONFIG: &str = "cofi.cfg";

/// A KITTI-style sequence directory:
///
/// ```text
/// <dir>/velodyne/*.bin
/// <dir>/labels/*.label   (optional)
/// <dir>/poses.txt
/// <dir>/calib.txt        (optional)
/// ```
///
/// Frame order is the lexicographic order of the scan file names.
#[derive(Clone, Debug)]
pub struct SequenceSource {
    pub scan_dir: PathBuf,
    pub label_dir: Option<PathBuf>,
    pub pose_file: PathBuf,
    pub calibration_file: Option<PathBuf>,
    scans: Vec<PathBuf>,
    labels: Option<Vec<PathBuf>>,
}

fn list_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

impl SequenceSource {
    pub fn open(dir: &Path) -> Result<Self> {
        let label_dir = dir.join("labels");
        let calib = dir.join("calib.txt");
        Self::new(
            dir.join("velodyne"),
            label_dir.is_dir().then_some(label_dir),
            dir.join("poses.txt"),
            calib.is_file().then_some(calib),
        )
    }

    pub fn new(
        scan_dir: PathBuf,
        label_dir: Option<PathBuf>,
        pose_file: PathBuf,
        calibration_file: Option<PathBuf>,
    ) -> Result<Self> {
        let scans = list_with_extension(&scan_dir, "bin")?;
        let labels = match &label_dir {
            Some(d) => {
                let labels = list_with_extension(d, "label")?;
                if labels.len() != scans.len() {
                    return Err(Error::invalid(format!(
                        "{} label files for {} scans in {}",
                        labels.len(),
                        scans.len(),
                        d.display()
                    )));
                }
                for (s, l) in scans.iter().zip(&labels) {
                    if s.file_stem() != l.file_stem() {
                        return Err(Error::invalid(format!(
                            "label file {} does not match scan {}",
                            l.display(),
                            s.display()
                        )));
                    }
                }
                Some(labels)
            }
            None => None,
        };
        Ok(Self {
            scan_dir,
            label_dir,
            pose_file,
            calibration_file,
            scans,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn scan_paths(&self) -> &[PathBuf] {
        &self.scans
    }

    /// Scan `index` with its labels attached when the sequence has labels.
    pub fn load_frame(&self, index: usize) -> Result<PointCloud> {
        let path = self
            .scans
            .get(index)
            .ok_or_else(|| Error::invalid(format!("frame {index} out of range ({} frames)", self.scans.len())))?;
        let cloud = read_scan(path)?;
        match &self.labels {
            Some(labels) => {
                let l = read_labels(&labels[index], cloud.len())?;
                cloud.with_labels(l)
            }
            None => Ok(cloud),
        }
    }

    pub fn calibration(&self) -> Result<Option<Pose>> {
        self.calibration_file.as_deref().map(read_calibration).transpose()
    }

    /// LiDAR-frame poses, one per scan.
    pub fn load_poses(&self) -> Result<Vec<Pose>> {
        let calib = self.calibration()?;
        let poses = read_poses(&self.pose_file, calib.as_ref())?;
        if poses.len() != self.scans.len() {
            return Err(Error::invalid(format!(
                "{} poses for {} scans",
                poses.len(),
                self.scans.len()
            )));
        }
        Ok(poses)
    }

    /// Total number of points over all scans, from the file sizes.
    pub fn raw_point_count(&self) -> Result<u64> {
        let mut total = 0u64;
        for path in &self.scans {
            let size = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
            if size % 16 != 0 {
                return Err(Error::CorruptFile {
                    path: path.clone(),
                    reason: format!("size {size} is not a multiple of 16 bytes"),
                });
            }
            total += size / 16;
        }
        Ok(total)
    }
}
