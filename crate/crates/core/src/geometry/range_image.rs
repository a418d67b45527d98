use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Points closer than this to the sensor origin have undefined angles and
/// are left out of the range image.
pub const MIN_RANGE: f64 = 1e-6;

/// Geometry of a rotating-LiDAR range image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeImageConfig {
    pub rows: usize,
    pub cols: usize,
    /// Lower edge of the vertical field of view, degrees.
    pub fov_down_deg: f64,
    /// Upper edge of the vertical field of view, degrees.
    pub fov_up_deg: f64,
}

impl Default for RangeImageConfig {
    /// HDL-64E as mounted on the KITTI car.
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 2048,
            fov_down_deg: -24.9,
            fov_up_deg: 2.0,
        }
    }
}

impl RangeImageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::invalid(format!(
                "range image needs at least 2 rows and 2 columns, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.fov_up_deg > self.fov_down_deg) || !self.fov_up_deg.is_finite() || !self.fov_down_deg.is_finite() {
            return Err(Error::invalid(format!(
                "invalid vertical field of view [{}, {}]",
                self.fov_down_deg, self.fov_up_deg
            )));
        }
        Ok(())
    }

    fn row_height(&self) -> f64 {
        (self.fov_up_deg - self.fov_down_deg).to_radians() / self.rows as f64
    }

    /// Elevation (radians) at the center of `row`.
    pub fn row_elevation(&self, row: usize) -> f64 {
        self.fov_down_deg.to_radians() + (row as f64 + 0.5) * self.row_height()
    }

    /// Azimuth (radians, in `[-π, π)`) at the center of `col`.
    pub fn col_azimuth(&self, col: usize) -> f64 {
        -PI + (col as f64 + 0.5) * 2.0 * PI / self.cols as f64
    }

    /// Row bin of an elevation angle; elevations outside the field of view
    /// are clamped into the first or last row.
    pub fn row_of(&self, elevation: f64) -> usize {
        let bin = ((elevation - self.fov_down_deg.to_radians()) / self.row_height()).floor();
        bin.clamp(0.0, (self.rows - 1) as f64) as usize
    }

    /// Column bin of an azimuth angle in `[-π, π]`.
    pub fn col_of(&self, azimuth: f64) -> usize {
        let bin = (self.cols as f64 * ((azimuth + PI) / (2.0 * PI))).floor() as i64;
        bin.rem_euclid(self.cols as i64) as usize
    }
}

/// Row/column index over a scan. Each cell holds at most one point index:
/// the nearest-range point that fell into it.
#[derive(Clone, Debug, PartialEq)]
pub struct OrganizedIndex {
    rows: usize,
    cols: usize,
    source_len: usize,
    cells: Vec<Option<u32>>,
}

impl OrganizedIndex {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of points in the cloud this index was built from.
    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn get(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.rows || col >= self.cols {
            return None;
        }
        self.cells[row * self.cols + col].map(|i| i as usize)
    }

    /// Cell at `col` shifted by `offset` columns, wrapping around the 360° seam.
    pub fn get_wrapped(&self, row: usize, col: usize, offset: isize) -> Option<usize> {
        let c = (col as isize + offset).rem_euclid(self.cols as isize) as usize;
        self.get(row, c)
    }

    /// `(row, col, point index)` of every occupied cell, row-major.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(k, c)| c.map(|i| (k / self.cols, k % self.cols, i as usize)))
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Bins every point of `cloud` by elevation `asin(z/‖p‖)` into rows and by
/// azimuth `atan2(y, x)` into columns.
pub fn organize(cloud: &PointCloud, config: &RangeImageConfig) -> Result<OrganizedIndex> {
    config.validate()?;
    if cloud.len() > u32::MAX as usize {
        return Err(Error::invalid("cloud too large to organize"));
    }
    let n_cells = config.rows * config.cols;
    let mut cells: Vec<Option<u32>> = vec![None; n_cells];
    let mut ranges = vec![f64::INFINITY; n_cells];
    for (i, p) in cloud.points().iter().enumerate() {
        let range = p.coords.norm();
        if range < MIN_RANGE {
            continue;
        }
        let elevation = (p.z / range).clamp(-1.0, 1.0).asin();
        let row = config.row_of(elevation);
        let col = config.col_of(p.y.atan2(p.x));
        let k = row * config.cols + col;
        if range < ranges[k] {
            ranges[k] = range;
            cells[k] = Some(i as u32);
        }
    }
    Ok(OrganizedIndex {
        rows: config.rows,
        cols: config.cols,
        source_len: cloud.len(),
        cells,
    })
}
