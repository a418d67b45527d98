use nalgebra::{Point3, Vector3};
use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::geometry::{Label, PointCloud};

/// Integer cell coordinates of a voxel, `floor(p / resolution)` per axis,
/// anchored at the world origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelKey {
    pub fn of(p: &Point3<f64>, resolution: f64) -> Self {
        Self {
            ix: (p.x / resolution).floor() as i64,
            iy: (p.y / resolution).floor() as i64,
            iz: (p.z / resolution).floor() as i64,
        }
    }
}

#[derive(Clone, Debug)]
struct Cell {
    sum: Vector3<f64>,
    min: Vector3<f64>,
    max: Vector3<f64>,
    count: u32,
    intensity_sum: f64,
    labels: SmallVec<[(Label, u32); 2]>,
}

impl Cell {
    fn new(p: &Point3<f64>) -> Self {
        Self {
            sum: Vector3::zeros(),
            min: p.coords,
            max: p.coords,
            count: 0,
            intensity_sum: 0.0,
            labels: SmallVec::new(),
        }
    }

    fn majority_label(&self) -> Label {
        // highest count wins, ties go to the smallest ID
        self.labels
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|&(l, _)| l)
            .unwrap_or_default()
    }
}

/// Streaming voxel-grid reducer.
///
/// Adding clouds one by one yields exactly the same result as downsampling
/// their concatenation: cells accumulate sums in insertion order and the
/// output is emitted in [`VoxelKey`] order.
#[derive(Clone, Debug)]
pub struct VoxelAccumulator {
    resolution: f64,
    cells: FxHashMap<VoxelKey, Cell>,
    channels: Option<(bool, bool)>,
}

impl VoxelAccumulator {
    pub fn new(resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::invalid(format!(
                "voxel resolution must be positive, got {resolution}"
            )));
        }
        Ok(Self {
            resolution,
            cells: FxHashMap::default(),
            channels: None,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Number of occupied voxels so far.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn add(&mut self, cloud: &PointCloud) -> Result<()> {
        if cloud.is_empty() {
            return Ok(());
        }
        let channels = (cloud.labels().is_some(), cloud.intensity().is_some());
        match self.channels {
            None => self.channels = Some(channels),
            Some(c) if c != channels => {
                return Err(Error::invalid(
                    "voxel accumulator received clouds with different channels",
                ))
            }
            Some(_) => {}
        }
        let labels = cloud.labels();
        let intensity = cloud.intensity();
        for (i, p) in cloud.points().iter().enumerate() {
            let cell = self
                .cells
                .entry(VoxelKey::of(p, self.resolution))
                .or_insert_with(|| Cell::new(p));
            cell.sum += p.coords;
            cell.min = cell.min.inf(&p.coords);
            cell.max = cell.max.sup(&p.coords);
            cell.count += 1;
            if let Some(v) = intensity {
                cell.intensity_sum += f64::from(v[i]);
            }
            if let Some(l) = labels {
                match cell.labels.iter_mut().find(|(id, _)| *id == l[i]) {
                    Some(entry) => entry.1 += 1,
                    None => cell.labels.push((l[i], 1)),
                }
            }
        }
        Ok(())
    }

    /// One point per occupied voxel at the centroid of its members, ordered
    /// by voxel key.
    pub fn finish(self) -> PointCloud {
        let (has_labels, has_intensity) = self.channels.unwrap_or((false, false));
        let mut cells: Vec<(VoxelKey, Cell)> = self.cells.into_iter().collect();
        cells.sort_unstable_by_key(|(k, _)| *k);

        let mut points = Vec::with_capacity(cells.len());
        let mut labels = has_labels.then(|| Vec::with_capacity(cells.len()));
        let mut intensity = has_intensity.then(|| Vec::with_capacity(cells.len()));
        for (key, cell) in &cells {
            let n = f64::from(cell.count);
            let mut c = cell.sum / n;
            // Rounding can push a centroid across the cell boundary; pull it
            // back inside the members' bounding box so the key is stable.
            if VoxelKey::of(&Point3::from(c), self.resolution) != *key {
                c = c.sup(&cell.min).inf(&cell.max);
            }
            points.push(Point3::from(c));
            if let Some(l) = labels.as_mut() {
                l.push(cell.majority_label());
            }
            if let Some(v) = intensity.as_mut() {
                v.push((cell.intensity_sum / n) as f32);
            }
        }
        PointCloud::from_parts(points, labels, intensity).expect("centroids of finite points are finite")
    }
}

/// Replaces the points of every occupied voxel by their centroid. Labels
/// become the voxel's majority label (smallest ID on ties); intensity is
/// averaged.
pub fn voxel_downsample(cloud: &PointCloud, resolution: f64) -> Result<PointCloud> {
    let mut acc = VoxelAccumulator::new(resolution)?;
    acc.add(cloud)?;
    Ok(acc.finish())
}
