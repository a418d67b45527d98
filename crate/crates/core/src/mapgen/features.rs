use crate::error::{Error, Result};
use crate::geometry::{organize, OrganizedIndex, PointCloud, RangeImageConfig};
use crate::mapgen::SemanticPolicy;

/// Points whose label belongs to a long-lasting category, in input order.
pub fn filter_long_lasting(cloud: &PointCloud, policy: &SemanticPolicy) -> Result<PointCloud> {
    let labels = cloud.require_labels("long-lasting filtering")?;
    Ok(cloud.filter(|i| policy.is_long_lasting(labels[i])))
}

/// Points of stick-like categories (poles, signs), in input order.
pub fn extract_stick_points(cloud: &PointCloud, policy: &SemanticPolicy) -> Result<PointCloud> {
    let labels = cloud.require_labels("stick extraction")?;
    Ok(cloud.filter(|i| policy.is_stick(labels[i])))
}

/// Interior angle in degrees at `center` between the two neighbours, or
/// `None` when a neighbour coincides with the center.
fn interior_angle(
    prev: &nalgebra::Point3<f64>,
    center: &nalgebra::Point3<f64>,
    next: &nalgebra::Point3<f64>,
) -> Option<f64> {
    let a = prev - center;
    let b = next - center;
    let norms = a.norm() * b.norm();
    if norms == 0.0 {
        return None;
    }
    Some((a.dot(&b) / norms).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Indices (ascending) of building points that sit on a vertical edge.
///
/// A building point qualifies when both its left and right neighbours in the
/// same range-image row (columns wrap around at 360°) exist, are building
/// points too, and the angle they form at the point is below
/// `angle_threshold` degrees.
pub fn building_edge_indices(
    cloud: &PointCloud,
    organized: &OrganizedIndex,
    policy: &SemanticPolicy,
    angle_threshold: f64,
) -> Result<Vec<usize>> {
    let labels = cloud.require_labels("building edge extraction")?;
    if organized.source_len() != cloud.len() {
        return Err(Error::invalid(format!(
            "organized index was built from {} points, cloud has {}",
            organized.source_len(),
            cloud.len()
        )));
    }
    if !(angle_threshold > 0.0 && angle_threshold < 180.0) {
        return Err(Error::invalid(format!(
            "edge angle threshold must lie in (0, 180) degrees, got {angle_threshold}"
        )));
    }
    let points = cloud.points();
    let is_building = |i: usize| policy.is_building(labels[i]);
    let mut out = Vec::new();
    for (row, col, i) in organized.occupied() {
        if !is_building(i) {
            continue;
        }
        let (Some(left), Some(right)) = (organized.get_wrapped(row, col, -1), organized.get_wrapped(row, col, 1))
        else {
            continue;
        };
        if !(is_building(left) && is_building(right)) {
            continue;
        }
        if let Some(angle) = interior_angle(&points[left], &points[i], &points[right]) {
            if angle < angle_threshold {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Building edge points, ordered by point index. See [`building_edge_indices`].
pub fn extract_building_edges(
    cloud: &PointCloud,
    organized: &OrganizedIndex,
    policy: &SemanticPolicy,
    angle_threshold: f64,
) -> Result<PointCloud> {
    let idx = building_edge_indices(cloud, organized, policy, angle_threshold)?;
    Ok(cloud.select(&idx))
}

/// How feature points are drawn from a scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureConfig {
    /// Keep only edge points of buildings (otherwise every building point).
    pub edge_extraction: bool,
    /// Degrees.
    pub angle_threshold: f64,
    pub range_image: RangeImageConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            edge_extraction: true,
            angle_threshold: 150.0,
            range_image: RangeImageConfig::default(),
        }
    }
}

/// Stick points plus building edges (or all building points when edge
/// extraction is off), in index order. `cloud` must be in the sensor frame.
pub fn extract_feature_points(
    cloud: &PointCloud,
    policy: &SemanticPolicy,
    config: &FeatureConfig,
) -> Result<PointCloud> {
    let labels = cloud.require_labels("feature extraction")?;
    let mut keep: Vec<bool> = labels.iter().map(|&l| policy.is_stick(l)).collect();
    if config.edge_extraction {
        let organized = organize(cloud, &config.range_image)?;
        for i in building_edge_indices(cloud, &organized, policy, config.angle_threshold)? {
            keep[i] = true;
        }
    } else {
        for (k, &l) in keep.iter_mut().zip(labels) {
            *k |= policy.is_building(l);
        }
    }
    Ok(cloud.filter(|i| keep[i]))
}
