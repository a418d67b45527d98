use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// Semantic category ID (SemanticKITTI convention: low 16 bits of a label record).
pub type Label = u16;

/// 3-D points in meters with optional per-point semantic labels and intensity.
///
/// Invariants (checked by every constructor): all coordinates are finite, and
/// the optional channels have exactly one entry per point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    labels: Option<Vec<Label>>,
    intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        Self::from_parts(points, None, None)
    }

    pub fn from_parts(
        points: Vec<Point3<f64>>,
        labels: Option<Vec<Label>>,
        intensity: Option<Vec<f32>>,
    ) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::invalid(format!("point {i} has non-finite coordinates")));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::invalid(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        if let Some(v) = &intensity {
            if v.len() != points.len() {
                return Err(Error::invalid(format!(
                    "{} intensity values for {} points",
                    v.len(),
                    points.len()
                )));
            }
        }
        Ok(Self {
            points,
            labels,
            intensity,
        })
    }

    pub fn from_labeled(points: Vec<Point3<f64>>, labels: Vec<Label>) -> Result<Self> {
        Self::from_parts(points, Some(labels), None)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_labels(self, labels: Vec<Label>) -> Result<Self> {
        Self::from_parts(self.points, Some(labels), self.intensity)
    }

    pub fn with_intensity(self, intensity: Vec<f32>) -> Result<Self> {
        Self::from_parts(self.points, self.labels, Some(intensity))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn intensity(&self) -> Option<&[f32]> {
        self.intensity.as_deref()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    pub fn into_points(self) -> Vec<Point3<f64>> {
        self.points
    }

    /// Labels, or an invalid-argument error naming `what` needs them.
    pub fn require_labels(&self, what: &str) -> Result<&[Label]> {
        self.labels()
            .ok_or_else(|| Error::invalid(format!("{what} requires a labeled point cloud")))
    }

    /// Sub-cloud made of `indices`, in the given order. Panics on an
    /// out-of-range index.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            intensity: self.intensity.as_ref().map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Keeps the points for which `keep(index)` holds, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> PointCloud {
        let indices: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.select(&indices)
    }

    /// Same channels, every point replaced by `f(p)`. `f` must return finite
    /// coordinates for finite input (rigid transforms do).
    pub(crate) fn map_points(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            labels: self.labels.clone(),
            intensity: self.intensity.clone(),
        }
    }

    /// Concatenates `other` onto `self`. Both clouds must carry the same
    /// optional channels, unless `self` is empty.
    pub fn extend_from(&mut self, other: &PointCloud) -> Result<()> {
        if self.is_empty() && self.labels.is_none() && self.intensity.is_none() {
            *self = other.clone();
            return Ok(());
        }
        if self.labels.is_some() != other.labels.is_some() || self.intensity.is_some() != other.intensity.is_some() {
            return Err(Error::invalid("cannot merge clouds with different channels"));
        }
        self.points.extend_from_slice(&other.points);
        if let (Some(a), Some(b)) = (&mut self.labels, &other.labels) {
            a.extend_from_slice(b);
        }
        if let (Some(a), Some(b)) = (&mut self.intensity, &other.intensity) {
            a.extend_from_slice(b);
        }
        Ok(())
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.len() as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_length_mismatch() {
        assert!(PointCloud::new(vec![Point3::new(0.0, f64::INFINITY, 0.0)]).is_err());
        assert!(PointCloud::from_labeled(vec![Point3::origin()], vec![1, 2]).is_err());
        assert!(PointCloud::new(vec![Point3::origin()])
            .unwrap()
            .with_intensity(vec![])
            .is_err());
    }

    #[test]
    fn select_and_filter_carry_channels() {
        let cloud = PointCloud::from_parts(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
            ],
            Some(vec![10, 20, 30]),
            Some(vec![0.1, 0.2, 0.3]),
        )
        .unwrap();
        let sub = cloud.filter(|i| i != 1);
        assert_eq!(sub.labels(), Some(&[10, 30][..]));
        assert_eq!(sub.intensity(), Some(&[0.1, 0.3][..]));
        assert_eq!(sub.points()[1].x, 2.0);
    }

    #[test]
    fn extend_requires_matching_channels() {
        let mut a = PointCloud::from_labeled(vec![Point3::origin()], vec![1]).unwrap();
        let b = PointCloud::new(vec![Point3::origin()]).unwrap();
        assert!(a.extend_from(&b).is_err());
        let mut empty = PointCloud::empty();
        empty.extend_from(&a).unwrap();
        empty.extend_from(&a.clone()).unwrap();
        assert_eq!(empty.len(), 2);
        assert!(a.extend_from(&empty).is_ok());
    }
}
