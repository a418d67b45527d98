use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Orthonormality tolerance enforced on every [`Pose`] rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Drift above which [`Pose::compose`] re-projects its rotation.
pub const RENORMALIZE_THRESHOLD: f64 = 1e-12;

/// Rigid transform in SE(3): `p' = R p + t`.
///
/// The rotation block is always orthonormal with determinant +1 (checked to
/// [`ROTATION_TOLERANCE`] on construction from a raw matrix).
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pose")
            .field("rotation", &self.rotation.as_slice())
            .field("translation", &self.translation.as_slice())
            .finish()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a raw rotation matrix, rejecting anything that is
    /// not a proper rotation to within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite values"));
        }
        let err = orthonormality_error(&rotation);
        if err > ROTATION_TOLERANCE || rotation.determinant() <= 0.0 {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (|R R^T - I| = {err:e}, det = {})",
                rotation.determinant()
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis`, followed by `translation`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Self::from_rotation(rotation, translation)
    }

    /// Planar pose: rotation about +z by `yaw` radians.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::from_axis_angle(&Vector3::z(), yaw, translation)
    }

    /// Projects an arbitrary 3x3 matrix onto the nearest rotation (in the
    /// Frobenius sense) and builds a pose from it.
    pub fn from_matrix_nearest(matrix: &Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !matrix.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite values"));
        }
        let rotation =
            nearest_rotation(matrix).ok_or_else(|| Error::invalid("matrix has no nearby proper rotation"))?;
        Ok(Self { rotation, translation })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.translation)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    ///
    /// Long chains of products drift away from orthonormality; the rotation
    /// is re-projected once the drift exceeds [`RENORMALIZE_THRESHOLD`].
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_error(&rotation) > RENORMALIZE_THRESHOLD {
            if let Some(r) = nearest_rotation(&rotation) {
                rotation = r;
            }
        }
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Applies the pose to every point; labels and intensity are carried over.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.transform_point(p))
    }

    /// Geodesic rotation angle of this pose, in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Geodesic angle between the rotations of two poses, in radians.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Row-major 3x4 `[R | t]`, the KITTI pose line layout.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    /// Parses a row-major 3x4 block. Rotations off by more than
    /// [`ROTATION_TOLERANCE`] are projected onto the nearest rotation; blocks
    /// that are far from any rotation are rejected.
    pub fn from_row_major(values: &[f64; 12]) -> Result<Pose> {
        let m = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9], values[10],
        );
        let t = Vector3::new(values[3], values[7], values[11]);
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite values"));
        }
        let err = orthonormality_error(&m);
        if err <= ROTATION_TOLERANCE && m.determinant() > 0.0 {
            return Ok(Pose {
                rotation: m,
                translation: t,
            });
        }
        if err > 0.1 || m.determinant() <= 0.0 {
            return Err(Error::invalid(format!(
                "rotation block is not a rotation (|R R^T - I| = {err:e})"
            )));
        }
        Pose::from_matrix_nearest(&m, t)
    }

    /// True when both blocks agree with `other` to within `tol`.
    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        (self.rotation - other.rotation).amax() <= tol && (self.translation - other.translation).amax() <= tol
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

impl Mul<Point3<f64>> for &Pose {
    type Output = Point3<f64>;

    fn mul(self, rhs: Point3<f64>) -> Point3<f64> {
        self.transform_point(&rhs)
    }
}

/// Max-abs entry of `R Rᵀ - I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity()).amax()
}

/// Geodesic angle of a rotation matrix in radians, `atan2(sin θ, cos θ)`
/// with `cos θ = (tr R - 1) / 2` and `sin θ` from the skew part of `R`.
/// Unlike a bare `acos` this stays accurate for tiny angles.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = (r.trace() - 1.0) * 0.5;
    let s = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    s.atan2(c)
}

/// Closest proper rotation to `m`: `U diag(1, 1, det(U Vᵀ)) Vᵀ`.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    r.iter().all(|v| v.is_finite()).then_some(r)
}
