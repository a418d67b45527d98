use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Relative singular-value floor below which a cross-covariance is treated
/// as rank ≤ 1 (collinear or coincident correspondences).
const RANK_TOLERANCE: f64 = 1e-10;

/// Least-squares rigid transform mapping `source` points onto their `target`
/// partners, minimizing `Σ ‖R sᵢ + t − tᵢ‖²`.
///
/// Closed form via SVD of the cross-covariance, with the sign of the last
/// singular direction flipped when needed so the result is never a
/// reflection.
pub fn best_rigid_align(pairs: &[(Point3<f64>, Point3<f64>)]) -> Result<Pose> {
    align_pairs(pairs.iter().map(|(s, t)| (s, t)), pairs.len())
}

pub(crate) fn align_pairs<'a>(
    pairs: impl Iterator<Item = (&'a Point3<f64>, &'a Point3<f64>)> + Clone,
    count: usize,
) -> Result<Pose> {
    if count < 3 {
        return Err(Error::DegenerateInput(format!(
            "rigid alignment needs at least 3 pairs, got {count}"
        )));
    }
    let n = count as f64;
    let (sum_s, sum_t) = pairs
        .clone()
        .fold((Vector3::zeros(), Vector3::zeros()), |(a, b), (s, t)| {
            (a + s.coords, b + t.coords)
        });
    let mean_s = sum_s / n;
    let mean_t = sum_t / n;

    let mut h = Matrix3::zeros();
    for (s, t) in pairs {
        h += (s.coords - mean_s) * (t.coords - mean_t).transpose();
    }

    let svd = h.svd(true, true);
    let mut sigma = svd.singular_values;
    sigma.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(sigma[0] > 0.0) || sigma[1] <= RANK_TOLERANCE * sigma[0] {
        return Err(Error::DegenerateInput(
            "correspondences are collinear or coincident".into(),
        ));
    }
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateInput("SVD did not converge".into())),
    };

    // H = U Σ Vᵀ  →  R = V D Uᵀ, D fixing det(R) = +1 on the weakest axis.
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let weakest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(2);
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    diag[weakest] = d;
    let rotation = v * Matrix3::from_diagonal(&diag) * u.transpose();
    let translation = mean_t - rotation * mean_s;
    Pose::from_matrix_nearest(&rotation, translation)
}
