//! KITTI odometry relative errors and absolute translation error.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::registration::best_rigid_align;

/// Segment lengths (meters) of the KITTI odometry benchmark.
pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Start frames are sampled every this many frames by default.
pub const DEFAULT_STEP: usize = 10;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    /// Seconds, one per pose when present.
    pub timestamps: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Self {
        Self {
            poses,
            timestamps: None,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Cumulative path length at every frame, starting at 0.
    pub fn path_distances(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.poses.len());
        let mut acc = 0.0;
        for (i, p) in self.poses.iter().enumerate() {
            if i > 0 {
                acc += p.distance_to(&self.poses[i - 1]);
            }
            out.push(acc);
        }
        out
    }

    /// Every pose left-composed with `transform`.
    pub fn left_compose(&self, transform: &Pose) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| transform.compose(p)).collect(),
            timestamps: self.timestamps.clone(),
        }
    }
}

/// Averaged KITTI segment errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeErrors {
    /// Translation error, percent.
    pub t_rel: f64,
    /// Rotation error, degrees per 100 m.
    pub r_rel: f64,
    /// Number of (start frame, segment length) samples averaged.
    pub samples: usize,
}

fn check_lengths(gt: &Trajectory, est: &Trajectory) -> Result<()> {
    if gt.len() != est.len() {
        return Err(Error::invalid(format!(
            "trajectory lengths differ: {} ground-truth vs {} estimated poses",
            gt.len(),
            est.len()
        )));
    }
    Ok(())
}

/// KITTI relative errors with start frames every [`DEFAULT_STEP`] frames.
pub fn relative_errors(gt: &Trajectory, est: &Trajectory) -> Result<Option<RelativeErrors>> {
    relative_errors_with_step(gt, est, DEFAULT_STEP)
}

/// For every start frame (every `step` frames) and every segment length `L`
/// in [`SEGMENT_LENGTHS`], the segment ends at the first frame whose
/// ground-truth path length from the start is at least `L`. The error pose
/// is `inv(gt_rel) · est_rel`; its translation norm and rotation angle are
/// divided by `L` and averaged over all samples.
///
/// Returns `None` when no segment fits, i.e. the path is shorter than 100 m.
pub fn relative_errors_with_step(gt: &Trajectory, est: &Trajectory, step: usize) -> Result<Option<RelativeErrors>> {
    check_lengths(gt, est)?;
    if step == 0 {
        return Err(Error::invalid("start-frame step must be at least 1"));
    }
    if gt.len() < 2 {
        return Err(Error::invalid("relative errors need at least 2 poses"));
    }
    let dist = gt.path_distances();
    let mut t_sum = 0.0;
    let mut r_sum = 0.0;
    let mut samples = 0usize;
    for first in (0..gt.len()).step_by(step) {
        for &len in &SEGMENT_LENGTHS {
            let goal = dist[first] + len;
            let Some(last) = (first..gt.len()).find(|&i| dist[i] >= goal) else {
                continue;
            };
            let gt_rel = gt.poses[first].inverse().compose(&gt.poses[last]);
            let est_rel = est.poses[first].inverse().compose(&est.poses[last]);
            let error = gt_rel.inverse().compose(&est_rel);
            t_sum += error.translation().norm() / len;
            r_sum += error.rotation_angle() / len;
            samples += 1;
        }
    }
    if samples == 0 {
        return Ok(None);
    }
    let n = samples as f64;
    Ok(Some(RelativeErrors {
        t_rel: 100.0 * t_sum / n,
        r_rel: 100.0 * (r_sum / n).to_degrees(),
        samples,
    }))
}

/// Absolute translation error statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct AteReport {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub per_frame: Vec<f64>,
}

/// Per-frame `‖t_gt − t_est‖` with no alignment: estimates are expected in
/// the ground-truth (map) frame.
pub fn absolute_translation_error(gt: &Trajectory, est: &Trajectory) -> Result<AteReport> {
    check_lengths(gt, est)?;
    let per_frame: Vec<f64> = gt.poses.iter().zip(&est.poses).map(|(g, e)| g.distance_to(e)).collect();
    let n = per_frame.len().max(1) as f64;
    let mean = per_frame.iter().sum::<f64>() / n;
    let var = per_frame.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(AteReport {
        mean,
        std: var.sqrt(),
        per_frame,
    })
}

/// Rigid transform that best maps the estimated positions onto the
/// ground-truth positions (no scale).
pub fn align_trajectory(gt: &Trajectory, est: &Trajectory) -> Result<Pose> {
    check_lengths(gt, est)?;
    let pairs: Vec<_> = est
        .poses
        .iter()
        .zip(&gt.poses)
        .map(|(e, g)| (e.position(), g.position()))
        .collect();
    best_rigid_align(&pairs)
}

/// ATE after rigidly aligning the estimate onto the ground truth; for
/// comparison with methods that report aligned errors.
pub fn absolute_translation_error_aligned(gt: &Trajectory, est: &Trajectory) -> Result<AteReport> {
    let alignment = align_trajectory(gt, est)?;
    absolute_translation_error(gt, &est.left_compose(&alignment))
}

/// All metrics for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub relative: Option<RelativeErrors>,
    pub ate: AteReport,
}

pub fn evaluate(gt: &Trajectory, est: &Trajectory, align: bool) -> Result<MetricReport> {
    let relative = relative_errors(gt, est)?;
    let ate = if align {
        absolute_translation_error_aligned(gt, est)?
    } else {
        absolute_translation_error(gt, est)?
    };
    Ok(MetricReport { relative, ate })
}

impl MetricReport {
    /// One tab-separated metrics line: sequence, t_rel, r_rel, ate_mean,
    /// ate_std, 6 decimals. Missing relative errors print as `NaN`.
    pub fn metrics_line(&self, sequence: &str) -> String {
        let (t, r) = self.relative.map_or((f64::NAN, f64::NAN), |e| (e.t_rel, e.r_rel));
        format!("{sequence}\t{t:.6}\t{r:.6}\t{:.6}\t{:.6}", self.ate.mean, self.ate.std)
    }
}

/// Per-frame ATE table, `frame,x,y,z,error` with estimated positions.
pub fn ate_csv(est: &Trajectory, report: &AteReport) -> String {
    let mut out = String::from("frame,x,y,z,error\n");
    for (i, (p, e)) in est.poses.iter().zip(&report.per_frame).enumerate() {
        let t = p.translation();
        let _ = writeln!(out, "{i},{:.6},{:.6},{:.6},{:.6}", t.x, t.y, t.z, e);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn line(n: usize, scale: f64) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|i| Pose::from_translation(Vector3::new(i as f64 * scale, 0.0, 0.0)))
                .collect(),
        )
    }

    #[test]
    fn perfect_estimate() {
        let gt = line(300, 1.0);
        let r = relative_errors(&gt, &gt).unwrap().unwrap();
        assert_eq!((r.t_rel, r.r_rel), (0.0, 0.0));
        let ate = absolute_translation_error(&gt, &gt).unwrap();
        assert_eq!((ate.mean, ate.std), (0.0, 0.0));
    }

    #[test]
    fn constant_offset_only_affects_ate() {
        let gt = line(300, 1.0);
        let est = gt.left_compose(&Pose::from_translation(Vector3::new(0.0, 0.3, 0.4)));
        let r = relative_errors(&gt, &est).unwrap().unwrap();
        assert!(r.t_rel < 1e-12 && r.r_rel < 1e-12);
        let ate = absolute_translation_error(&gt, &est).unwrap();
        assert!((ate.mean - 0.5).abs() < 1e-12 && ate.std < 1e-12);
    }

    #[test]
    fn one_percent_scale_error() {
        let gt = line(901, 1.0);
        let est = line(901, 1.01);
        let r = relative_errors(&gt, &est).unwrap().unwrap();
        assert!((r.t_rel - 1.0).abs() < 1e-6, "{}", r.t_rel);
        assert_eq!(r.r_rel, 0.0);
    }

    #[test]
    fn alternating_errors() {
        let gt = line(100, 1.0);
        let est = Trajectory::new(
            gt.poses
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let dz = if i % 2 == 0 { 0.0 } else { 1.0 };
                    Pose::from_translation(Vector3::new(0.0, 0.0, dz)).compose(p)
                })
                .collect(),
        );
        let ate = absolute_translation_error(&gt, &est).unwrap();
        assert_eq!((ate.mean, ate.std), (0.5, 0.5));
    }

    #[test]
    fn short_path_has_no_segments() {
        let gt = line(50, 1.0);
        assert_eq!(relative_errors(&gt, &gt).unwrap(), None);
    }

    #[test]
    fn length_mismatch() {
        assert!(relative_errors(&line(10, 1.0), &line(11, 1.0)).is_err());
        assert!(absolute_translation_error(&line(10, 1.0), &line(11, 1.0)).is_err());
    }

    #[test]
    fn aligned_ate_removes_rigid_offset() {
        let gt = Trajectory::new(
            (0..50)
                .map(|i| Pose::from_translation(Vector3::new(i as f64, (i as f64 * 0.2).sin() * 5.0, 0.1 * i as f64)))
                .collect(),
        );
        let est = gt.left_compose(&Pose::from_yaw(0.2, Vector3::new(3.0, -1.0, 0.5)));
        assert!(absolute_translation_error(&gt, &est).unwrap().mean > 1.0);
        assert!(absolute_translation_error_aligned(&gt, &est).unwrap().mean < 1e-9);
    }

    #[test]
    fn metrics_line_format() {
        let gt = line(150, 1.0);
        let report = evaluate(&gt, &gt, false).unwrap();
        assert_eq!(report.metrics_line("00"), "00\t0.000000\t0.000000\t0.000000\t0.000000");
        let short = evaluate(&line(3, 1.0), &line(3, 1.0), false).unwrap();
        assert!(short.metrics_line("x").starts_with("x\tNaN"));
    }
}
