use crate::error::{Error, Result};
use crate::geometry::{voxel_downsample, PointCloud, Pose};
use crate::registration::icp::{icp, IcpParams, RegistrationResult};

/// Largest pose change a registration stage may apply relative to its
/// reference before the result is rejected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateParams {
    /// Meters.
    pub max_translation_change: f64,
    /// Degrees.
    pub max_rotation_change: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            max_translation_change: 2.0,
            max_rotation_change: 5.0,
        }
    }
}

impl GateParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_translation_change > 0.0 && self.max_rotation_change > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("gate bounds must be positive: {self:?}")))
        }
    }
}

/// Accepts `candidate` iff its translation lies within
/// `max_translation_change` of `reference` and the geodesic angle between
/// the two rotations is at most `max_rotation_change` degrees.
pub fn gate_check(candidate: &Pose, reference: &Pose, gate: &GateParams) -> bool {
    candidate.distance_to(reference) <= gate.max_translation_change
        && reference.angle_to(candidate).to_degrees() <= gate.max_rotation_change
}

/// Voxel sizes for the coarse-to-fine ladder, strictly decreasing.
#[derive(Clone, Debug, PartialEq)]
pub struct CofiSchedule(Vec<f64>);

impl CofiSchedule {
    pub fn new(resolutions: Vec<f64>) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(Error::invalid("coarse-to-fine schedule is empty"));
        }
        if resolutions.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::invalid(format!(
                "schedule resolutions must be positive: {resolutions:?}"
            )));
        }
        if resolutions.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid(format!(
                "schedule must be strictly decreasing: {resolutions:?}"
            )));
        }
        Ok(Self(resolutions))
    }

    pub fn resolutions(&self) -> &[f64] {
        &self.0
    }
}

impl Default for CofiSchedule {
    fn default() -> Self {
        Self(vec![5.0, 1.0, 0.2])
    }
}

/// Per-stage record of a coarse-to-fine run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageReport {
    pub resolution: f64,
    pub result: RegistrationResult,
    pub accepted: bool,
}

/// Result of [`cofi_icp`]: the last accepted registration plus the ladder's
/// per-stage history.
#[derive(Clone, Debug, PartialEq)]
pub struct CofiResult {
    pub registration: RegistrationResult,
    pub stages: Vec<StageReport>,
}

impl CofiResult {
    pub fn pose(&self) -> &Pose {
        &self.registration.pose
    }

    /// True when a stage result was rejected by the gate.
    pub fn gate_rejected(&self) -> bool {
        self.stages.iter().any(|s| !s.accepted)
    }

    pub fn accepted_stages(&self) -> usize {
        self.stages.iter().filter(|s| s.accepted).count()
    }
}

/// Correspondence distance used at a stage of the given voxel size.
pub fn stage_correspondence_distance(resolution: f64, params: &IcpParams) -> f64 {
    (2.0 * resolution).max(params.max_correspondence_distance)
}

/// Coarse-to-fine ICP.
///
/// For each resolution, both raw clouds are voxelized and ICP runs from the
/// current best pose. A stage result whose change from `init` passes the
/// gate becomes the new best; the first rejected stage ends the ladder and
/// the last accepted result is returned. If the very first stage is
/// rejected the result is `init` with `converged = false`.
pub fn cofi_icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    schedule: &CofiSchedule,
    gate: &GateParams,
    params: &IcpParams,
) -> Result<CofiResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("coarse-to-fine ICP needs non-empty clouds"));
    }
    gate.validate()?;
    params.validate()?;

    let mut best = RegistrationResult::failed(*init, 0);
    let mut stages = Vec::with_capacity(schedule.resolutions().len());
    for &resolution in schedule.resolutions() {
        let src = voxel_downsample(source, resolution)?;
        let tgt = voxel_downsample(target, resolution)?;
        let stage_params = IcpParams {
            max_correspondence_distance: stage_correspondence_distance(resolution, params),
            ..*params
        };
        let result = icp(&src, &tgt, &best.pose, &stage_params)?;
        let accepted = gate_check(&result.pose, init, gate);
        stages.push(StageReport {
            resolution,
            result,
            accepted,
        });
        if !accepted {
            break;
        }
        best = result;
    }
    Ok(CofiResult {
        registration: best,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point3, Vector3};

    #[test]
    fn schedule_validation() {
        assert!(CofiSchedule::new(vec![]).is_err());
        assert!(CofiSchedule::new(vec![1.0, 1.0]).is_err());
        assert!(CofiSchedule::new(vec![1.0, 2.0]).is_err());
        assert!(CofiSchedule::new(vec![1.0, -0.5]).is_err());
        assert_eq!(CofiSchedule::default().resolutions(), &[5.0, 1.0, 0.2]);
    }

    #[test]
    fn gate_accepts_identity_and_rejects_large_translation() {
        let p = Pose::from_yaw(0.3, Vector3::new(1.0, 2.0, 3.0));
        assert!(gate_check(
            &p,
            &p,
            &GateParams {
                max_translation_change: 1e-9,
                max_rotation_change: 1e-9
            }
        ));
        let moved = Pose::from_translation(Vector3::new(3.0, 0.0, 0.0)).compose(&p);
        assert!(!gate_check(&moved, &p, &GateParams::default()));
    }

    #[test]
    fn gate_rotation_threshold() {
        let gate = GateParams {
            max_translation_change: 1.0,
            max_rotation_change: 5.0,
        };
        let axis = Vector3::new(0.2, -0.4, 1.0);
        let reference = Pose::from_axis_angle(&Vector3::new(1.0, 0.0, 0.0), 0.4, Vector3::zeros());
        let under = Pose::from_axis_angle(&axis, 4.9999f64.to_radians(), Vector3::zeros()).compose(&reference);
        let over = Pose::from_axis_angle(&axis, 5.0001f64.to_radians(), Vector3::zeros()).compose(&reference);
        assert!(gate_check(&under, &reference, &gate));
        assert!(!gate_check(&over, &reference, &gate));
    }

    #[test]
    fn tight_gate_returns_init() {
        let mut pts = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                pts.push(Point3::new(
                    i as f64 * 0.5,
                    j as f64 * 0.5,
                    ((i * 7 + j * 3) % 5) as f64 * 0.3,
                ));
            }
        }
        let target = PointCloud::new(pts).unwrap();
        let truth = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let source = truth.inverse().apply(&target);
        let gate = GateParams {
            max_translation_change: 0.001,
            max_rotation_change: 5.0,
        };
        let out = cofi_icp(
            &source,
            &target,
            &Pose::identity(),
            &CofiSchedule::default(),
            &gate,
            &IcpParams::default(),
        )
        .unwrap();
        assert_eq!(*out.pose(), Pose::identity());
        assert!(!out.registration.converged);
        assert!(out.gate_rejected());
        assert_eq!(out.accepted_stages(), 0);
    }
}
