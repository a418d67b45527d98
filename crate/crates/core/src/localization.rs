//! Four-step map-based localizer.
//!
//! For each incoming scan:
//!
//! 1. predict the pose from the last pose and the recent average velocity;
//! 2. register the scan against the previous scan (odometry);
//! 3. register the scan's feature points against the local feature map;
//! 4. register the scan's long-lasting points against the local
//!    long-lasting map.
//!
//! Steps 2 to 4 run coarse-to-fine ICP, and every step result must pass the
//! pose-change gate against the pose entering that step.

use std::collections::BTreeSet;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose};
use crate::mapgen::{extract_feature_points, filter_long_lasting, FeatureConfig, MapPair, SemanticPolicy};
use crate::registration::{cofi_icp, gate_check, CofiSchedule, GateParams, IcpParams};

/// Points within `radius` (3-D Euclidean distance) of `center`.
pub fn extract_local_map(map: &PointCloud, center: &Point3<f64>, radius: f64) -> PointCloud {
    let r2 = radius * radius;
    let points = map.points();
    map.filter(|i| (points[i] - center).norm_squared() <= r2)
}

/// What the step-3 source cloud is made of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Step3Source {
    /// Stick and building-edge points only.
    #[default]
    FeaturePoints,
    /// Every long-lasting point plus the feature points.
    LongLastingAndFeatures,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizerConfig {
    /// Meters.
    pub local_map_radius: f64,
    /// Frames averaged for the velocity estimate.
    pub velocity_window: usize,
    /// Ladder for steps 2 and 3.
    pub schedule: CofiSchedule,
    /// Ladder for step 4. Point-to-point accuracy is bounded by the finest
    /// resolution, so the default ends at 0.2 m.
    pub step4_resolutions: CofiSchedule,
    pub gate: GateParams,
    pub icp: IcpParams,
    pub enabled_steps: BTreeSet<u8>,
    pub policy: SemanticPolicy,
    pub features: FeatureConfig,
    pub step3_source: Step3Source,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            local_map_radius: 100.0,
            velocity_window: 4,
            schedule: CofiSchedule::default(),
            step4_resolutions: CofiSchedule::new(vec![1.0, 0.2]).expect("valid schedule"),
            gate: GateParams::default(),
            icp: IcpParams::default(),
            enabled_steps: [1, 2, 3, 4].into_iter().collect(),
            policy: SemanticPolicy::default(),
            features: FeatureConfig::default(),
            step3_source: Step3Source::default(),
        }
    }
}

impl LocalizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.local_map_radius > 0.0) {
            return Err(Error::invalid("local map radius must be positive"));
        }
        if self.velocity_window == 0 {
            return Err(Error::invalid("velocity window must be at least 1"));
        }
        if self.enabled_steps.is_empty() || self.enabled_steps.iter().any(|s| !(1..=4).contains(s)) {
            return Err(Error::invalid(format!(
                "enabled steps must be a non-empty subset of 1..=4, got {:?}",
                self.enabled_steps
            )));
        }
        self.gate.validate()?;
        self.icp.validate()?;
        self.policy.validate()?;
        self.features.range_image.validate()
    }

    /// Parses a step list such as `"1,2,3,4"` or `"3+4"`.
    pub fn parse_steps(text: &str) -> Result<BTreeSet<u8>> {
        let steps: BTreeSet<u8> = text
            .split([',', '+'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<u8>()
                    .ok()
                    .filter(|v| (1..=4).contains(v))
                    .ok_or_else(|| Error::invalid(format!("bad localization step '{s}'")))
            })
            .collect::<Result<_>>()?;
        if steps.is_empty() {
            return Err(Error::invalid("no localization steps given"));
        }
        Ok(steps)
    }

    fn enabled(&self, step: u8) -> bool {
        self.enabled_steps.contains(&step)
    }
}

/// Rolling localizer memory: accepted poses and the previous scan's
/// long-lasting points (sensor frame).
#[derive(Clone, Debug)]
pub struct LocalizerState {
    accepted_poses: Vec<Pose>,
    previous_frame_long_lasting: Option<PointCloud>,
}

impl LocalizerState {
    /// State whose history starts at `initial_pose`, with no previous scan.
    pub fn new(initial_pose: Pose) -> Self {
        Self {
            accepted_poses: vec![initial_pose],
            previous_frame_long_lasting: None,
        }
    }

    /// State for a sequence whose first scan `first_frame` was taken at the
    /// known `initial_pose`.
    pub fn bootstrap(initial_pose: Pose, first_frame: &PointCloud, policy: &SemanticPolicy) -> Result<Self> {
        Ok(Self {
            accepted_poses: vec![initial_pose],
            previous_frame_long_lasting: Some(filter_long_lasting(first_frame, policy)?),
        })
    }

    pub fn accepted_poses(&self) -> &[Pose] {
        &self.accepted_poses
    }

    pub fn last_pose(&self) -> Option<&Pose> {
        self.accepted_poses.last()
    }

    pub fn previous_frame_long_lasting(&self) -> Option<&PointCloud> {
        self.previous_frame_long_lasting.as_ref()
    }
}

/// Constant-velocity prediction: the last translation plus the mean of the
/// last `window` per-frame translation deltas; rotation is kept.
pub fn predict_pose(state: &LocalizerState, window: usize) -> Result<Pose> {
    let poses = state.accepted_poses();
    let last = poses
        .last()
        .ok_or_else(|| Error::InvalidState("pose history is empty".into()))?;
    let deltas = (poses.len() - 1).min(window);
    if deltas == 0 {
        return Ok(*last);
    }
    let start = poses.len() - 1 - deltas;
    let mean_velocity = (poses[poses.len() - 1].translation() - poses[start].translation()) / deltas as f64;
    Pose::new(*last.rotation(), last.translation() + mean_velocity)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    /// Ran and its result was adopted.
    Accepted,
    /// Ran but the gate (or the registration ladder) rejected the result.
    Rejected,
    NotEnabled,
    /// No previous scan to register against (first frame).
    NoPreviousFrame,
    EmptyLocalMap,
    EmptySource,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostic {
    pub step: u8,
    pub status: StepStatus,
    pub pose_in: Pose,
    pub pose_out: Pose,
    pub inlier_rmse: Option<f64>,
    pub fitness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameLocalization {
    pub pose: Pose,
    pub steps: Vec<StepDiagnostic>,
}

impl FrameLocalization {
    pub fn step(&self, step: u8) -> Option<&StepDiagnostic> {
        self.steps.iter().find(|d| d.step == step)
    }
}

struct StepRun<'a> {
    config: &'a LocalizerConfig,
    pose: Pose,
    diagnostics: Vec<StepDiagnostic>,
}

impl StepRun<'_> {
    fn skip(&mut self, step: u8, status: StepStatus) {
        self.diagnostics.push(StepDiagnostic {
            step,
            status,
            pose_in: self.pose,
            pose_out: self.pose,
            inlier_rmse: None,
            fitness: None,
        });
    }

    /// Registers `source` (sensor frame) to `target` starting from
    /// `init` expressed in the target's frame; `to_world` maps target-frame
    /// poses back into the map frame.
    fn register(
        &mut self,
        step: u8,
        source: &PointCloud,
        target: &PointCloud,
        init: &Pose,
        to_world: &Pose,
        schedule: &CofiSchedule,
    ) -> Result<()> {
        let pose_in = self.pose;
        let out = cofi_icp(source, target, init, schedule, &self.config.gate, &self.config.icp)?;
        let candidate = to_world.compose(out.pose());
        let accepted = out.accepted_stages() > 0 && gate_check(&candidate, &pose_in, &self.config.gate);
        if accepted {
            self.pose = candidate;
        }
        self.diagnostics.push(StepDiagnostic {
            step,
            status: if accepted {
                StepStatus::Accepted
            } else {
                StepStatus::Rejected
            },
            pose_in,
            pose_out: self.pose,
            inlier_rmse: Some(out.registration.inlier_rmse),
            fitness: Some(out.registration.fitness),
        });
        Ok(())
    }
}

/// Localizes one labeled scan against `maps`, appends the result to the
/// state history and caches the scan for the next odometry step.
pub fn localize_frame(
    state: &mut LocalizerState,
    frame: &PointCloud,
    maps: &MapPair,
    config: &LocalizerConfig,
) -> Result<FrameLocalization> {
    config.validate()?;
    frame.require_labels("localization")?;
    let last = *state
        .last_pose()
        .ok_or_else(|| Error::InvalidState("localizer has no starting pose".into()))?;
    let long_lasting = filter_long_lasting(frame, &config.policy)?;

    let mut run = StepRun {
        config,
        pose: last,
        diagnostics: Vec::with_capacity(4),
    };

    // Step 1: constant-velocity prediction
    if config.enabled(1) {
        run.pose = predict_pose(state, config.velocity_window)?;
        run.diagnostics.push(StepDiagnostic {
            step: 1,
            status: StepStatus::Accepted,
            pose_in: last,
            pose_out: run.pose,
            inlier_rmse: None,
            fitness: None,
        });
    } else {
        run.skip(1, StepStatus::NotEnabled);
    }

    // Step 2: scan-to-scan odometry, solved in the previous sensor frame
    if !config.enabled(2) {
        run.skip(2, StepStatus::NotEnabled);
    } else {
        match state.previous_frame_long_lasting() {
            None => run.skip(2, StepStatus::NoPreviousFrame),
            Some(prev) if prev.is_empty() => run.skip(2, StepStatus::NoPreviousFrame),
            Some(_) if long_lasting.is_empty() => run.skip(2, StepStatus::EmptySource),
            Some(prev) => {
                let relative_init = last.inverse().compose(&run.pose);
                run.register(2, &long_lasting, prev, &relative_init, &last, &config.schedule)?;
            }
        }
    }

    let center = last.position();
    // Step 3: feature points against the local feature map
    if !config.enabled(3) {
        run.skip(3, StepStatus::NotEnabled);
    } else {
        let local = extract_local_map(&maps.feature_map, &center, config.local_map_radius);
        let mut source = extract_feature_points(frame, &config.policy, &config.features)?;
        if config.step3_source == Step3Source::LongLastingAndFeatures {
            source.extend_from(&long_lasting)?;
        }
        if local.is_empty() {
            run.skip(3, StepStatus::EmptyLocalMap);
        } else if source.is_empty() {
            run.skip(3, StepStatus::EmptySource);
        } else {
            let init = run.pose;
            run.register(3, &source, &local, &init, &Pose::identity(), &config.schedule)?;
        }
    }

    // Step 4: long-lasting points against the local long-lasting map
    if !config.enabled(4) {
        run.skip(4, StepStatus::NotEnabled);
    } else {
        let local = extract_local_map(&maps.long_lasting_map, &center, config.local_map_radius);
        if local.is_empty() {
            run.skip(4, StepStatus::EmptyLocalMap);
        } else if long_lasting.is_empty() {
            run.skip(4, StepStatus::EmptySource);
        } else {
            let init = run.pose;
            run.register(
                4,
                &long_lasting,
                &local,
                &init,
                &Pose::identity(),
                &config.step4_resolutions,
            )?;
        }
    }

    let pose = run.pose;
    state.accepted_poses.push(pose);
    state.previous_frame_long_lasting = Some(long_lasting);
    Ok(FrameLocalization {
        pose,
        steps: run.diagnostics,
    })
}
