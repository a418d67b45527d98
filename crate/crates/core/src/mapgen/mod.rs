//! Feature-point map and long-lasting map generation from a labeled LiDAR
//! sequence with known poses.
//!
//! Per keyframe: drop non-long-lasting categories, extract feature points
//! (stick-like objects plus building edges), move both sets into the map
//! frame and accumulate them into voxel grids.

mod features;
mod policy;

use rayon::prelude::*;

pub use features::{
    building_edge_indices, extract_building_edges, extract_feature_points, extract_stick_points, filter_long_lasting,
    FeatureConfig,
};
pub use policy::{semantic_kitti, SemanticPolicy};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, VoxelAccumulator};

/// Greedy keyframe selection: frame 0 is always taken, and each later frame
/// is taken when it is at least `min_distance` meters from the most recently
/// taken frame.
pub fn select_keyframes(poses: &[Pose], min_distance: f64) -> Vec<usize> {
    let mut selected: Vec<usize> = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        match selected.last() {
            None => selected.push(i),
            Some(&last) if pose.distance_to(&poses[last]) >= min_distance => selected.push(i),
            Some(_) => {}
        }
    }
    selected
}

/// Map-building settings.
#[derive(Clone, Debug, PartialEq)]
pub struct MapGenConfig {
    pub policy: SemanticPolicy,
    /// Keyframe spacing, meters.
    pub min_distance: f64,
    /// Map voxel size, meters.
    pub resolution: f64,
    pub features: FeatureConfig,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        Self {
            policy: SemanticPolicy::default(),
            min_distance: 5.0,
            resolution: 0.2,
            features: FeatureConfig::default(),
        }
    }
}

impl MapGenConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if !(self.min_distance >= 0.0) {
            return Err(Error::invalid(format!(
                "keyframe distance must be non-negative, got {}",
                self.min_distance
            )));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::invalid(format!(
                "map resolution must be positive, got {}",
                self.resolution
            )));
        }
        self.features.range_image.validate()
    }
}

/// Size ratios of a built map relative to its input sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MapStats {
    /// Selected keyframes / all frames.
    pub frame_fraction: f64,
    /// Feature-map points / raw input points.
    pub feature_fraction: f64,
    /// Long-lasting-map points / raw input points.
    pub long_lasting_fraction: f64,
    pub total_frames: usize,
    pub total_raw_points: u64,
}

/// The two maps used for localization.
#[derive(Clone, Debug, PartialEq)]
pub struct MapPair {
    pub feature_map: PointCloud,
    pub long_lasting_map: PointCloud,
    pub voxel_resolution: f64,
    pub keyframe_poses: Vec<Pose>,
    pub stats: MapStats,
}

/// Long-lasting and feature subsets of one scan, still in the sensor frame.
#[derive(Clone, Debug)]
pub struct FrameExtract {
    pub long_lasting: PointCloud,
    pub features: PointCloud,
}

pub fn extract_frame(cloud: &PointCloud, config: &MapGenConfig) -> Result<FrameExtract> {
    Ok(FrameExtract {
        long_lasting: filter_long_lasting(cloud, &config.policy)?,
        features: extract_feature_points(cloud, &config.policy, &config.features)?,
    })
}

/// Incremental map construction, one keyframe at a time.
///
/// Keyframes must be added in sequence order; the result is then identical
/// to voxelizing the union of all transformed keyframe subsets.
#[derive(Clone, Debug)]
pub struct MapBuilder {
    config: MapGenConfig,
    feature_acc: VoxelAccumulator,
    long_lasting_acc: VoxelAccumulator,
    keyframe_poses: Vec<Pose>,
}

impl MapBuilder {
    pub fn new(config: MapGenConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            feature_acc: VoxelAccumulator::new(config.resolution)?,
            long_lasting_acc: VoxelAccumulator::new(config.resolution)?,
            config,
            keyframe_poses: Vec::new(),
        })
    }

    pub fn config(&self) -> &MapGenConfig {
        &self.config
    }

    /// Adds a keyframe scan (sensor frame) observed from `pose`.
    pub fn add_keyframe(&mut self, cloud: &PointCloud, pose: &Pose) -> Result<()> {
        let extract = extract_frame(cloud, &self.config)?;
        self.add_extract(&extract, pose)
    }

    pub fn add_extract(&mut self, extract: &FrameExtract, pose: &Pose) -> Result<()> {
        self.long_lasting_acc.add(&pose.apply(&extract.long_lasting))?;
        self.feature_acc.add(&pose.apply(&extract.features))?;
        self.keyframe_poses.push(*pose);
        Ok(())
    }

    /// Finalizes both maps. `total_frames` and `total_raw_points` describe
    /// the whole input sequence, selected or not.
    pub fn finish(self, total_frames: usize, total_raw_points: u64) -> MapPair {
        let feature_map = self.feature_acc.finish();
        let long_lasting_map = self.long_lasting_acc.finish();
        let ratio = |num: usize, den: f64| if den > 0.0 { num as f64 / den } else { 0.0 };
        let stats = MapStats {
            frame_fraction: ratio(self.keyframe_poses.len(), total_frames as f64),
            feature_fraction: ratio(feature_map.len(), total_raw_points as f64),
            long_lasting_fraction: ratio(long_lasting_map.len(), total_raw_points as f64),
            total_frames,
            total_raw_points,
        };
        MapPair {
            feature_map,
            long_lasting_map,
            voxel_resolution: self.config.resolution,
            keyframe_poses: self.keyframe_poses,
            stats,
        }
    }
}

/// Builds both maps from an in-memory labeled sequence.
pub fn build_maps(frames: &[(PointCloud, Pose)], config: &MapGenConfig) -> Result<MapPair> {
    if frames.is_empty() {
        return Err(Error::invalid("map generation needs at least one frame"));
    }
    let mut builder = MapBuilder::new(config.clone())?;
    let poses: Vec<Pose> = frames.iter().map(|(_, p)| *p).collect();
    let keyframes = select_keyframes(&poses, config.min_distance);
    let extracts: Vec<FrameExtract> = keyframes
        .par_iter()
        .map(|&k| extract_frame(&frames[k].0, config))
        .collect::<Result<_>>()?;
    for (k, extract) in keyframes.iter().zip(&extracts) {
        builder.add_extract(extract, &frames[*k].1)?;
    }
    let raw: u64 = frames.iter().map(|(c, _)| c.len() as u64).sum();
    Ok(builder.finish(frames.len(), raw))
}
