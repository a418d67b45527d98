use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose};
use crate::registration::align::align_pairs;
use crate::registration::kdtree::KdTree;

/// A source point paired with its nearest target point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    /// Euclidean distance in meters.
    pub distance: f64,
}

/// Exact nearest-neighbour correspondences from `source` into `target`,
/// keeping only pairs no farther apart than `max_distance`.
pub fn find_correspondences(
    source: &PointCloud,
    target: &PointCloud,
    max_distance: f64,
) -> Result<Vec<Correspondence>> {
    if target.is_empty() {
        return Err(Error::invalid("correspondence search needs a non-empty target"));
    }
    check_distance(max_distance)?;
    let tree = KdTree::build(target.points());
    Ok(correspondences_with(&tree, source.points(), max_distance))
}

fn check_distance(max_distance: f64) -> Result<()> {
    if !(max_distance > 0.0) {
        return Err(Error::invalid(format!(
            "max correspondence distance must be positive, got {max_distance}"
        )));
    }
    Ok(())
}

pub(crate) fn correspondences_with(tree: &KdTree, source: &[Point3<f64>], max_distance: f64) -> Vec<Correspondence> {
    let max_sq = max_distance * max_distance;
    source
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (j, d2) = tree.nearest(p)?;
            (d2 <= max_sq).then(|| Correspondence {
                source: i,
                target: j,
                distance: d2.sqrt(),
            })
        })
        .collect()
}

/// Point-to-point ICP settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpParams {
    /// Pairs farther apart than this (meters) are ignored.
    pub max_correspondence_distance: f64,
    pub max_iterations: usize,
    /// Stop when the relative RMSE change drops below this...
    pub relative_rmse_epsilon: f64,
    /// ...and the relative fitness change drops below this.
    pub relative_fitness_epsilon: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_correspondence_distance: 1.0,
            max_iterations: 30,
            relative_rmse_epsilon: 1e-6,
            relative_fitness_epsilon: 1e-6,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_correspondence_distance > 0.0
            && self.max_correspondence_distance.is_finite()
            && self.max_iterations > 0
            && self.relative_rmse_epsilon > 0.0
            && self.relative_fitness_epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "ICP parameters must be strictly positive: {self:?}"
            )))
        }
    }
}

/// Outcome of a registration: the source→target pose and its quality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegistrationResult {
    pub pose: Pose,
    /// RMSE over the final correspondences, meters.
    pub inlier_rmse: f64,
    /// Fraction of source points with a correspondence.
    pub fitness: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RegistrationResult {
    /// Result reporting a failed registration that fell back to `pose`.
    pub fn failed(pose: Pose, iterations: usize) -> Self {
        Self {
            pose,
            inlier_rmse: 0.0,
            fitness: 0.0,
            iterations,
            converged: false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Evaluation {
    rmse: f64,
    fitness: f64,
}

struct Matcher<'a> {
    tree: KdTree,
    source: &'a [Point3<f64>],
    target: &'a [Point3<f64>],
    max_distance: f64,
    moved: Vec<Point3<f64>>,
    pairs: Vec<Correspondence>,
}

impl Matcher<'_> {
    fn evaluate(&mut self, pose: &Pose) -> Evaluation {
        self.moved.clear();
        self.moved.extend(self.source.iter().map(|p| pose.transform_point(p)));
        self.pairs = correspondences_with(&self.tree, &self.moved, self.max_distance);
        let sq: f64 = self.pairs.iter().map(|c| c.distance * c.distance).sum();
        let rmse = if self.pairs.is_empty() {
            0.0
        } else {
            (sq / self.pairs.len() as f64).sqrt()
        };
        Evaluation {
            rmse,
            fitness: self.pairs.len() as f64 / self.source.len() as f64,
        }
    }

    fn step(&self) -> Result<Pose> {
        let pairs = self
            .pairs
            .iter()
            .map(|c| (&self.moved[c.source], &self.target[c.target]));
        align_pairs(pairs, self.pairs.len())
    }
}

/// Changes at or below this are floating-point noise and count as zero.
const CHANGE_FLOOR: f64 = 1e-12;

fn relative_change(prev: f64, next: f64) -> f64 {
    let diff = (next - prev).abs();
    if diff <= CHANGE_FLOOR {
        0.0
    } else if prev > 0.0 {
        diff / prev
    } else {
        diff
    }
}

/// Point-to-point ICP from `init`.
///
/// Each iteration pairs the moved source with its nearest target points,
/// solves the rigid alignment in closed form and composes it onto the
/// estimate. Stops after `max_iterations` or once both relative RMSE and
/// fitness changes fall below their epsilons (`converged = true`). When an
/// iteration has fewer than 3 usable pairs the result falls back to `init`
/// with zero fitness.
pub fn icp(source: &PointCloud, target: &PointCloud, init: &Pose, params: &IcpParams) -> Result<RegistrationResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("ICP needs non-empty source and target clouds"));
    }
    params.validate()?;
    let mut matcher = Matcher {
        tree: KdTree::build(target.points()),
        source: source.points(),
        target: target.points(),
        max_distance: params.max_correspondence_distance,
        moved: Vec::with_capacity(source.len()),
        pairs: Vec::new(),
    };

    let mut pose = *init;
    let mut current = matcher.evaluate(&pose);
    for iteration in 1..=params.max_iterations {
        if matcher.pairs.len() < 3 {
            return Ok(RegistrationResult::failed(*init, iteration));
        }
        let delta = match matcher.step() {
            Ok(delta) => delta,
            Err(Error::DegenerateInput(_)) => return Ok(RegistrationResult::failed(*init, iteration)),
            Err(e) => return Err(e),
        };
        pose = delta.compose(&pose);
        let next = matcher.evaluate(&pose);
        let converged = relative_change(current.rmse, next.rmse) < params.relative_rmse_epsilon
            && relative_change(current.fitness, next.fitness) < params.relative_fitness_epsilon;
        current = next;
        if matcher.pairs.len() < 3 {
            return Ok(RegistrationResult::failed(*init, iteration));
        }
        if converged || iteration == params.max_iterations {
            return Ok(RegistrationResult {
                pose,
                inlier_rmse: current.rmse,
                fitness: current.fitness,
                iterations: iteration,
                converged,
            });
        }
    }
    unreachable!("max_iterations is at least 1")
}

/// RMSE and fitness of `source` moved by `pose` against `target`, under the
/// given correspondence threshold.
pub fn evaluate_registration(
    source: &PointCloud,
    target: &PointCloud,
    pose: &Pose,
    max_distance: f64,
) -> Result<(f64, f64)> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("evaluation needs non-empty clouds"));
    }
    check_distance(max_distance)?;
    let mut matcher = Matcher {
        tree: KdTree::build(target.points()),
        source: source.points(),
        target: target.points(),
        max_distance,
        moved: Vec::new(),
        pairs: Vec::new(),
    };
    let e = matcher.evaluate(pose);
    Ok((e.rmse, e.fitness))
}
