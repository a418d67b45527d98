//! Synthetic labeled scenes, a ray-casting rotating scanner, and sequence
//! generation with exact ground truth.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{Label, PointCloud, Pose, RangeImageConfig};
use crate::io::kitti::{lidar_to_camera, write_calibration, write_labels, write_poses, write_scan};
use crate::io::SEQUENCE_CONFIG;
use crate::mapgen::semantic_kitti::*;

const HIT_EPS: f64 = 1e-9;

/// A closed surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Box rotated by `yaw` about the vertical axis through `center`.
    Box {
        center: Point3<f64>,
        half: Vector3<f64>,
        yaw: f64,
    },
    /// Vertical cylinder from `base.z` to `base.z + height`, open ends.
    Cylinder {
        base: Point3<f64>,
        radius: f64,
        height: f64,
    },
    Sphere {
        center: Point3<f64>,
        radius: f64,
    },
}

impl Shape {
    /// Distance along the unit direction `dir` to the first surface hit.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Box { center, half, yaw } => {
                let (s, c) = (-yaw).sin_cos();
                let rot = |v: Vector3<f64>| Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z);
                let o = rot(origin - center);
                let d = rot(*dir);
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k].abs() > half[k] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-half[k] - o[k]) / d[k];
                    let t2 = (half[k] - o[k]) / d[k];
                    t_near = t_near.max(t1.min(t2));
                    t_far = t_far.min(t1.max(t2));
                }
                if t_near > t_far || t_far < HIT_EPS {
                    return None;
                }
                Some(if t_near > HIT_EPS { t_near } else { t_far })
            }
            Shape::Cylinder { base, radius, height } => {
                let ox = origin.x - base.x;
                let oy = origin.y - base.y;
                let a = dir.x * dir.x + dir.y * dir.y;
                if a < 1e-15 {
                    return None;
                }
                let b = ox * dir.x + oy * dir.y;
                let c = ox * ox + oy * oy - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| {
                    let z = origin.z + t * dir.z;
                    t > HIT_EPS && z >= base.z && z <= base.z + height
                })
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [-b - sq, -b + sq].into_iter().find(|&t| t > HIT_EPS)
            }
        }
    }

    /// Center and radius of a circle enclosing the shape's footprint.
    fn footprint(&self) -> (f64, f64, f64) {
        match *self {
            Shape::Box { center, half, .. } => (center.x, center.y, half.x.hypot(half.y)),
            Shape::Cylinder { base, radius, .. } => (base.x, base.y, radius),
            Shape::Sphere { center, radius } => (center.x, center.y, radius),
        }
    }

    /// Surface area of the parts that [`Shape::sample`] draws from.
    pub fn area(&self) -> f64 {
        match *self {
            Shape::Box { half, .. } => {
                // side faces and top
                8.0 * half.z * (half.x + half.y) + 4.0 * half.x * half.y
            }
            Shape::Cylinder { radius, height, .. } => TAU * radius * height,
            Shape::Sphere { radius, .. } => 4.0 * PI * radius * radius,
        }
    }

    /// Uniform random point on the surface (boxes: sides and top).
    pub fn sample(&self, rng: &mut impl Rng) -> Point3<f64> {
        match *self {
            Shape::Box { center, half, yaw } => {
                let faces = [
                    4.0 * half.y * half.z,
                    4.0 * half.y * half.z,
                    4.0 * half.x * half.z,
                    4.0 * half.x * half.z,
                    4.0 * half.x * half.y,
                ];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut face = 4;
                for (k, a) in faces.iter().enumerate() {
                    if pick < *a {
                        face = k;
                        break;
                    }
                    pick -= a;
                }
                let mut u = || rng.random::<f64>() * 2.0 - 1.0;
                let local = match face {
                    0 => Vector3::new(half.x, u() * half.y, u() * half.z),
                    1 => Vector3::new(-half.x, u() * half.y, u() * half.z),
                    2 => Vector3::new(u() * half.x, half.y, u() * half.z),
                    3 => Vector3::new(u() * half.x, -half.y, u() * half.z),
                    _ => Vector3::new(u() * half.x, u() * half.y, half.z),
                };
                let (s, c) = yaw.sin_cos();
                center + Vector3::new(c * local.x - s * local.y, s * local.x + c * local.y, local.z)
            }
            Shape::Cylinder { base, radius, height } => {
                let a = rng.random::<f64>() * TAU;
                base + Vector3::new(radius * a.cos(), radius * a.sin(), rng.random::<f64>() * height)
            }
            Shape::Sphere { center, radius } => {
                let z = rng.random::<f64>() * 2.0 - 1.0;
                let a = rng.random::<f64>() * TAU;
                let r = (1.0 - z * z).sqrt();
                center + radius * Vector3::new(r * a.cos(), r * a.sin(), z)
            }
        }
    }
}

/// A labeled shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub label: Label,
}

/// Horizontal ground plane at `z = 0` whose label depends on `|y|`: the first
/// band with `|y| < limit` wins, `outer_label` beyond the last band.
#[derive(Clone, Debug, PartialEq)]
pub struct Ground {
    pub bands: Vec<(f64, Label)>,
    pub outer_label: Label,
}

impl Ground {
    pub fn label_at(&self, y: f64) -> Label {
        self.bands
            .iter()
            .find(|(limit, _)| y.abs() < *limit)
            .map_or(self.outer_label, |(_, l)| *l)
    }
}

impl Default for Ground {
    fn default() -> Self {
        Self {
            bands: vec![(4.0, ROAD), (7.0, SIDEWALK)],
            outer_label: TERRAIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub ground: Ground,
    pub primitives: Vec<Primitive>,
}

/// Ray hit: distance and label.
pub type Hit = (f64, Label);

impl Scene {
    /// Nearest hit over the ground and all primitives.
    pub fn cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        self.cast_among(origin, dir, self.primitives.iter())
    }

    fn cast_among<'a>(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        candidates: impl Iterator<Item = &'a Primitive>,
    ) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if dir.z < -1e-12 && origin.z > 0.0 {
            let t = -origin.z / dir.z;
            best = Some((t, self.ground.label_at(origin.y + t * dir.y)));
        }
        for p in candidates {
            if let Some(t) = p.shape.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, p.label));
                }
            }
        }
        best
    }

    /// Area-weighted uniform samples over the primitives and the ground
    /// rectangle `[x0, x1] × [y0, y1]`, with isotropic Gaussian noise.
    pub fn sample_surfaces(
        &self,
        count: usize,
        ground_extent: [f64; 4],
        noise_sigma: f64,
        seed: u64,
    ) -> Result<PointCloud> {
        let [x0, x1, y0, y1] = ground_extent;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::invalid("ground extent must be non-empty"));
        }
        let noise = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::invalid(format!("noise sigma: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut areas: Vec<f64> = self.primitives.iter().map(|p| p.shape.area()).collect();
        areas.push((x1 - x0) * (y1 - y0));
        let total: f64 = areas.iter().sum();
        let mut points = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let mut pick = rng.random::<f64>() * total;
            let mut which = areas.len() - 1;
            for (k, a) in areas.iter().enumerate() {
                if pick < *a {
                    which = k;
                    break;
                }
                pick -= a;
            }
            let (p, l) = match self.primitives.get(which) {
                Some(prim) => (prim.shape.sample(&mut rng), prim.label),
                None => {
                    let x = x0 + rng.random::<f64>() * (x1 - x0);
                    let y = y0 + rng.random::<f64>() * (y1 - y0);
                    (Point3::new(x, y, 0.0), self.ground.label_at(y))
                }
            };
            let jitter = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            points.push(p + jitter);
            labels.push(l);
        }
        PointCloud::from_labeled(points, labels)
    }
}

/// Rotating multi-beam scanner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScannerConfig {
    /// Beam elevations and azimuth bins; a scan organizes onto this grid
    /// one point per cell.
    pub range_image: RangeImageConfig,
    pub max_range: f64,
    /// Standard deviation of the Gaussian range noise, meters.
    pub range_noise: f64,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        Self {
            range_image: RangeImageConfig {
                rows: 64,
                cols: 512,
                ..RangeImageConfig::default()
            },
            max_range: 80.0,
            range_noise: 0.02,
        }
    }
}

impl ScannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.range_image.validate()?;
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("scanner max range must be positive"));
        }
        if !(self.range_noise >= 0.0) {
            return Err(Error::invalid("scanner range noise must be non-negative"));
        }
        Ok(())
    }
}

fn label_intensity(label: Label) -> f32 {
    match label {
        ROAD => 0.1,
        SIDEWALK => 0.2,
        TERRAIN => 0.25,
        BUILDING => 0.4,
        POLE | TRAFFIC_SIGN => 0.8,
        _ => 0.3,
    }
}

const AZIMUTH_BINS: usize = 720;

/// Primitives in range of a sensor position, bucketed by world azimuth.
struct AzimuthBuckets<'a> {
    all: Vec<&'a Primitive>,
    bins: Vec<Vec<u32>>,
}

impl<'a> AzimuthBuckets<'a> {
    fn new(scene: &'a Scene, origin: &Point3<f64>, max_range: f64) -> Self {
        let mut all = Vec::new();
        let mut bins = vec![Vec::new(); AZIMUTH_BINS];
        let bin_width = TAU / AZIMUTH_BINS as f64;
        for p in &scene.primitives {
            let (cx, cy, r) = p.shape.footprint();
            let (dx, dy) = (cx - origin.x, cy - origin.y);
            let d = dx.hypot(dy);
            if d - r > max_range {
                continue;
            }
            let id = all.len() as u32;
            all.push(p);
            if d <= r * 1.01 + 1e-6 {
                bins.iter_mut().for_each(|b| b.push(id));
                continue;
            }
            let center = dy.atan2(dx);
            let half = (r / d).min(1.0).asin() + 2.0 * bin_width;
            let lo = ((center - half + PI) / bin_width).floor() as i64;
            let hi = ((center + half + PI) / bin_width).floor() as i64;
            for b in lo..=hi {
                bins[b.rem_euclid(AZIMUTH_BINS as i64) as usize].push(id);
            }
        }
        Self { all, bins }
    }

    fn candidates(&self, dir: &Vector3<f64>) -> impl Iterator<Item = &'a Primitive> + '_ {
        let bin_width = TAU / AZIMUTH_BINS as f64;
        let b = ((dir.y.atan2(dir.x) + PI) / bin_width).floor() as i64;
        self.bins[b.rem_euclid(AZIMUTH_BINS as i64) as usize]
            .iter()
            .map(|&i| self.all[i as usize])
    }
}

/// Simulates one scan from `pose` (sensor to world). The returned cloud is in
/// the sensor frame, labeled, with one point per range-image cell at most,
/// ordered row by row.
pub fn scan(scene: &Scene, pose: &Pose, scanner: &ScannerConfig, seed: u64) -> Result<PointCloud> {
    scanner.validate()?;
    let cfg = &scanner.range_image;
    let noise = Normal::new(0.0, scanner.range_noise).map_err(|e| Error::invalid(format!("range noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = pose.position();
    let buckets = AzimuthBuckets::new(scene, &origin, scanner.max_range);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut intensity = Vec::new();
    for row in 0..cfg.rows {
        let el = cfg.row_elevation(row);
        for col in 0..cfg.cols {
            let az = cfg.col_azimuth(col);
            let local = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let dir = pose.transform_vector(&local);
            let n: f64 = noise.sample(&mut rng);
            let Some((t, label)) = scene.cast_among(&origin, &dir, buckets.candidates(&dir)) else {
                continue;
            };
            if t > scanner.max_range {
                continue;
            }
            let r = (t + n).max(crate::geometry::MIN_RANGE * 10.0);
            points.push(Point3::from(local * r));
            labels.push(label);
            intensity.push(label_intensity(label));
        }
    }
    PointCloud::from_parts(points, Some(labels), Some(intensity))
}

/// Shape of the synthetic drive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorridorConfig {
    pub frames: usize,
    /// Distance along the street between frames, meters.
    pub spacing: f64,
    /// Lateral lane-weave amplitude, meters.
    pub weave_amplitude: f64,
    /// Lane-weave period along the street, meters.
    pub weave_period: f64,
    pub sensor_height: f64,
    pub seed: u64,
    pub scanner: ScannerConfig,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            spacing: 1.0,
            weave_amplitude: 1.5,
            weave_period: 60.0,
            sensor_height: 1.73,
            seed: 7,
            scanner: ScannerConfig::default(),
        }
    }
}

/// Ground-truth sensor poses of the corridor drive: along `+x`, weaving in
/// `y`, heading tangent to the path.
pub fn corridor_poses(config: &CorridorConfig) -> Vec<Pose> {
    let k = TAU / config.weave_period;
    (0..config.frames)
        .map(|i| {
            let x = i as f64 * config.spacing;
            let y = config.weave_amplitude * (k * x).sin();
            let yaw = (config.weave_amplitude * k * (k * x).cos()).atan();
            Pose::from_yaw(yaw, Vector3::new(x, y, config.sensor_height))
        })
        .collect()
}

/// Street lined with buildings, poles with signs, trees and parked cars,
/// covering `x ∈ [x_min, x_max]`.
pub fn corridor_scene(x_min: f64, x_max: f64, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prims = Vec::new();
    for side in [-1.0, 1.0] {
        // building blocks with gaps, setbacks and a little yaw
        let mut x = x_min + rng.random_range(0.0..6.0);
        while x < x_max {
            let len = rng.random_range(8.0..20.0);
            let depth = rng.random_range(8.0..14.0);
            let height = rng.random_range(6.0..20.0);
            let setback = rng.random_range(10.0..13.0);
            let yaw = rng.random_range(-0.15..0.15);
            prims.push(Primitive {
                shape: Shape::Box {
                    center: Point3::new(x + len / 2.0, side * (setback + depth / 2.0), height / 2.0),
                    half: Vector3::new(len / 2.0, depth / 2.0, height / 2.0),
                    yaw,
                },
                label: BUILDING,
            });
            x += len + rng.random_range(3.0..9.0);
        }
        // poles, some carrying a sign
        let mut x = x_min + rng.random_range(0.0..10.0);
        while x < x_max {
            let base = Point3::new(x, side * 6.5, 0.0);
            prims.push(Primitive {
                shape: Shape::Cylinder {
                    base,
                    radius: 0.12,
                    height: 6.0,
                },
                label: POLE,
            });
            if rng.random_bool(0.4) {
                prims.push(Primitive {
                    shape: Shape::Box {
                        center: Point3::new(x, side * 6.0, 3.0),
                        half: Vector3::new(0.04, 0.4, 0.4),
                        yaw: 0.0,
                    },
                    label: TRAFFIC_SIGN,
                });
            }
            x += rng.random_range(10.0..18.0);
        }
        // trees on the verge
        let mut x = x_min + rng.random_range(0.0..10.0);
        while x < x_max {
            let y = side * rng.random_range(8.0..9.0);
            prims.push(Primitive {
                shape: Shape::Cylinder {
                    base: Point3::new(x, y, 0.0),
                    radius: 0.2,
                    height: 3.2,
                },
                label: TRUNK,
            });
            prims.push(Primitive {
                shape: Shape::Sphere {
                    center: Point3::new(x, y, 4.5),
                    radius: rng.random_range(1.2..2.0),
                },
                label: VEGETATION,
            });
            x += rng.random_range(12.0..25.0);
        }
        // parked cars in the outer lane
        let mut x = x_min + rng.random_range(0.0..15.0);
        while x < x_max {
            prims.push(Primitive {
                shape: Shape::Box {
                    center: Point3::new(x, side * 3.3, 0.75),
                    half: Vector3::new(2.25, 0.9, 0.75),
                    yaw: rng.random_range(-0.05..0.05),
                },
                label: CAR,
            });
            x += rng.random_range(12.0..30.0);
        }
    }
    Scene {
        ground: Ground::default(),
        primitives: prims,
    }
}

/// Compact city block around the origin for registration experiments.
pub fn urban_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prims = Vec::new();
    let building_sites: [(f64, f64); 6] = [
        (-18.0, 16.0),
        (0.0, 17.0),
        (18.0, 15.0),
        (-17.0, -16.0),
        (3.0, -17.0),
        (19.0, -16.0),
    ];
    for (x, y) in building_sites {
        let (hx, hy) = (rng.random_range(4.0..8.0), rng.random_range(3.0..6.0));
        let h = rng.random_range(6.0..18.0);
        prims.push(Primitive {
            shape: Shape::Box {
                center: Point3::new(x, y + y.signum() * hy, h / 2.0),
                half: Vector3::new(hx, hy, h / 2.0),
                yaw: rng.random_range(-0.3..0.3),
            },
            label: BUILDING,
        });
    }
    for i in 0..8 {
        let x = -21.0 + 6.0 * i as f64 + rng.random_range(-1.0..1.0);
        let y = if i % 2 == 0 { 6.5 } else { -6.5 };
        prims.push(Primitive {
            shape: Shape::Cylinder {
                base: Point3::new(x, y, 0.0),
                radius: 0.12,
                height: 6.0,
            },
            label: POLE,
        });
    }
    for (x, y) in [(-10.0, 8.5), (9.0, -8.5), (22.0, 8.5), (-24.0, -8.5)] {
        prims.push(Primitive {
            shape: Shape::Cylinder {
                base: Point3::new(x, y, 0.0),
                radius: 0.2,
                height: 3.2,
            },
            label: TRUNK,
        });
        prims.push(Primitive {
            shape: Shape::Sphere {
                center: Point3::new(x, y, 4.5),
                radius: 1.6,
            },
            label: VEGETATION,
        });
    }
    for (x, y) in [(-5.0, 3.3), (12.0, -3.3), (-15.0, -3.3)] {
        prims.push(Primitive {
            shape: Shape::Box {
                center: Point3::new(x, y, 0.75),
                half: Vector3::new(2.25, 0.9, 0.75),
                yaw: 0.0,
            },
            label: CAR,
        });
    }
    Scene {
        ground: Ground::default(),
        primitives: prims,
    }
}

/// Ground extent used when sampling [`urban_scene`].
pub const URBAN_GROUND_EXTENT: [f64; 4] = [-30.0, 30.0, -30.0, 30.0];

/// Simulated drive with exact ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub frames: Vec<PointCloud>,
    pub poses: Vec<Pose>,
    pub scanner: ScannerConfig,
}

impl SyntheticSequence {
    pub fn pairs(&self) -> Vec<(PointCloud, Pose)> {
        self.frames.iter().cloned().zip(self.poses.iter().copied()).collect()
    }
}

pub fn corridor_sequence(config: &CorridorConfig) -> Result<SyntheticSequence> {
    if config.frames == 0 {
        return Err(Error::invalid("corridor needs at least one frame"));
    }
    if !(config.spacing > 0.0 && config.weave_period > 0.0) {
        return Err(Error::invalid("corridor spacing and weave period must be positive"));
    }
    let poses = corridor_poses(config);
    let end = poses.last().map_or(0.0, |p| p.translation().x);
    let margin = config.scanner.max_range + 20.0;
    let scene = corridor_scene(-margin, end + margin, config.seed);
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            scan(
                &scene,
                pose,
                &config.scanner,
                config.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            )
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticSequence {
        frames,
        poses,
        scanner: config.scanner,
    })
}

/// LiDAR-to-camera transform with the axis convention of the KITTI
/// odometry calibration (camera z forward, x right, y down).
pub fn kitti_like_calibration() -> Pose {
    let m = nalgebra::Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    Pose::new(m, Vector3::new(-0.004, -0.076, -0.272)).expect("axis permutation is a rotation")
}

/// Writes a sequence directory: `velodyne/`, `labels/`, `calib.txt`,
/// camera-frame `poses.txt` and a settings file with the scanner geometry.
pub fn write_sequence(dir: &Path, seq: &SyntheticSequence, calibration: &Pose) -> Result<()> {
    let velodyne = dir.join("velodyne");
    let labels = dir.join("labels");
    for d in [&velodyne, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (i, frame) in seq.frames.iter().enumerate() {
        write_scan(&velodyne.join(format!("{i:06}.bin")), frame)?;
        let l = frame.require_labels("sequence writing")?;
        write_labels(&labels.join(format!("{i:06}.label")), l)?;
    }
    write_calibration(&dir.join("calib.txt"), calibration)?;
    let cam: Vec<Pose> = seq.poses.iter().map(|p| lidar_to_camera(p, calibration)).collect();
    write_poses(&dir.join("poses.txt"), &cam)?;
    let ri = &seq.scanner.range_image;
    let cfg = format!(
        "range_rows = {}\nrange_cols = {}\nfov_down = {}\nfov_up = {}\n",
        ri.rows, ri.cols, ri.fov_down_deg, ri.fov_up_deg
    );
    let path = dir.join(SEQUENCE_CONFIG);
    fs::write(&path, cfg).map_err(|e| Error::io(&path, e))
}
