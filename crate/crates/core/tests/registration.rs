use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use cofi::geometry::{voxel_downsample, PointCloud, Pose};
use cofi::registration::{
    best_rigid_align, cofi_icp, evaluate_registration, find_correspondences, gate_check, icp,
    stage_correspondence_distance, CofiSchedule, GateParams, IcpParams,
};
use cofi::synth::{urban_scene, URBAN_GROUND_EXTENT};
use cofi::Error;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(lo..hi),
                    rng.random_range(lo..hi),
                    rng.random_range(lo..hi),
                )
            })
            .collect(),
    )
    .unwrap()
}

fn brute_force(source: &PointCloud, target: &PointCloud, max_distance: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, p) in source.points().iter().enumerate() {
        let mut best = (0, f64::INFINITY);
        for (j, q) in target.points().iter().enumerate() {
            let d = (p - q).norm();
            if d < best.1 {
                best = (j, d);
            }
        }
        if best.1 <= max_distance {
            out.push((i, best.0));
        }
    }
    out
}

fn pairs_of(source: &PointCloud, target: &PointCloud, max_distance: f64) -> Vec<(usize, usize)> {
    find_correspondences(source, target, max_distance)
        .unwrap()
        .iter()
        .map(|c| (c.source, c.target))
        .collect()
}

/// Urban scene sampled to `n` points, with the scene's own seed fixed.
fn urban_cloud(n: usize, seed: u64) -> PointCloud {
    urban_scene(3)
        .sample_surfaces(n, URBAN_GROUND_EXTENT, 0.01, seed)
        .unwrap()
}

#[test]
fn correspondences_match_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let source = random_cloud(&mut rng, 500, 0.0, 5.0);
    let target = random_cloud(&mut rng, 500, 0.0, 5.0);
    assert_eq!(pairs_of(&source, &target, 10.0), brute_force(&source, &target, 10.0));
    assert_eq!(pairs_of(&source, &target, 0.2), brute_force(&source, &target, 0.2));
}

#[test]
fn correspondence_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cloud = random_cloud(&mut rng, 200, -3.0, 3.0);
    let self_pairs = find_correspondences(&cloud, &cloud, 0.5).unwrap();
    assert!(self_pairs
        .iter()
        .enumerate()
        .all(|(i, c)| c.source == i && c.target == i && c.distance == 0.0));

    let a = PointCloud::new(vec![Point3::origin()]).unwrap();
    let b = PointCloud::new(vec![Point3::new(0.0, 0.0, 3.0)]).unwrap();
    assert!(find_correspondences(&a, &b, 1.0).unwrap().is_empty());
    assert!(matches!(
        find_correspondences(&a, &PointCloud::empty(), 1.0),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn rigid_align_recovers_constructed_pose() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = Pose::from_axis_angle(&Vector3::new(0.3, -0.5, 0.8), 2.2, Vector3::new(12.0, -4.0, 30.0));
    let source = random_cloud(&mut rng, 10, -10.0, 10.0);
    let pairs: Vec<_> = source.points().iter().map(|s| (*s, truth.transform_point(s))).collect();
    let got = best_rigid_align(&pairs).unwrap();
    assert!(got.distance_to(&truth) < 1e-9);
    assert!(got.angle_to(&truth) < 1e-9);

    let identity: Vec<_> = source.points().iter().map(|s| (*s, *s)).collect();
    assert!(best_rigid_align(&identity).unwrap().approx_eq(&Pose::identity(), 1e-12));
}

#[test]
fn rigid_align_under_gaussian_noise() {
    let sigma = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, sigma).unwrap();
    let truth = Pose::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7, Vector3::new(-3.0, 5.0, 1.0));
    let source = random_cloud(&mut rng, 1000, -10.0, 10.0);
    let pairs: Vec<_> = source
        .points()
        .iter()
        .map(|s| {
            let jitter = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            (*s, truth.transform_point(s) + jitter)
        })
        .collect();
    let got = best_rigid_align(&pairs).unwrap();
    let rmse = (pairs
        .iter()
        .map(|(s, t)| (got.transform_point(s) - t).norm_squared())
        .sum::<f64>()
        / pairs.len() as f64)
        .sqrt();
    // three noise components per point
    assert!(rmse <= 1.2 * sigma * 3f64.sqrt(), "rmse {rmse}");
    assert!(got.angle_to(&truth) < 0.01);
    assert!(got.distance_to(&truth) < 0.02);
}

#[test]
fn rigid_align_rejects_degenerate_pairs() {
    let p = |x: f64| Point3::new(x, 0.0, 0.0);
    assert!(matches!(
        best_rigid_align(&[(p(0.0), p(0.0)), (p(1.0), p(1.0))]),
        Err(Error::DegenerateInput(_))
    ));
    let collinear: Vec<_> = (0..5).map(|i| (p(i as f64), p(i as f64 + 1.0))).collect();
    assert!(matches!(best_rigid_align(&collinear), Err(Error::DegenerateInput(_))));
}

#[test]
fn icp_recovers_small_offset_on_structured_scene() {
    let source = urban_cloud(2000, 11);
    let truth = Pose::from_yaw(5f64.to_radians(), Vector3::new(0.4, 0.3, 0.0));
    let target = truth.apply(&source);
    let params = IcpParams {
        max_correspondence_distance: 2.0,
        max_iterations: 100,
        ..IcpParams::default()
    };
    let result = icp(&source, &target, &Pose::identity(), &params).unwrap();
    assert!(result.pose.distance_to(&truth) < 0.01, "{:?}", result.pose);
    assert!(result.pose.angle_to(&truth).to_degrees() < 0.05);
    // final residual oracle: the recovered pose maps every point onto its copy
    let (rmse, fitness) = evaluate_registration(&source, &target, &result.pose, 0.05).unwrap();
    assert!(rmse < 1e-3 && fitness == 1.0);
}

#[test]
fn icp_identical_clouds_converge_immediately() {
    let cloud = urban_cloud(1000, 12);
    let result = icp(&cloud, &cloud, &Pose::identity(), &IcpParams::default()).unwrap();
    assert!(result.pose.approx_eq(&Pose::identity(), 1e-9));
    assert!(result.inlier_rmse < 1e-9);
    assert!(result.converged);
    assert_eq!(result.iterations, 1);
}

#[test]
fn icp_without_correspondences_returns_init() {
    let cloud = urban_cloud(500, 13);
    let far = Pose::from_translation(Vector3::new(500.0, 0.0, 0.0)).apply(&cloud);
    let init = Pose::from_yaw(0.1, Vector3::new(1.0, 0.0, 0.0));
    let result = icp(&cloud, &far, &init, &IcpParams::default()).unwrap();
    assert_eq!(result.pose, init);
    assert_eq!(result.fitness, 0.0);
    assert!(!result.converged);
}

#[test]
fn gate_check_examples() {
    let gate = GateParams::default();
    let p = Pose::from_yaw(0.3, Vector3::new(1.0, 2.0, 3.0));
    assert!(gate_check(&p, &p, &gate));
    let moved = Pose::from_yaw(0.3, Vector3::new(4.0, 2.0, 3.0));
    assert!(!gate_check(&moved, &p, &gate));
    let axis = Vector3::new(0.2, -0.4, 1.0);
    let turned = |deg: f64| p.compose(&Pose::from_axis_angle(&axis, deg.to_radians(), Vector3::zeros()));
    assert!(gate_check(&turned(4.9999), &p, &gate));
    assert!(!gate_check(&turned(5.0001), &p, &gate));
}

#[test]
fn cofi_identical_clouds_give_identity() {
    let cloud = urban_cloud(5000, 14);
    let out = cofi_icp(
        &cloud,
        &cloud,
        &Pose::identity(),
        &CofiSchedule::default(),
        &GateParams::default(),
        &IcpParams::default(),
    )
    .unwrap();
    assert!(out.pose().approx_eq(&Pose::identity(), 1e-9));
    assert!(out.registration.converged);
    assert_eq!(out.accepted_stages(), 3);
}

#[test]
fn cofi_widens_the_convergence_basin() {
    let world = urban_scene(3);
    let target = world.sample_surfaces(20_000, URBAN_GROUND_EXTENT, 0.01, 1).unwrap();
    let world_source = world.sample_surfaces(20_000, URBAN_GROUND_EXTENT, 0.01, 2).unwrap();
    let truth = Pose::from_yaw(8f64.to_radians(), Vector3::new(3.0 * 0.6, 3.0 * 0.8, 0.0));
    let source = truth.inverse().apply(&world_source);
    let gate = GateParams {
        max_translation_change: 10.0,
        max_rotation_change: 30.0,
    };
    let params = IcpParams::default();
    let out = cofi_icp(
        &source,
        &target,
        &Pose::identity(),
        &CofiSchedule::default(),
        &gate,
        &params,
    )
    .unwrap();
    assert!(
        out.pose().distance_to(&truth) < 0.1,
        "cofi error {}",
        out.pose().distance_to(&truth)
    );
    assert!(out.pose().angle_to(&truth).to_degrees() < 0.5);

    let single = icp(
        &voxel_downsample(&source, 0.2).unwrap(),
        &voxel_downsample(&target, 0.2).unwrap(),
        &Pose::identity(),
        &IcpParams {
            max_correspondence_distance: stage_correspondence_distance(0.2, &params),
            ..params
        },
    )
    .unwrap();
    assert!(
        single.pose.distance_to(&truth) > 0.5,
        "single-stage error {}",
        single.pose.distance_to(&truth)
    );
}

#[test]
fn tight_gate_rejects_first_stage() {
    let cloud = urban_cloud(5000, 15);
    let target = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)).apply(&cloud);
    let gate = GateParams {
        max_translation_change: 0.001,
        max_rotation_change: 5.0,
    };
    let init = Pose::identity();
    let out = cofi_icp(
        &cloud,
        &target,
        &init,
        &CofiSchedule::default(),
        &gate,
        &IcpParams::default(),
    )
    .unwrap();
    assert_eq!(*out.pose(), init);
    assert!(!out.registration.converged);
    assert!(out.gate_rejected());
    assert_eq!(out.accepted_stages(), 0);
    assert_eq!(out.stages.len(), 1);
}

#[test]
fn schedule_and_parameter_validation() {
    assert!(CofiSchedule::new(vec![]).is_err());
    assert!(CofiSchedule::new(vec![1.0, 1.0]).is_err());
    assert!(CofiSchedule::new(vec![0.2, 1.0]).is_err());
    assert!(CofiSchedule::new(vec![1.0, -0.2]).is_err());
    let cloud = urban_cloud(100, 16);
    let bad = IcpParams {
        max_iterations: 0,
        ..IcpParams::default()
    };
    assert!(icp(&cloud, &cloud, &Pose::identity(), &bad).is_err());
    let bad_gate = GateParams {
        max_translation_change: 0.0,
        max_rotation_change: 5.0,
    };
    assert!(cofi_icp(
        &cloud,
        &cloud,
        &Pose::identity(),
        &CofiSchedule::default(),
        &bad_gate,
        &IcpParams::default()
    )
    .is_err());
    assert!(icp(&PointCloud::empty(), &cloud, &Pose::identity(), &IcpParams::default()).is_err());
}

fn pose_strategy(max_angle: f64, max_t: f64) -> impl Strategy<Value = Pose> {
    (
        (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64),
        0.0..max_angle,
        (-max_t..max_t, -max_t..max_t, -max_t..max_t),
    )
        .prop_map(|((ax, ay, az), angle, (x, y, z))| {
            Pose::from_axis_angle(&Vector3::new(ax, ay, az), angle, Vector3::new(x, y, z))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nearest_neighbour_oracle(seed in any::<u64>(), n in 1usize..2000, m in 1usize..2000, max_d in 0.05..20.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = random_cloud(&mut rng, n, -10.0, 10.0);
        let target = random_cloud(&mut rng, m, -10.0, 10.0);
        prop_assert_eq!(pairs_of(&source, &target, max_d), brute_force(&source, &target, max_d));
    }

    #[test]
    fn rigid_align_is_left_equivariant(seed in any::<u64>(), q in pose_strategy(3.1, 50.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_cloud(&mut rng, 20, -5.0, 5.0);
        let t = random_cloud(&mut rng, 20, -5.0, 5.0);
        let pairs: Vec<_> = s.points().iter().copied().zip(t.points().iter().copied()).collect();
        let moved: Vec<_> = pairs.iter().map(|(a, b)| (*a, q.transform_point(b))).collect();
        let p = best_rigid_align(&pairs).unwrap();
        let qp = best_rigid_align(&moved).unwrap();
        prop_assert!(qp.approx_eq(&q.compose(&p), 1e-9));
    }

    #[test]
    fn icp_never_increases_rmse(seed in 0u64..1000, offset in pose_strategy(0.2, 1.0)) {
        let source = urban_cloud(800, seed);
        let target = urban_cloud(800, seed + 5000);
        let params = IcpParams { max_correspondence_distance: 1.5, ..IcpParams::default() };
        let result = icp(&source, &target, &offset, &params).unwrap();
        prop_assume!(result.converged);
        let (rmse_init, _) = evaluate_registration(&source, &target, &offset, params.max_correspondence_distance).unwrap();
        prop_assert!(result.inlier_rmse <= rmse_init + 1e-12);
        prop_assert!((0.0..=1.0).contains(&result.fitness));
    }

    #[test]
    fn single_stage_cofi_is_voxelize_then_icp(seed in 0u64..1000, offset in pose_strategy(0.1, 1.0), r in 0.2..2.0f64) {
        let source = urban_cloud(1500, seed);
        let target = urban_cloud(1500, seed + 7000);
        let gate = GateParams::default();
        let params = IcpParams::default();
        let schedule = CofiSchedule::new(vec![r]).unwrap();
        let ladder = cofi_icp(&source, &target, &offset, &schedule, &gate, &params).unwrap();
        let direct = icp(
            &voxel_downsample(&source, r).unwrap(),
            &voxel_downsample(&target, r).unwrap(),
            &offset,
            &IcpParams { max_correspondence_distance: stage_correspondence_distance(r, &params), ..params },
        )
        .unwrap();
        if gate_check(&direct.pose, &offset, &gate) {
            prop_assert_eq!(ladder.registration, direct);
        } else {
            prop_assert_eq!(*ladder.pose(), offset);
            prop_assert!(!ladder.registration.converged);
        }
    }
}
