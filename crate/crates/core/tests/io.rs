use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use proptest::prelude::*;
use tempfile::TempDir;

use cofi::error::Error;
use cofi::geometry::{PointCloud, Pose};
use cofi::io::{
    read_calibration, read_labels, read_map, read_map_pair, read_poses, read_scan, write_calibration, write_labels,
    write_map, write_map_pair, write_poses, write_scan, SequenceSource,
};
use cofi::mapgen::{build_maps, FeatureConfig, MapGenConfig};
use cofi::synth::{corridor_sequence, kitti_like_calibration, write_sequence, CorridorConfig};

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn scan_fixtures() {
    let dir = TempDir::new().unwrap();
    let two = write(
        dir.path(),
        "two.bin",
        &f32_bytes(&[1.0, 2.0, 3.0, 0.5, -4.0, 5.5, 6.0, 0.9]),
    );
    let cloud = read_scan(&two).unwrap();
    assert_eq!(
        cloud.points(),
        &[Point3::new(1.0, 2.0, 3.0), Point3::new(-4.0, 5.5, 6.0)]
    );
    assert_eq!(cloud.intensity(), Some(&[0.5f32, 0.9][..]));

    let empty = write(dir.path(), "empty.bin", &[]);
    assert!(read_scan(&empty).unwrap().is_empty());

    let odd = write(dir.path(), "odd.bin", &[0u8; 17]);
    assert!(matches!(read_scan(&odd), Err(Error::CorruptFile { .. })));
    assert!(matches!(
        read_scan(&dir.path().join("missing.bin")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn label_fixtures_drop_instance_bits() {
    let dir = TempDir::new().unwrap();
    let bytes: Vec<u8> = [0x0000_0028u32, 0x0001_0028, 0x00FF_0032]
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let path = write(dir.path(), "a.label", &bytes);
    assert_eq!(read_labels(&path, 3).unwrap(), vec![40, 40, 50]);
    assert!(matches!(read_labels(&path, 4), Err(Error::CorruptFile { .. })));
    let ragged = write(dir.path(), "b.label", &bytes[..5]);
    assert!(matches!(read_labels(&ragged, 1), Err(Error::CorruptFile { .. })));

    write_labels(&path, &[10, 48, 81]).unwrap();
    assert_eq!(read_labels(&path, 3).unwrap(), vec![10, 48, 81]);
}

#[test]
fn pose_file_parsing() {
    let dir = TempDir::new().unwrap();
    let identity = write(
        dir.path(),
        "id.txt",
        b"1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 2.5 0 1 0 0 0 0 1 -1\n",
    );
    let poses = read_poses(&identity, None).unwrap();
    assert_eq!(poses.len(), 2);
    assert_eq!(poses[0], Pose::identity());
    assert_eq!(*poses[1].translation(), Vector3::new(2.5, 0.0, -1.0));

    let short = write(
        dir.path(),
        "short.txt",
        b"1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n",
    );
    assert!(matches!(read_poses(&short, None), Err(Error::Parse { line: 2, .. })));
    let garbage = write(dir.path(), "bad.txt", b"1 0 0 0 0 1 0 x 0 0 1 0\n");
    assert!(matches!(read_poses(&garbage, None), Err(Error::Parse { line: 1, .. })));
    let skewed = write(dir.path(), "skew.txt", b"2 0 0 0 0 1 0 0 0 0 1 0\n");
    assert!(matches!(read_poses(&skewed, None), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn calibration_conjugates_camera_poses() {
    let dir = TempDir::new().unwrap();
    let line = write(dir.path(), "p.txt", b"1 0 0 0 0 1 0 0 0 0 1 0\n");
    let calib = write(dir.path(), "calib.txt", b"P0: 1 2 3\nTr: 1 0 0 0 0 1 0 0 0 0 1 0\n");
    let tr = read_calibration(&calib).unwrap();
    assert_eq!(tr, Pose::identity());
    assert_eq!(read_poses(&line, Some(&tr)).unwrap(), vec![Pose::identity()]);

    // camera moving 1 m along its z axis is the LiDAR moving 1 m along x
    let tr = kitti_like_calibration();
    let forward = write(dir.path(), "f.txt", b"1 0 0 0 0 1 0 0 0 0 1 1\n");
    let lidar = read_poses(&forward, Some(&tr)).unwrap()[0];
    assert!(lidar.approx_eq(&Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)), 1e-12));

    let yaw = Pose::from_yaw(std::f64::consts::FRAC_PI_2, Vector3::zeros());
    let turned = Pose::new(
        Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        Vector3::zeros(),
    )
    .unwrap();
    assert!(yaw.approx_eq(&turned, 1e-15));
    let path = dir.path().join("calib2.txt");
    write_calibration(&path, &tr).unwrap();
    assert!(read_calibration(&path).unwrap().approx_eq(&tr, 1e-9));
    let none = write(dir.path(), "nocalib.txt", b"P0: 1 2 3\n");
    assert!(matches!(read_calibration(&none), Err(Error::CorruptFile { .. })));
}

#[test]
fn map_files_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("m.cmap");

    write_map(&path, &PointCloud::empty(), 0.2).unwrap();
    let (empty, header) = read_map(&path).unwrap();
    assert!(empty.is_empty());
    assert_eq!((header.count, header.resolution, header.labeled), (0, 0.2, false));

    let labeled = PointCloud::from_labeled(
        vec![
            Point3::new(1.5, -2.25, 0.125),
            Point3::new(100.0, 0.0, -3.0),
            Point3::new(0.0, 0.0, 0.0),
        ],
        vec![50, 80, 40],
    )
    .unwrap();
    write_map(&path, &labeled, 0.5).unwrap();
    let (back, header) = read_map(&path).unwrap();
    assert_eq!(back, labeled);
    assert!(header.labeled);

    let plain = PointCloud::new((0..1000).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect()).unwrap();
    write_map(&path, &plain, 0.2).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), 32 + 12 * 1000);
    write_map(&path, &plain.clone().with_labels(vec![40; 1000]).unwrap(), 0.2).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().len(), 32 + 16 * 1000);

    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    let bad_magic = write(dir.path(), "magic.cmap", &bytes);
    assert!(matches!(read_map(&bad_magic), Err(Error::UnsupportedFormat { .. })));
    bytes[0] = b'C';
    bytes[8] = 9;
    let bad_version = write(dir.path(), "version.cmap", &bytes);
    assert!(matches!(read_map(&bad_version), Err(Error::UnsupportedFormat { .. })));
}

#[test]
fn map_pair_round_trip() {
    let seq = corridor_sequence(&CorridorConfig {
        frames: 6,
        ..CorridorConfig::default()
    })
    .unwrap();
    let config = MapGenConfig {
        features: FeatureConfig {
            range_image: seq.scanner.range_image,
            ..FeatureConfig::default()
        },
        ..MapGenConfig::default()
    };
    let maps = build_maps(&seq.pairs(), &config).unwrap();
    let dir = TempDir::new().unwrap();
    let prefix = dir.path().join("out/corridor");
    write_map_pair(&prefix, &maps).unwrap();
    let back = read_map_pair(&prefix).unwrap();
    assert_eq!(back.voxel_resolution, maps.voxel_resolution);
    assert_eq!(back.feature_map.len(), maps.feature_map.len());
    assert_eq!(back.long_lasting_map.labels(), maps.long_lasting_map.labels());
    for (a, b) in back
        .long_lasting_map
        .points()
        .iter()
        .zip(maps.long_lasting_map.points())
    {
        assert!((a - b).norm() < 1e-4);
    }
    assert_eq!(back.keyframe_poses.len(), maps.keyframe_poses.len());
    assert_eq!(back.stats.total_frames, maps.stats.total_frames);
    assert!((back.stats.feature_fraction - maps.stats.feature_fraction).abs() < 1e-12);
}

#[test]
fn sequence_directory_loads_lidar_frame_data() {
    let seq = corridor_sequence(&CorridorConfig {
        frames: 3,
        ..CorridorConfig::default()
    })
    .unwrap();
    let dir = TempDir::new().unwrap();
    write_sequence(dir.path(), &seq, &kitti_like_calibration()).unwrap();
    let source = SequenceSource::open(dir.path()).unwrap();
    assert_eq!(source.len(), 3);
    assert!(source.has_labels());
    let frame = source.load_frame(1).unwrap();
    assert_eq!(frame.labels(), seq.frames[1].labels());
    assert_eq!(
        source.raw_point_count().unwrap(),
        seq.frames.iter().map(|f| f.len() as u64).sum()
    );
    for (got, want) in source.load_poses().unwrap().iter().zip(&seq.poses) {
        assert!(got.approx_eq(want, 1e-6));
    }
    assert!(source.load_frame(3).is_err());

    fs::remove_file(dir.path().join("labels/000002.label")).unwrap();
    assert!(SequenceSource::open(dir.path()).is_err());
    fs::remove_dir_all(dir.path().join("labels")).unwrap();
    fs::remove_file(dir.path().join("velodyne/000002.bin")).unwrap();
    let unlabeled = SequenceSource::open(dir.path()).unwrap();
    assert!(!unlabeled.has_labels());
    assert!(unlabeled.load_poses().is_err());
}

fn pose_strategy() -> impl Strategy<Value = Pose> {
    (
        (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64),
        0.0..std::f64::consts::PI,
        (-1000.0..1000.0f64, -1000.0..1000.0f64, -100.0..100.0f64),
    )
        .prop_map(|((ax, ay, az), angle, (x, y, z))| {
            Pose::from_axis_angle(&Vector3::new(ax, ay, az), angle, Vector3::new(x, y, z))
        })
}

fn f32_cloud(labeled: bool) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(
        ((-500.0..500.0f32, -500.0..500.0f32, -50.0..50.0f32), any::<u16>()),
        0..200,
    )
    .prop_map(move |v| {
        let points = v
            .iter()
            .map(|((x, y, z), _)| Point3::new(f64::from(*x), f64::from(*y), f64::from(*z)))
            .collect();
        let cloud = PointCloud::new(points).unwrap();
        if labeled {
            cloud.with_labels(v.iter().map(|(_, l)| *l).collect()).unwrap()
        } else {
            cloud
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn poses_survive_a_write_read_cycle(poses in prop::collection::vec(pose_strategy(), 1..20)) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("p.txt");
        write_poses(&path, &poses).unwrap();
        let back = read_poses(&path, None).unwrap();
        prop_assert_eq!(back.len(), poses.len());
        for (a, b) in back.iter().zip(&poses) {
            prop_assert!(a.approx_eq(b, 1e-6));
        }
    }

    #[test]
    fn maps_survive_a_write_read_cycle(cloud in prop_oneof![f32_cloud(true), f32_cloud(false)], r in 0.01..10.0f64) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.cmap");
        write_map(&path, &cloud, r).unwrap();
        let (back, header) = read_map(&path).unwrap();
        prop_assert_eq!(back, cloud);
        prop_assert_eq!(header.resolution, r);
    }

    #[test]
    fn scans_survive_a_write_read_cycle(cloud in f32_cloud(false)) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("s.bin");
        write_scan(&path, &cloud).unwrap();
        let back = read_scan(&path).unwrap();
        prop_assert_eq!(back.points(), cloud.points());
    }

    #[test]
    fn truncated_files_are_rejected(cloud in f32_cloud(true), cut in 1usize..16) {
        prop_assume!(!cloud.is_empty());
        let dir = TempDir::new().unwrap();
        let scan = dir.path().join("s.bin");
        write_scan(&scan, &cloud).unwrap();
        let bytes = fs::read(&scan).unwrap();
        fs::write(&scan, &bytes[..bytes.len() - cut]).unwrap();
        prop_assert!(read_scan(&scan).is_err());

        let labels = dir.path().join("l.label");
        write_labels(&labels, cloud.labels().unwrap()).unwrap();
        let bytes = fs::read(&labels).unwrap();
        fs::write(&labels, &bytes[..bytes.len() - cut.min(4)]).unwrap();
        prop_assert!(read_labels(&labels, cloud.len()).is_err());

        let map = dir.path().join("m.cmap");
        write_map(&map, &cloud, 0.2).unwrap();
        let bytes = fs::read(&map).unwrap();
        fs::write(&map, &bytes[..bytes.len() - cut]).unwrap();
        prop_assert!(read_map(&map).is_err());
    }

    #[test]
    fn truncated_pose_lines_are_rejected(poses in prop::collection::vec(pose_strategy(), 1..5), drop in 1usize..12) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("p.txt");
        write_poses(&path, &poses).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let last = lines.pop().unwrap();
        let kept = last.split_whitespace().take(12 - drop).collect::<Vec<_>>().join(" ");
        lines.push(kept);
        fs::write(&path, lines.join("\n")).unwrap();
        let rejected = matches!(read_poses(&path, None), Err(Error::Parse { line, .. }) if line == poses.len());
        prop_assert!(rejected);
    }
}
