use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cofi::evaluation::{ate_csv, evaluate, Trajectory};
use cofi::geometry::{PointCloud, Pose, RangeImageConfig};
use cofi::io::{
    format_pose_line, lidar_to_camera, read_map, read_map_pair, read_poses, read_scan, write_map_pair, write_ply,
    write_poses, KeyValueConfig, SequenceSource, SEQUENCE_CONFIG,
};
use cofi::localization::{localize_frame, LocalizerConfig, LocalizerState, Step3Source, StepStatus};
use cofi::mapgen::{select_keyframes, FeatureConfig, MapBuilder, MapGenConfig, SemanticPolicy};
use cofi::registration::{cofi_icp, CofiSchedule, GateParams, IcpParams};
use cofi::synth::{corridor_sequence, kitti_like_calibration, write_sequence, CorridorConfig};
use cofi::{Error, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_FALLBACK: u8 = 2;

/// Keys accepted in a `--config` file. Each mirrors a command-line flag.
const CONFIG_KEYS: &[&str] = &[
    "schedule",
    "step4_schedule",
    "gate_trans",
    "gate_rot",
    "max_correspondence",
    "max_iterations",
    "min_distance",
    "resolution",
    "edges",
    "angle_threshold",
    "radius",
    "steps",
    "velocity_window",
    "step3_source",
    "range_rows",
    "range_cols",
    "fov_down",
    "fov_up",
    "long_lasting_ids",
    "stick_ids",
    "building_id",
];

const POLICY_KEYS: &[&str] = &["long_lasting_ids", "stick_ids", "building_id"];

#[derive(Parser, Debug)]
#[command(
    name = "cofi",
    version,
    about = "Semantic map generation and map-based LiDAR localization"
)]
struct Cli {
    /// Key-value settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register a source cloud onto a target cloud with coarse-to-fine ICP.
    Register(RegisterArgs),
    /// Build the feature-point and long-lasting maps of a labeled sequence.
    Mapgen(MapgenArgs),
    /// Localize every scan of a sequence against prebuilt maps.
    Localize(LocalizeArgs),
    /// Relative (KITTI) and absolute trajectory errors.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic labeled sequence with ground truth.
    Synth(SynthArgs),
    /// Convert a map or scan to ASCII PLY.
    ExportPly(ExportPlyArgs),
}

#[derive(Args, Debug, Default)]
struct RegistrationFlags {
    /// Voxel sizes, strictly decreasing (e.g. 5.0,1.0,0.2).
    #[arg(long)]
    schedule: Option<String>,
    /// Gate: largest accepted translation change, meters.
    #[arg(long)]
    gate_trans: Option<f64>,
    /// Gate: largest accepted rotation change, degrees.
    #[arg(long)]
    gate_rot: Option<f64>,
    /// Base correspondence distance, meters.
    #[arg(long)]
    max_correspondence: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    /// Source cloud (.bin scan or .cmap map).
    source: PathBuf,
    /// Target cloud (.bin scan or .cmap map).
    target: PathBuf,
    #[command(flatten)]
    registration: RegistrationFlags,
    /// Initial pose as 12 row-major numbers.
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
}

#[derive(Args, Debug, Default)]
struct FeatureFlags {
    /// Keep every building point instead of building edges only.
    #[arg(long)]
    no_edges: bool,
    /// Edge interior-angle threshold, degrees.
    #[arg(long)]
    angle_threshold: Option<f64>,
    /// Semantic policy file (long_lasting_ids, stick_ids, building_id).
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MapgenArgs {
    sequence: PathBuf,
    /// Output prefix; writes <prefix>.feature.cmap, <prefix>.longlasting.cmap, ...
    #[arg(long)]
    out: PathBuf,
    /// Keyframe spacing, meters.
    #[arg(long)]
    min_distance: Option<f64>,
    /// Map voxel size, meters.
    #[arg(long)]
    resolution: Option<f64>,
    #[command(flatten)]
    features: FeatureFlags,
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    sequence: PathBuf,
    /// Map prefix written by `mapgen`.
    #[arg(long)]
    map: PathBuf,
    /// Output trajectory (KITTI pose format, same frame as the input poses).
    #[arg(long)]
    out: PathBuf,
    /// Enabled steps, e.g. 1,2,3,4 or 3+4.
    #[arg(long)]
    steps: Option<String>,
    /// Local map radius, meters.
    #[arg(long)]
    radius: Option<f64>,
    /// Voxel sizes for step 4.
    #[arg(long)]
    step4_schedule: Option<String>,
    #[arg(long)]
    velocity_window: Option<usize>,
    /// Per-frame step diagnostics as CSV.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[command(flatten)]
    registration: RegistrationFlags,
    #[command(flatten)]
    features: FeatureFlags,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Ground-truth poses.
    #[arg(long)]
    gt: PathBuf,
    /// Estimated poses.
    #[arg(long)]
    est: PathBuf,
    /// Rigidly align the estimate onto the ground truth before ATE.
    #[arg(long)]
    align: bool,
    /// Append a tab-separated metrics line to this file.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Sequence name used in the metrics line.
    #[arg(long, default_value = "seq")]
    name: String,
    /// Write the per-frame ATE table (CSV).
    #[arg(long)]
    ate_csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SceneKind {
    Corridor,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "corridor")]
    scene: SceneKind,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExportPlyArgs {
    /// .cmap map or .bin scan.
    input: PathBuf,
    output: PathBuf,
}

/// Settings looked up in the `--config` file, then the sequence's own
/// settings file.
struct Settings {
    layers: Vec<KeyValueConfig>,
}

impl Settings {
    fn load(config: Option<&Path>, sequence: Option<&Path>) -> Result<Self> {
        let mut layers = Vec::new();
        if let Some(path) = config {
            let c = KeyValueConfig::read(path)?;
            c.check_keys(CONFIG_KEYS)?;
            layers.push(c);
        }
        if let Some(dir) = sequence {
            let path = dir.join(SEQUENCE_CONFIG);
            if path.is_file() {
                let c = KeyValueConfig::read(&path)?;
                c.check_keys(CONFIG_KEYS)?;
                layers.push(c);
            }
        }
        Ok(Self { layers })
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        for layer in &self.layers {
            if let Some(v) = layer.get_parsed(key)? {
                return Ok(Some(v));
            }
        }
        Ok(None)
    }

    fn get_str(&self, key: &str) -> Option<String> {
        self.layers.iter().find_map(|l| l.get(key).map(str::to_string))
    }

    /// `flag`, else the configured value, else `default`.
    fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    fn schedule(&self, flag: Option<&str>, key: &str, default: CofiSchedule) -> Result<CofiSchedule> {
        match flag.map(str::to_string).or_else(|| self.get_str(key)) {
            Some(text) => parse_schedule(&text),
            None => Ok(default),
        }
    }

    fn registration(&self, flags: &RegistrationFlags) -> Result<(CofiSchedule, GateParams, IcpParams)> {
        let schedule = self.schedule(flags.schedule.as_deref(), "schedule", CofiSchedule::default())?;
        let g = GateParams::default();
        let gate = GateParams {
            max_translation_change: self.pick(flags.gate_trans, "gate_trans", g.max_translation_change)?,
            max_rotation_change: self.pick(flags.gate_rot, "gate_rot", g.max_rotation_change)?,
        };
        let p = IcpParams::default();
        let icp = IcpParams {
            max_correspondence_distance: self.pick(
                flags.max_correspondence,
                "max_correspondence",
                p.max_correspondence_distance,
            )?,
            max_iterations: self.pick(flags.max_iterations, "max_iterations", p.max_iterations)?,
            ..p
        };
        gate.validate()?;
        icp.validate()?;
        Ok((schedule, gate, icp))
    }

    fn policy(&self, file: Option<&Path>) -> Result<SemanticPolicy> {
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            return SemanticPolicy::from_config_str(&text);
        }
        let text: String = POLICY_KEYS
            .iter()
            .filter_map(|k| self.get_str(k).map(|v| format!("{k} = {v}\n")))
            .collect();
        SemanticPolicy::from_config_str(&text)
    }

    fn features(&self, flags: &FeatureFlags) -> Result<FeatureConfig> {
        let d = FeatureConfig::default();
        let edges = if flags.no_edges {
            false
        } else {
            self.get::<bool>("edges")?.unwrap_or(d.edge_extraction)
        };
        let ri = RangeImageConfig {
            rows: self.get("range_rows")?.unwrap_or(d.range_image.rows),
            cols: self.get("range_cols")?.unwrap_or(d.range_image.cols),
            fov_down_deg: self.get("fov_down")?.unwrap_or(d.range_image.fov_down_deg),
            fov_up_deg: self.get("fov_up")?.unwrap_or(d.range_image.fov_up_deg),
        };
        ri.validate()?;
        Ok(FeatureConfig {
            edge_extraction: edges,
            angle_threshold: self.pick(flags.angle_threshold, "angle_threshold", d.angle_threshold)?,
            range_image: ri,
        })
    }
}

fn parse_schedule(text: &str) -> Result<CofiSchedule> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad schedule value '{s}': {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    CofiSchedule::new(values)
}

fn parse_pose(text: &str) -> Result<Pose> {
    let values: Vec<f64> = text
        .split([' ', ','])
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| Error::InvalidArgument(format!("bad pose value '{s}': {e}")))
        })
        .collect::<Result<_>>()?;
    let arr: [f64; 12] = values
        .try_into()
        .map_err(|v: Vec<f64>| Error::InvalidArgument(format!("pose needs 12 values, got {}", v.len())))?;
    Pose::from_row_major(&arr)
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    if path.extension().is_some_and(|e| e == "cmap") {
        Ok(read_map(path)?.0)
    } else {
        read_scan(path)
    }
}

fn run_register(args: &RegisterArgs, settings: &Settings) -> Result<u8> {
    let (schedule, gate, icp) = settings.registration(&args.registration)?;
    let source = read_cloud(&args.source)?;
    let target = read_cloud(&args.target)?;
    let init = args.init.as_deref().map(parse_pose).transpose()?.unwrap_or_default();
    let result = cofi_icp(&source, &target, &init, &schedule, &gate, &icp)?;
    let reg = &result.registration;
    println!("{}", format_pose_line(&reg.pose));
    println!(
        "rmse={:.6} fitness={:.6} converged={} accepted_stages={}/{}",
        reg.inlier_rmse,
        reg.fitness,
        reg.converged,
        result.accepted_stages(),
        schedule.resolutions().len()
    );
    if result.gate_rejected() {
        eprintln!("gate rejected a stage; returning the last accepted pose");
        return Ok(EXIT_FALLBACK);
    }
    Ok(0)
}

fn run_mapgen(args: &MapgenArgs, settings: &Settings) -> Result<u8> {
    let d = MapGenConfig::default();
    let config = MapGenConfig {
        policy: settings.policy(args.features.policy.as_deref())?,
        min_distance: settings.pick(args.min_distance, "min_distance", d.min_distance)?,
        resolution: settings.pick(args.resolution, "resolution", d.resolution)?,
        features: settings.features(&args.features)?,
    };
    let source = SequenceSource::open(&args.sequence)?;
    if !source.has_labels() {
        return Err(Error::InvalidArgument(format!(
            "sequence {} has no labels/ directory",
            args.sequence.display()
        )));
    }
    let poses = source.load_poses()?;
    let keyframes = select_keyframes(&poses, config.min_distance);
    let mut builder = MapBuilder::new(config)?;
    for &k in &keyframes {
        builder.add_keyframe(&source.load_frame(k)?, &poses[k])?;
    }
    let maps = builder.finish(source.len(), source.raw_point_count()?);
    write_map_pair(&args.out, &maps)?;
    let s = &maps.stats;
    println!(
        "frames_pct={:.2} feature_points_pct={:.4} long_lasting_points_pct={:.4} keyframes={}/{} feature_points={} long_lasting_points={}",
        100.0 * s.frame_fraction,
        100.0 * s.feature_fraction,
        100.0 * s.long_lasting_fraction,
        keyframes.len(),
        s.total_frames,
        maps.feature_map.len(),
        maps.long_lasting_map.len()
    );
    Ok(0)
}

fn run_localize(args: &LocalizeArgs, settings: &Settings) -> Result<u8> {
    let (schedule, gate, icp) = settings.registration(&args.registration)?;
    let d = LocalizerConfig::default();
    let steps = match args.steps.clone().or_else(|| settings.get_str("steps")) {
        Some(text) => LocalizerConfig::parse_steps(&text)?,
        None => d.enabled_steps.clone(),
    };
    let step3_source = match settings.get_str("step3_source").as_deref() {
        None | Some("features") => Step3Source::FeaturePoints,
        Some("long_lasting_and_features") => Step3Source::LongLastingAndFeatures,
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "step3_source must be 'features' or 'long_lasting_and_features', got '{other}'"
            )))
        }
    };
    let config = LocalizerConfig {
        local_map_radius: settings.pick(args.radius, "radius", d.local_map_radius)?,
        velocity_window: settings.pick(args.velocity_window, "velocity_window", d.velocity_window)?,
        schedule,
        step4_resolutions: settings.schedule(
            args.step4_schedule.as_deref(),
            "step4_schedule",
            d.step4_resolutions.clone(),
        )?,
        gate,
        icp,
        enabled_steps: steps,
        policy: settings.policy(args.features.policy.as_deref())?,
        features: settings.features(&args.features)?,
        step3_source,
    };
    config.validate()?;

    let maps = read_map_pair(&args.map)?;
    let source = SequenceSource::open(&args.sequence)?;
    if source.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "sequence {} has no scans",
            args.sequence.display()
        )));
    }
    let calibration = source.calibration()?;
    let start = source.load_poses()?[0];
    let first = source.load_frame(0)?;
    let mut state = LocalizerState::bootstrap(start, &first, &config.policy)?;
    let mut diagnostics = String::from("frame,step,status,inlier_rmse,fitness\n");
    let mut rejected = 0usize;
    for i in 1..source.len() {
        let frame = source.load_frame(i)?;
        let out = localize_frame(&mut state, &frame, &maps, &config)?;
        for s in &out.steps {
            if s.status == StepStatus::Rejected {
                rejected += 1;
            }
            let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
            diagnostics += &format!(
                "{i},{},{:?},{},{}\n",
                s.step,
                s.status,
                fmt(s.inlier_rmse),
                fmt(s.fitness)
            );
        }
    }
    let poses: Vec<Pose> = match &calibration {
        Some(tr) => state.accepted_poses().iter().map(|p| lidar_to_camera(p, tr)).collect(),
        None => state.accepted_poses().to_vec(),
    };
    write_poses(&args.out, &poses)?;
    if let Some(path) = &args.diagnostics {
        fs::write(path, diagnostics).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    println!("frames={} rejected_steps={rejected}", poses.len());
    if rejected > 0 {
        eprintln!("{rejected} step results were rejected by the gate");
        return Ok(EXIT_FALLBACK);
    }
    Ok(0)
}

fn run_evaluate(args: &EvaluateArgs) -> Result<u8> {
    let gt = Trajectory::new(read_poses(&args.gt, None)?);
    let est = Trajectory::new(read_poses(&args.est, None)?);
    let report = evaluate(&gt, &est, args.align)?;
    let (t, r) = report.relative.map_or((f64::NAN, f64::NAN), |e| (e.t_rel, e.r_rel));
    println!(
        "t_rel={t:.6} r_rel={r:.6} ate_mean={:.6} ate_std={:.6}",
        report.ate.mean, report.ate.std
    );
    if let Some(path) = &args.metrics {
        use std::io::Write as _;
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
        writeln!(f, "{}", report.metrics_line(&args.name)).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    if let Some(path) = &args.ate_csv {
        fs::write(path, ate_csv(&est, &report.ate)).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(0)
}

fn run_synth(args: &SynthArgs) -> Result<u8> {
    let SceneKind::Corridor = args.scene;
    let config = CorridorConfig {
        frames: args.frames,
        seed: args.seed,
        ..CorridorConfig::default()
    };
    let seq = corridor_sequence(&config)?;
    write_sequence(&args.out, &seq, &kitti_like_calibration())?;
    println!("frames={} out={}", seq.frames.len(), args.out.display());
    Ok(0)
}

fn run_export_ply(args: &ExportPlyArgs) -> Result<u8> {
    write_ply(&args.output, &read_cloud(&args.input)?)?;
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Register(a) => run_register(a, &Settings::load(config, None)?),
        Command::Mapgen(a) => run_mapgen(a, &Settings::load(config, Some(&a.sequence))?),
        Command::Localize(a) => run_localize(a, &Settings::load(config, Some(&a.sequence))?),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Synth(a) => run_synth(a),
        Command::ExportPly(a) => run_export_ply(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
