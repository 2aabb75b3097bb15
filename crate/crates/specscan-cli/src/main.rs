//! `specscan` — plan, simulate and compare spectral-spatial surface scans.
//!
//! Exit codes: 0 success, 2 I/O failure, 3 validation failure, 4 numerical
//! failure.

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{Isometry3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};
use specscan::cloud::{cluster_largest, crop, remove_plane_ransac, CropBox};
use specscan::io;
use specscan::kinematics::{
    forward_kinematics, stewart_ik, GeometryConfig, KinematicsError,
    PlatformGeometry, PlatformPose, ServoAngles,
};
use specscan::planning::{plan_viewpoints, PlanConfig, ViewpointOrder};
use specscan::sim::{
    compare_clouds, make_scene, run_scan, MixingModel, ScanConfig, ScanMode, SceneSpec,
    TofReduce,
};
use specscan::spectral::{calibrate_spectrum, median_stack, CalibrationPair};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "specscan", version, about)]
struct Cli {
    /// Pipeline configuration JSON (defaults used when absent).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage (RANSAC, simulated noise).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a raw cloud: crop, RANSAC plane removal, density clustering.
    Preprocess {
        /// Input cloud (.ply or .xyz).
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Skip the crop stage.
        #[arg(long)]
        skip_crop: bool,
        /// Skip RANSAC plane removal.
        #[arg(long)]
        skip_plane: bool,
        /// Skip largest-cluster selection.
        #[arg(long)]
        skip_cluster: bool,
    },
    /// Plan probe viewpoints over a cleaned cloud or a scene.
    Plan {
        /// Input cloud file (.ply or .xyz).
        #[arg(long, value_name = "FILE", conflicts_with = "scene")]
        cloud: Option<PathBuf>,
        /// Scene spec JSON (plans over its generated cloud).
        #[arg(long, value_name = "FILE")]
        scene: Option<PathBuf>,
        #[arg(long)]
        voxel_size: Option<f64>,
        #[arg(long)]
        scan_dist: Option<f64>,
        /// Arm offset as "x y z" meters.
        #[arg(long, allow_hyphen_values = true)]
        arm_offset: Option<String>,
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
    },
    /// Execute a plan against a scene in one scanning mode.
    Scan {
        #[arg(long, value_name = "FILE")]
        scene: PathBuf,
        #[arg(long, value_name = "FILE")]
        plan: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Prospect)]
        mode: ModeArg,
    },
    /// Per-point SAM between two scan results.
    Compare {
        /// First scan result directory.
        #[arg(long, value_name = "DIR")]
        a: PathBuf,
        /// Second scan result directory.
        #[arg(long, value_name = "DIR")]
        b: PathBuf,
    },
    /// Servo angles for a platform pose.
    Ik {
        /// Pose as "x y z yaw pitch roll" (m, rad).
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
    },
    /// Platform pose for servo angles (numerical root-find).
    Fk {
        /// Six servo angles in radians, space separated.
        #[arg(long, allow_hyphen_values = true)]
        angles: String,
        /// Initial guess pose "x y z yaw pitch roll"; home pose if absent.
        #[arg(long, allow_hyphen_values = true)]
        guess: Option<String>,
    },
    /// Reflectance calibration against white/dark reference stacks.
    Calibrate {
        /// Raw sample spectra CSV.
        #[arg(long, value_name = "FILE")]
        raw: PathBuf,
        /// White reference stack CSV (median taken per bin).
        #[arg(long, value_name = "FILE")]
        white: PathBuf,
        /// Dark reference stack CSV (median taken per bin).
        #[arg(long, value_name = "FILE")]
        dark: PathBuf,
        /// Integration time tag in seconds.
        #[arg(long, default_value_t = 0.01)]
        integration_time: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Tour,
    Cloud,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "prospect")]
    Prospect,
    #[value(name = "gantry_3axis")]
    Gantry3Axis,
    #[value(name = "no_rotation")]
    NoRotation,
}

impl From<ModeArg> for ScanMode {
    fn from(m: ModeArg) -> ScanMode {
        match m {
            ModeArg::Prospect => ScanMode::Prospect,
            ModeArg::Gantry3Axis => ScanMode::Gantry3Axis,
            ModeArg::NoRotation => ScanMode::NoRotation,
        }
    }
}

// ---------------------------------------------------------------------------
// pipeline configuration file

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct PipelineConfig {
    geometry: GeometryConfig,
    instrument: io::InstrumentConfig,
    preprocess: PreprocessConfig,
    plan: PlanSection,
    scan: ScanSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct PreprocessConfig {
    crop_min: Option<[f64; 3]>,
    crop_max: Option<[f64; 3]>,
    ransac_dist: f64,
    ransac_iters: usize,
    cluster_eps: f64,
    cluster_min_points: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            crop_min: None,
            crop_max: None,
            ransac_dist: 0.002,
            ransac_iters: 1000,
            cluster_eps: 0.01,
            cluster_min_points: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct PlanSection {
    voxel_size: f64,
    scan_dist: f64,
    arm_offset: [f64; 3],
    order: ViewpointOrder,
    normal_neighbors: usize,
    sensor_origin: [f64; 3],
}

impl Default for PlanSection {
    fn default() -> Self {
        let d = PlanConfig::default();
        PlanSection {
            voxel_size: d.voxel_size,
            scan_dist: d.scan_dist,
            arm_offset: d.arm_offset.into(),
            order: d.order,
            normal_neighbors: d.normal_neighbors,
            sensor_origin: d.sensor_origin.coords.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ScanSection {
    refine_iterations: usize,
    mixing: MixingModel,
    tof_reduce: TofReduce,
    spectral_noise_sigma: f64,
    tof_jitter_sigma: f64,
    tof_layout_radius: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            refine_iterations: 1,
            mixing: MixingModel::default(),
            tof_reduce: TofReduce::default(),
            spectral_noise_sigma: 0.0,
            tof_jitter_sigma: 0.0,
            tof_layout_radius: 0.02,
        }
    }
}

impl PipelineConfig {
    /// Every validation problem at once.
    fn issues(&self) -> Vec<String> {
        let mut out = self.instrument.issues();
        if let Err(e) = PlatformGeometry::from_config(&self.geometry) {
            out.push(format!("geometry: {e}"));
        }
        if self.plan.voxel_size <= 0.0 {
            out.push(format!(
                "plan.voxel_size must be positive, got {}",
                self.plan.voxel_size
            ));
        }
        if self.plan.scan_dist <= 0.0 {
            out.push(format!(
                "plan.scan_dist must be positive, got {}",
                self.plan.scan_dist
            ));
        }
        if self.plan.normal_neighbors < 3 {
            out.push(format!(
                "plan.normal_neighbors must be at least 3, got {}",
                self.plan.normal_neighbors
            ));
        }
        if self.preprocess.ransac_dist <= 0.0 {
            out.push(format!(
                "preprocess.ransac_dist must be positive, got {}",
                self.preprocess.ransac_dist
            ));
        }
        if self.preprocess.cluster_eps <= 0.0 {
            out.push(format!(
                "preprocess.cluster_eps must be positive, got {}",
                self.preprocess.cluster_eps
            ));
        }
        if self.scan.spectral_noise_sigma < 0.0 || self.scan.tof_jitter_sigma < 0.0 {
            out.push("scan noise sigmas must be non-negative".into());
        }
        if self.scan.tof_layout_radius <= 0.0 {
            out.push(format!(
                "scan.tof_layout_radius must be positive, got {}",
                self.scan.tof_layout_radius
            ));
        }
        out
    }

    fn plan_config(&self) -> PlanConfig {
        PlanConfig {
            voxel_size: self.plan.voxel_size,
            scan_dist: self.plan.scan_dist,
            arm_offset: Vector3::from(self.plan.arm_offset),
            camera_to_base: Isometry3::identity(),
            order: self.plan.order,
            normal_neighbors: self.plan.normal_neighbors,
            sensor_origin: Point3::from(Vector3::from(self.plan.sensor_origin)),
        }
    }

    fn scan_config(&self, seed: u64) -> ScanConfig {
        let r = self.scan.tof_layout_radius;
        let layout = [0.0, 2.0, 4.0].map(|k: f64| {
            let ang = k * std::f64::consts::FRAC_PI_3;
            Point2::new(r * ang.cos(), r * ang.sin())
        });
        ScanConfig {
            na: self.instrument.na,
            epsilon: self.instrument.epsilon_m,
            tof_layout: layout,
            refine_iterations: self.scan.refine_iterations,
            mixing: self.scan.mixing,
            tof_reduce: self.scan.tof_reduce,
            spectral_noise_sigma: self.scan.spectral_noise_sigma,
            tof_jitter_sigma: self.scan.tof_jitter_sigma,
            seed,
        }
    }
}

// ---------------------------------------------------------------------------
// error-to-exit-code plumbing

enum AppError {
    Io(String),
    Validation(String),
    Numerical(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Io(_) => 2,
            AppError::Validation(_) => 3,
            AppError::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Io(m) | AppError::Validation(m) | AppError::Numerical(m) => m,
        }
    }
}

impl From<io::IoError> for AppError {
    fn from(e: io::IoError) -> Self {
        AppError::Io(e.to_string())
    }
}

impl From<KinematicsError> for AppError {
    fn from(e: KinematicsError) -> Self {
        AppError::Numerical(e.to_string())
    }
}

type AppResult<T> = Result<T, AppError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: &Cli) -> AppResult<()> {
    let config: PipelineConfig = match &cli.config {
        Some(path) => io::read_json(path)?,
        None => PipelineConfig::default(),
    };
    let issues = config.issues();
    if !issues.is_empty() {
        return Err(AppError::Validation(format!(
            "configuration invalid:\n  {}",
            issues.join("\n  ")
        )));
    }
    let geom = PlatformGeometry::from_config(&config.geometry)
        .expect("validated above");

    std::fs::create_dir_all(&cli.out)
        .map_err(|e| AppError::Io(format!("{}: {e}", cli.out.display())))?;

    match &cli.command {
        Command::Preprocess {
            input,
            skip_crop,
            skip_plane,
            skip_cluster,
        } => cmd_preprocess(cli, &config, input, *skip_crop, *skip_plane, *skip_cluster),
        Command::Plan {
            cloud,
            scene,
            voxel_size,
            scan_dist,
            arm_offset,
            order,
        } => cmd_plan(
            cli,
            &config,
            &geom,
            cloud.as_deref(),
            scene.as_deref(),
            *voxel_size,
            *scan_dist,
            arm_offset.as_deref(),
            *order,
        ),
        Command::Scan { scene, plan, mode } => cmd_scan(cli, &config, &geom, scene, plan, *mode),
        Command::Compare { a, b } => cmd_compare(cli, a, b),
        Command::Ik { pose } => cmd_ik(&geom, pose),
        Command::Fk { angles, guess } => cmd_fk(&geom, angles, guess.as_deref()),
        Command::Calibrate {
            raw,
            white,
            dark,
            integration_time,
        } => cmd_calibrate(cli, raw, white, dark, *integration_time),
    }
}

#[derive(Serialize)]
struct PreprocessReport {
    input_points: usize,
    after_crop: usize,
    plane_inliers_removed: usize,
    plane: Option<[f64; 4]>,
    after_cluster: usize,
    output_points: usize,
}

fn cmd_preprocess(
    cli: &Cli,
    config: &PipelineConfig,
    input: &Path,
    skip_crop: bool,
    skip_plane: bool,
    skip_cluster: bool,
) -> AppResult<()> {
    let cloud = io::read_point_cloud(input)?;
    let input_points = cloud.len();
    if cli.verbose {
        eprintln!("loaded {} points from {}", input_points, input.display());
    }

    let pp = &config.preprocess;
    let cropped = if skip_crop {
        cloud
    } else if let (Some(lo), Some(hi)) = (pp.crop_min, pp.crop_max) {
        let cropbox = CropBox::new(Point3::from(Vector3::from(lo)), Point3::from(Vector3::from(hi)))
            .map_err(|e| AppError::Validation(format!("preprocess crop box: {e}")))?;
        crop(&cloud, &cropbox)
    } else {
        cloud
    };
    let after_crop = cropped.len();

    let (no_plane, plane) = if skip_plane {
        (cropped, None)
    } else {
        let (rest, plane) =
            remove_plane_ransac(&cropped, pp.ransac_dist, pp.ransac_iters, cli.seed)
                .map_err(|e| AppError::Validation(format!("plane removal: {e}")))?;
        (
            rest,
            Some([plane.normal.x, plane.normal.y, plane.normal.z, plane.offset]),
        )
    };
    let plane_inliers_removed = after_crop - no_plane.len();

    let clustered = if skip_cluster {
        no_plane
    } else {
        cluster_largest(&no_plane, pp.cluster_eps, pp.cluster_min_points)
            .map_err(|e| AppError::Validation(format!("clustering: {e}")))?
    };
    let after_cluster = clustered.len();

    io::write_ply(&cli.out.join("cleaned.ply"), &clustered)?;
    io::write_json(
        &cli.out.join("report.json"),
        &PreprocessReport {
            input_points,
            after_crop,
            plane_inliers_removed,
            plane,
            after_cluster,
            output_points: clustered.len(),
        },
    )?;
    if cli.verbose {
        eprintln!(
            "preprocess: {input_points} -> crop {after_crop} -> plane -{plane_inliers_removed} -> cluster {after_cluster}"
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_plan(
    cli: &Cli,
    config: &PipelineConfig,
    geom: &PlatformGeometry,
    cloud_path: Option<&Path>,
    scene_path: Option<&Path>,
    voxel_size: Option<f64>,
    scan_dist: Option<f64>,
    arm_offset: Option<&str>,
    order: Option<OrderArg>,
) -> AppResult<()> {
    let mut plan_cfg = config.plan_config();
    if let Some(v) = voxel_size {
        plan_cfg.voxel_size = v;
    }
    if let Some(d) = scan_dist {
        plan_cfg.scan_dist = d;
    }
    if let Some(text) = arm_offset {
        let v = parse_floats(text, 3)?;
        plan_cfg.arm_offset = Vector3::new(v[0], v[1], v[2]);
    }
    if let Some(o) = order {
        plan_cfg.order = match o {
            OrderArg::Tour => ViewpointOrder::Tour,
            OrderArg::Cloud => ViewpointOrder::Cloud,
        };
    }
    if plan_cfg.voxel_size <= 0.0 || plan_cfg.scan_dist <= 0.0 {
        return Err(AppError::Validation(
            "voxel size and scan distance must be positive".into(),
        ));
    }

    let cloud = match (cloud_path, scene_path) {
        (Some(path), None) => io::read_point_cloud(path)?,
        (None, Some(path)) => {
            let spec: SceneSpec = io::read_json(path)?;
            let scene =
                make_scene(&spec).map_err(|e| AppError::Validation(format!("scene: {e}")))?;
            plan_cfg.sensor_origin = scene.sensor_origin;
            scene.cloud
        }
        _ => {
            return Err(AppError::Validation(
                "plan needs exactly one of --cloud or --scene".into(),
            ))
        }
    };

    let plan = plan_viewpoints(&cloud, geom, &plan_cfg)
        .map_err(|e| AppError::Numerical(format!("planning: {e}")))?;
    io::write_plan(&cli.out.join("plan.jsonl"), &plan)?;
    println!(
        "planned {} viewpoints ({} infeasible)",
        plan.viewpoints.len(),
        plan.infeasible_count()
    );
    Ok(())
}

fn cmd_scan(
    cli: &Cli,
    config: &PipelineConfig,
    geom: &PlatformGeometry,
    scene_path: &Path,
    plan_path: &Path,
    mode: ModeArg,
) -> AppResult<()> {
    let spec: SceneSpec = io::read_json(scene_path)?;
    let scene = make_scene(&spec).map_err(|e| AppError::Validation(format!("scene: {e}")))?;
    let plan = io::read_plan(plan_path)?;
    let result = run_scan(&scene, &plan, mode.into(), geom, &config.scan_config(cli.seed))
        .map_err(|e| match e {
            specscan::sim::SimError::PlanSceneMismatch => AppError::Validation(e.to_string()),
            other => AppError::Numerical(other.to_string()),
        })?;
    io::write_scan_result(&cli.out, &result)?;
    println!(
        "executed {} viewpoints ({} infeasible, {} without ToF return), {} points scanned",
        result.executed(),
        result.skipped_infeasible,
        result.skipped_no_return,
        result.cloud.scanned_indices().len()
    );
    Ok(())
}

#[derive(Serialize)]
struct CompareSummary {
    mean: f64,
    std_dev: f64,
    range: f64,
    count: usize,
}

fn cmd_compare(cli: &Cli, a: &Path, b: &Path) -> AppResult<()> {
    let cloud_a = io::read_result_cloud(a)?;
    let cloud_b = io::read_result_cloud(b)?;
    let cmp = compare_clouds(&cloud_a, &cloud_b)
        .map_err(|e| AppError::Validation(e.to_string()))?;

    let mut csv = String::from("point_index,x,y,z,sam\n");
    for (i, sam) in cmp.indices.iter().zip(&cmp.scores) {
        let p = cloud_a.points()[*i];
        let _ = writeln!(csv, "{i},{},{},{},{sam}", p.x, p.y, p.z);
    }
    std::fs::write(cli.out.join("compare.csv"), csv)
        .map_err(|e| AppError::Io(format!("compare.csv: {e}")))?;
    io::write_json(
        &cli.out.join("summary.json"),
        &CompareSummary {
            mean: cmp.mean,
            std_dev: cmp.std_dev,
            range: cmp.range,
            count: cmp.indices.len(),
        },
    )?;
    println!(
        "compared {} points: mean SAM {:.6}, std dev {:.6}, range {:.6}",
        cmp.indices.len(),
        cmp.mean,
        cmp.std_dev,
        cmp.range
    );
    Ok(())
}

fn cmd_ik(geom: &PlatformGeometry, pose_text: &str) -> AppResult<()> {
    let v = parse_floats(pose_text, 6)?;
    let pose = PlatformPose::new(Vector3::new(v[0], v[1], v[2]), v[3], v[4], v[5]);
    let angles = stewart_ik(geom, &pose)?;
    let rendered: Vec<String> = angles.0.iter().map(|a| format!("{a:.9}")).collect();
    println!("{}", rendered.join(" "));
    Ok(())
}

fn cmd_fk(geom: &PlatformGeometry, angles_text: &str, guess_text: Option<&str>) -> AppResult<()> {
    let a = parse_floats(angles_text, 6)?;
    let angles = ServoAngles([a[0], a[1], a[2], a[3], a[4], a[5]]);
    let guess = match guess_text {
        Some(text) => {
            let v = parse_floats(text, 6)?;
            PlatformPose::new(Vector3::new(v[0], v[1], v[2]), v[3], v[4], v[5])
        }
        None => geom.home_pose(),
    };
    let pose = forward_kinematics(geom, &angles, &guess)?;
    println!(
        "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
        pose.translation.x, pose.translation.y, pose.translation.z, pose.yaw, pose.pitch, pose.roll
    );
    // round-trip sanity: the found pose must reproduce the given angles
    let check = stewart_ik(geom, &pose)?;
    let max_da = check
        .0
        .iter()
        .zip(&angles.0)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if max_da > 1e-8 {
        return Err(AppError::Numerical(format!(
            "forward kinematics landed on an inconsistent branch (max joint error {max_da:.2e})"
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport {
    samples: usize,
    invalid_bins: Vec<usize>,
}

fn cmd_calibrate(
    cli: &Cli,
    raw: &Path,
    white: &Path,
    dark: &Path,
    integration_time: f64,
) -> AppResult<()> {
    let raw_samples = io::read_spectra_csv(raw)?;
    let white_stack = io::read_spectra_csv(white)?;
    let dark_stack = io::read_spectra_csv(dark)?;
    let white_median =
        median_stack(&white_stack).map_err(|e| AppError::Validation(format!("white: {e}")))?;
    let dark_median =
        median_stack(&dark_stack).map_err(|e| AppError::Validation(format!("dark: {e}")))?;
    let pair = CalibrationPair::new(white_median, dark_median, integration_time)
        .map_err(|e| AppError::Validation(e.to_string()))?;

    let mut calibrated = Vec::with_capacity(raw_samples.len());
    let mut invalid = Vec::new();
    for s in &raw_samples {
        let out = calibrate_spectrum(s, &pair).map_err(|e| AppError::Validation(e.to_string()))?;
        invalid = out.invalid_bins;
        calibrated.push(out.spectrum);
    }
    io::write_spectra_csv(&cli.out.join("calibrated.csv"), &calibrated)?;
    io::write_json(
        &cli.out.join("calibration_report.json"),
        &CalibrationReport {
            samples: calibrated.len(),
            invalid_bins: invalid,
        },
    )?;
    println!("calibrated {} samples", calibrated.len());
    Ok(())
}

fn parse_floats(text: &str, expect: usize) -> AppResult<Vec<f64>> {
    let values: Result<Vec<f64>, _> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect();
    match values {
        Ok(v) if v.len() == expect => Ok(v),
        Ok(v) => Err(AppError::Validation(format!(
            "expected {expect} numbers, got {}",
            v.len()
        ))),
        Err(e) => Err(AppError::Validation(format!("bad number in {text:?}: {e}"))),
    }
}
