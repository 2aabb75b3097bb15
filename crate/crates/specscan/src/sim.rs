//! Synthetic scenes and closed-loop scan execution.
//!
//! A [`Scene`] is a point cloud with a known material (reference spectrum)
//! per point. [`run_scan`] drives a [`ScanPlan`] over the scene: it
//! simulates the three ToF rangers, optionally refines each platform pose
//! by surface-normal matching, forms the observed spectrum from the points
//! inside the fiber acceptance cone, and accumulates observations into a
//! fresh spectral cloud. Ablation modes replay the same plan with the
//! platform alignment degraded.

use crate::cloud::SpectralCloud;
use crate::kinematics::{PlatformGeometry, PlatformPose};
use crate::planning::{
    normal_match_pose, stewart_pose_feasible, ScanPlan, TOF_HALF_ANGLE_RAD, TOF_RANGE_M,
};
use crate::spectral::{associate_spectrum, sam_on_slices, AcceptanceCone, Spectrum, SpectralError};
use nalgebra::{Isometry3, Point2, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown material {0:?}")]
    UnknownMaterial(String),
    #[error("density must be positive, got {0}")]
    BadDensity(f64),
    #[error("scene parameter invalid: {0}")]
    BadSceneParameter(String),
    #[error("scene generated no points")]
    EmptyScene,
    #[error("plan was not generated from this scene's cloud")]
    PlanSceneMismatch,
    #[error("no commonly scanned points to compare")]
    NoOverlap,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("mesh import failed: {0}")]
    MeshImport(String),
}

/// Scene geometry families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneKind {
    /// Rectangle in the xy plane at height `z`.
    Plane {
        size_x: f64,
        size_y: f64,
        #[serde(default = "default_surface_z")]
        z: f64,
    },
    /// Grid of square cells in the xy plane; materials cycle by cell.
    Checkerboard {
        cells_x: usize,
        cells_y: usize,
        cell_size: f64,
        #[serde(default = "default_surface_z")]
        z: f64,
    },
    /// Spherical cap: polar angle in `[0, cap_angle_rad]` measured from +z.
    Sphere {
        radius: f64,
        center: [f64; 3],
        #[serde(default = "default_cap_angle")]
        cap_angle_rad: f64,
    },
    /// Points loaded from a PLY/XYZ file; first material everywhere.
    MeshImport { path: String },
}

fn default_surface_z() -> f64 {
    -0.15
}

fn default_cap_angle() -> f64 {
    std::f64::consts::FRAC_PI_2
}

/// Surface sampling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Poisson point count, uniform placement (seeded).
    #[default]
    Random,
    /// Deterministic quasi-uniform lattice (golden-angle spiral on curved
    /// surfaces); the seed is not consumed.
    Lattice,
}

/// Material selection for a scene spec: named library entries, or a ramp of
/// `count` spectra interpolated between two library entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialSelect {
    Names(Vec<String>),
    Ramp {
        ramp_from: String,
        ramp_to: String,
        count: usize,
    },
}

/// Declarative scene description (the on-disk JSON form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(flatten)]
    pub kind: SceneKind,
    pub materials: MaterialSelect,
    /// Surface sampling density in points per square meter.
    pub density: f64,
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default = "default_bins")]
    pub wavelength_bins: usize,
    #[serde(default = "default_range")]
    pub wavelength_range_nm: (f64, f64),
}

fn default_bins() -> usize {
    256
}

fn default_range() -> (f64, f64) {
    (500.0, 1100.0)
}

/// Synthetic scene: geometry plus per-point ground-truth material.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Cloud with analytic normals and one ground-truth spectrum per point.
    pub cloud: SpectralCloud,
    pub materials: Vec<(String, Spectrum)>,
    /// Material index per point.
    pub material_of: Vec<usize>,
    /// Where the (virtual) depth camera sits; used to orient normals.
    pub sensor_origin: Point3<f64>,
}

impl Scene {
    pub fn material_spectrum(&self, point: usize) -> &Spectrum {
        &self.materials[self.material_of[point]].1
    }

    /// Ground-truth values for a point (same data the cloud carries).
    pub fn truth_values(&self, point: usize) -> &[f64] {
        self.material_spectrum(point).values()
    }
}

/// Built-in reflectance library: smooth Gaussian-mixture curves over the
/// instrument axis, values in [0.02, 1.2].
pub fn material_library(axis: &[f64]) -> Vec<(String, Spectrum)> {
    type Curve = Box<dyn Fn(f64) -> f64>;
    let gauss = |x: f64, mu: f64, sigma: f64| (-((x - mu) / sigma).powi(2)).exp();
    let entries: [(&str, Curve); 8] = [
        ("spectralon", Box::new(|_| 0.99)),
        ("gray25", Box::new(|_| 0.25)),
        (
            "red_paint",
            Box::new(move |x| 0.08 + 0.75 * gauss(x, 710.0, 120.0) + 0.3 * gauss(x, 1050.0, 150.0)),
        ),
        (
            "green_paint",
            Box::new(move |x| 0.06 + 0.6 * gauss(x, 555.0, 45.0) + 0.25 * gauss(x, 900.0, 180.0)),
        ),
        (
            "blue_paint",
            Box::new(move |x| 0.05 + 0.55 * gauss(x, 505.0, 40.0) + 0.15 * gauss(x, 1000.0, 200.0)),
        ),
        (
            "sandstone",
            Box::new(move |x| {
                0.15 + 0.8 * gauss(x, 680.0, 140.0) + 0.3 * gauss(x, 1000.0, 160.0)
                    - 0.12 * gauss(x, 940.0, 30.0)
            }),
        ),
        (
            "gypsum",
            Box::new(move |x| 0.25 + 0.7 * gauss(x, 830.0, 90.0) + 0.2 * gauss(x, 590.0, 110.0)),
        ),
        (
            "iron_oxide",
            Box::new(move |x| {
                0.1 + 0.65 * gauss(x, 760.0, 80.0) + 0.35 * gauss(x, 1080.0, 120.0)
                    - 0.1 * gauss(x, 860.0, 40.0)
            }),
        ),
    ];
    entries
        .into_iter()
        .map(|(name, f)| {
            let values: Vec<f64> = axis.iter().map(|&x| f(x).clamp(0.02, 1.2)).collect();
            (
                name.to_string(),
                Spectrum::new(axis.to_vec(), values).expect("library spectrum"),
            )
        })
        .collect()
}

/// `count` spectra linearly interpolated between `from` and `to`, named
/// `ramp_000`, `ramp_001`, ...
pub fn material_ramp(from: &Spectrum, to: &Spectrum, count: usize) -> Vec<(String, Spectrum)> {
    assert!(count >= 2, "ramp needs at least two steps");
    (0..count)
        .map(|k| {
            let u = k as f64 / (count - 1) as f64;
            let values: Vec<f64> = from
                .values()
                .iter()
                .zip(to.values())
                .map(|(a, b)| (1.0 - u) * a + u * b)
                .collect();
            (
                format!("ramp_{k:03}"),
                Spectrum::new(from.wavelengths().to_vec(), values).expect("ramp spectrum"),
            )
        })
        .collect()
}

fn resolve_materials(
    select: &MaterialSelect,
    axis: &[f64],
) -> Result<Vec<(String, Spectrum)>, SimError> {
    let library = material_library(axis);
    // a name ending in .csv imports a measured spectrum (first sample row);
    // its axis must match the instrument axis
    let find = |name: &str| {
        if name.ends_with(".csv") {
            let samples = crate::io::read_spectra_csv(std::path::Path::new(name))
                .map_err(|e| SimError::BadSceneParameter(e.to_string()))?;
            let first = samples
                .into_iter()
                .next()
                .ok_or_else(|| SimError::BadSceneParameter(format!("{name}: no samples")))?;
            if first.wavelengths() != axis {
                return Err(SimError::BadSceneParameter(format!(
                    "{name}: wavelength axis does not match the instrument axis"
                )));
            }
            return Ok(first);
        }
        library
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| SimError::UnknownMaterial(name.to_string()))
    };
    match select {
        MaterialSelect::Names(names) => {
            if names.is_empty() {
                return Err(SimError::BadSceneParameter("no materials named".into()));
            }
            names
                .iter()
                .map(|n| Ok((n.clone(), find(n)?)))
                .collect()
        }
        MaterialSelect::Ramp {
            ramp_from,
            ramp_to,
            count,
        } => {
            if *count < 2 {
                return Err(SimError::BadSceneParameter("ramp count < 2".into()));
            }
            Ok(material_ramp(&find(ramp_from)?, &find(ramp_to)?, *count))
        }
    }
}

/// Builds a scene from its declarative spec: deterministic (seeded) surface
/// sampling, analytic normals, and one ground-truth material per point.
pub fn make_scene(spec: &SceneSpec) -> Result<Scene, SimError> {
    if spec.density <= 0.0 && !matches!(spec.kind, SceneKind::MeshImport { .. }) {
        return Err(SimError::BadDensity(spec.density));
    }
    let axis = Spectrum::instrument_axis(spec.wavelength_bins, spec.wavelength_range_nm);
    let materials = resolve_materials(&spec.materials, &axis)?;
    let n_mat = materials.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut points: Vec<Point3<f64>> = Vec::new();
    let mut normals: Vec<Vector3<f64>> = Vec::new();
    let mut material_of: Vec<usize> = Vec::new();

    match &spec.kind {
        SceneKind::Plane { size_x, size_y, z } => {
            if *size_x <= 0.0 || *size_y <= 0.0 {
                return Err(SimError::BadSceneParameter("plane size must be positive".into()));
            }
            let area = size_x * size_y;
            for (x, y) in planar_samples(area, *size_x, *size_y, spec, &mut rng) {
                // multi-material planes split into strips along x
                let strip = ((x / size_x * n_mat as f64) as usize).min(n_mat - 1);
                points.push(Point3::new(x - size_x / 2.0, y - size_y / 2.0, *z));
                normals.push(Vector3::z());
                material_of.push(strip);
            }
        }
        SceneKind::Checkerboard {
            cells_x,
            cells_y,
            cell_size,
            z,
        } => {
            if *cells_x == 0 || *cells_y == 0 || *cell_size <= 0.0 {
                return Err(SimError::BadSceneParameter("empty checkerboard".into()));
            }
            let size_x = *cells_x as f64 * cell_size;
            let size_y = *cells_y as f64 * cell_size;
            for (x, y) in planar_samples(size_x * size_y, size_x, size_y, spec, &mut rng) {
                let ix = ((x / cell_size) as usize).min(cells_x - 1);
                let iy = ((y / cell_size) as usize).min(cells_y - 1);
                points.push(Point3::new(x - size_x / 2.0, y - size_y / 2.0, *z));
                normals.push(Vector3::z());
                material_of.push((ix + iy) % n_mat);
            }
        }
        SceneKind::Sphere {
            radius,
            center,
            cap_angle_rad,
        } => {
            if *radius <= 0.0 || !(*cap_angle_rad > 0.0 && *cap_angle_rad <= std::f64::consts::PI) {
                return Err(SimError::BadSceneParameter("bad sphere parameters".into()));
            }
            let center = Point3::new(center[0], center[1], center[2]);
            let cap_cos = cap_angle_rad.cos();
            let area = 2.0 * std::f64::consts::PI * radius * radius * (1.0 - cap_cos);
            let count = sample_count(area, spec, &mut rng)?;
            let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            for i in 0..count {
                let (cos_t, phi) = match spec.sampling {
                    Sampling::Random => (
                        rng.random_range(cap_cos..1.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    ),
                    Sampling::Lattice => (
                        1.0 - (i as f64 + 0.5) * (1.0 - cap_cos) / count as f64,
                        (i as f64 * golden).rem_euclid(std::f64::consts::TAU),
                    ),
                };
                let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
                let radial =
                    Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t);
                points.push(center + *radius * radial);
                normals.push(radial);
                // material bands over surface height, pole -> rim
                let u = (1.0 - cos_t) / (1.0 - cap_cos);
                material_of.push(((u * n_mat as f64) as usize).min(n_mat - 1));
            }
        }
        SceneKind::MeshImport { path } => {
            let imported = crate::io::read_point_cloud(std::path::Path::new(path))
                .map_err(|e| SimError::MeshImport(e.to_string()))?;
            for (i, p) in imported.points().iter().enumerate() {
                points.push(*p);
                if let Some(ns) = imported.normals() {
                    normals.push(ns[i]);
                }
                material_of.push(0);
            }
            if normals.len() != points.len() {
                normals.clear();
            }
        }
    }

    if points.is_empty() {
        return Err(SimError::EmptyScene);
    }

    let mut cloud = if normals.is_empty() {
        SpectralCloud::new(points)
    } else {
        SpectralCloud::with_normals(points, normals).expect("aligned normals")
    };
    cloud.set_wavelengths(axis).expect("fresh cloud");
    for (i, &m) in material_of.iter().enumerate() {
        cloud
            .push_spectrum(i, materials[m].1.values().to_vec())
            .expect("axis installed");
    }

    Ok(Scene {
        cloud,
        materials,
        material_of,
        sensor_origin: Point3::new(0.0, 0.0, 0.5),
    })
}

fn sample_count(
    area: f64,
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
) -> Result<usize, SimError> {
    let expected = area * spec.density;
    if expected.is_nan() || expected <= 0.0 {
        return Err(SimError::BadDensity(spec.density));
    }
    Ok(match spec.sampling {
        Sampling::Random => Poisson::new(expected)
            .map_err(|_| SimError::BadDensity(spec.density))?
            .sample(rng) as usize,
        Sampling::Lattice => expected.round().max(1.0) as usize,
    })
}

fn planar_samples(
    area: f64,
    size_x: f64,
    size_y: f64,
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    match spec.sampling {
        Sampling::Random => {
            let count = sample_count(area, spec, rng).unwrap_or(0);
            (0..count)
                .map(|_| (rng.random_range(0.0..size_x), rng.random_range(0.0..size_y)))
                .collect()
        }
        Sampling::Lattice => {
            let pitch = (1.0 / spec.density).sqrt();
            let nx = (size_x / pitch).round().max(1.0) as usize;
            let ny = (size_y / pitch).round().max(1.0) as usize;
            let mut out = Vec::with_capacity(nx * ny);
            for ix in 0..nx {
                for iy in 0..ny {
                    out.push((
                        (ix as f64 + 0.5) * size_x / nx as f64,
                        (iy as f64 + 0.5) * size_y / ny as f64,
                    ));
                }
            }
            out
        }
    }
}

/// One simulated time-of-flight reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TofReading {
    /// Distance in meters; the range cap when nothing returned.
    pub distance: f64,
    pub hit: bool,
}

/// Simulates the three platform ToF sensors: each ranges along plate −z
/// from its mount point and reports the nearest cloud point inside its 9°
/// beam, capped at the 6 cm range (`hit = false` beyond it).
pub fn simulate_tof(
    scene: &Scene,
    pose: &PlatformPose,
    tof_layout: &[Point2<f64>; 3],
) -> [TofReading; 3] {
    let rot = pose.rotation();
    let dir = rot * -Vector3::z();
    let cos_beam = TOF_HALF_ANGLE_RAD.cos();
    let mut out = [TofReading {
        distance: TOF_RANGE_M,
        hit: false,
    }; 3];
    for (s, mount) in tof_layout.iter().enumerate() {
        let origin = pose.translation + rot * Vector3::new(mount.x, mount.y, 0.0);
        let mut best = f64::INFINITY;
        for p in scene.cloud.points() {
            let v = p.coords - origin;
            let dist = v.norm();
            if dist <= 1e-12 || dist >= best {
                continue;
            }
            if v.dot(&dir) >= cos_beam * dist {
                best = dist;
            }
        }
        if best <= TOF_RANGE_M {
            out[s] = TofReading {
                distance: best,
                hit: true,
            };
        }
    }
    out
}

/// How member spectra combine into one observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixingModel {
    /// Weight `cos(angle to axis) · (d_nominal / d_point)²` — a declared
    /// model of the fiber's angular response and photon falloff.
    #[default]
    CosineInverseSquare,
    /// Uniform mean over members, for sensitivity checks.
    Uniform,
}

/// How the three ToF readings reduce to one sensing distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TofReduce {
    /// Maximum of the valid readings (the written procedure).
    #[default]
    Max,
    Mean,
}

/// Weighted mix of the ground-truth spectra of the points inside `cone`.
/// Returns the member indices alongside; an empty membership yields a zero
/// spectrum, which callers should treat as a warning, not a measurement.
pub fn observe_spectrum(
    scene: &Scene,
    cone: &AcceptanceCone,
    mixing: MixingModel,
) -> (Spectrum, Vec<usize>) {
    let members = cone.members(&scene.cloud);
    let axis = scene.cloud.wavelengths().to_vec();
    if members.is_empty() {
        return (
            Spectrum::constant(axis, 0.0).expect("zero spectrum"),
            members,
        );
    }
    let apex = cone.apex();
    let dir = cone.axis().into_inner();
    let d_nominal = cone.depth();
    let mut acc = vec![0.0; axis.len()];
    let mut total = 0.0;
    for &i in &members {
        let v = scene.cloud.points()[i] - apex;
        let dist = v.norm().max(1e-9);
        let w = match mixing {
            MixingModel::Uniform => 1.0,
            MixingModel::CosineInverseSquare => {
                let cos = (v.dot(&dir) / dist).clamp(0.0, 1.0);
                cos * (d_nominal / dist).powi(2)
            }
        };
        total += w;
        for (a, t) in acc.iter_mut().zip(scene.truth_values(i)) {
            *a += w * t;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    (Spectrum::new(axis, acc).expect("finite mix"), members)
}

/// Scanning strategy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Planned platform poses plus ToF normal-matching refinement.
    Prospect,
    /// Probe arrives from straight above each target (3-axis gantry):
    /// approach normals overwritten with global up.
    Gantry3Axis,
    /// Planned probe positions but identity platform rotation.
    NoRotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub na: f64,
    pub epsilon: f64,
    pub tof_layout: [Point2<f64>; 3],
    /// Normal-matching passes in prospect mode.
    pub refine_iterations: usize,
    pub mixing: MixingModel,
    pub tof_reduce: TofReduce,
    /// Per-bin Gaussian noise on observed spectra (0 = noiseless).
    pub spectral_noise_sigma: f64,
    /// Gaussian jitter on ToF readings (0 = exact).
    pub tof_jitter_sigma: f64,
    pub seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            na: 0.5,
            epsilon: 0.002,
            tof_layout: crate::planning::default_tof_layout(),
            refine_iterations: 1,
            mixing: MixingModel::default(),
            tof_reduce: TofReduce::default(),
            spectral_noise_sigma: 0.0,
            tof_jitter_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Per-viewpoint execution record.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewpointRecord {
    /// Position in the executed order.
    pub sequence: usize,
    pub target_index: usize,
    /// Platform pose actually used, in the scene frame.
    pub pose: PlatformPose,
    pub tof: [TofReading; 3],
    pub member_count: usize,
    /// Observed spectrum; `None` when the cone caught nothing.
    pub spectrum: Option<Spectrum>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub mode: ScanMode,
    /// Observed spectral cloud (scene geometry, accumulated observations).
    pub cloud: SpectralCloud,
    pub records: Vec<ViewpointRecord>,
    /// Viewpoints dropped because the platform could not reach them.
    pub skipped_infeasible: usize,
    /// Viewpoints dropped because no ToF sensor returned.
    pub skipped_no_return: usize,
}

impl ScanResult {
    pub fn executed(&self) -> usize {
        self.records.len()
    }
}

/// Executes `plan` against `scene` in the given mode. The plan must have
/// been generated from the scene's cloud.
pub fn run_scan(
    scene: &Scene,
    plan: &ScanPlan,
    mode: ScanMode,
    geom: &PlatformGeometry,
    cfg: &ScanConfig,
) -> Result<ScanResult, SimError> {
    if plan.source_fingerprint != scene.cloud.fingerprint()
        || plan.source_points != scene.cloud.len()
    {
        return Err(SimError::PlanSceneMismatch);
    }
    let mut observed = scene.cloud.clone();
    observed.clear_spectra();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.spectral_noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.spectral_noise_sigma).expect("sigma > 0"))
    } else {
        None
    };
    let jitter = if cfg.tof_jitter_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.tof_jitter_sigma).expect("sigma > 0"))
    } else {
        None
    };

    let base_to_camera = plan.config.camera_to_base.inverse();
    let mut records = Vec::new();
    let mut skipped_infeasible = 0usize;
    let mut skipped_no_return = 0usize;

    for vp in &plan.viewpoints {
        // world (scene-frame) quantities
        let arm_world = base_to_camera * vp.arm_frame;
        let probe_world = base_to_camera * vp.probe_point;
        let surface_world = base_to_camera * vp.surface_point;

        let mut pose = match mode {
            ScanMode::Prospect => {
                if !vp.feasible {
                    skipped_infeasible += 1;
                    continue;
                }
                let stewart_iso = Isometry3::from_parts(
                    Translation3::from(vp.stewart_pose.translation),
                    UnitQuaternion::from_rotation_matrix(&vp.stewart_pose.rotation()),
                );
                let world = arm_world * stewart_iso;
                PlatformPose::from_parts(
                    world.translation.vector,
                    &world.rotation.to_rotation_matrix(),
                )
            }
            ScanMode::Gantry3Axis => PlatformPose::new(
                surface_world.coords + Vector3::new(0.0, 0.0, plan.config.scan_dist),
                0.0,
                0.0,
                0.0,
            ),
            ScanMode::NoRotation => PlatformPose::new(probe_world.coords, 0.0, 0.0, 0.0),
        };

        if mode == ScanMode::Prospect {
            // The acquisition cycle needs all three rangers to confirm the
            // pose before a spectrum is integrated; without them the
            // viewpoint cannot be normal-matched and is dropped.
            let mut confirmed = true;
            for _ in 0..cfg.refine_iterations {
                let readings = tof_with_jitter(scene, &pose, cfg, jitter.as_ref(), &mut rng);
                if !readings.iter().all(|r| r.hit) {
                    confirmed = false;
                    break;
                }
                let distances = [
                    readings[0].distance,
                    readings[1].distance,
                    readings[2].distance,
                ];
                match normal_match_pose(
                    &distances,
                    &cfg.tof_layout,
                    &pose,
                    plan.config.scan_dist,
                ) {
                    Ok(refined) => pose = refined,
                    Err(_) => {
                        confirmed = false;
                        break;
                    }
                }
            }
            if !confirmed {
                skipped_no_return += 1;
                continue;
            }
            // the refined pose must still be reachable
            let arm_inv = arm_world.inverse();
            let pose_iso = Isometry3::from_parts(
                Translation3::from(pose.translation),
                UnitQuaternion::from_rotation_matrix(&pose.rotation()),
            );
            let rel = arm_inv * pose_iso;
            let stewart = PlatformPose::from_parts(
                rel.translation.vector,
                &rel.rotation.to_rotation_matrix(),
            );
            if !stewart_pose_feasible(&stewart, &plan.config.arm_offset, geom) {
                skipped_infeasible += 1;
                continue;
            }
        }

        let tof = tof_with_jitter(scene, &pose, cfg, jitter.as_ref(), &mut rng);
        let valid: Vec<f64> = tof.iter().filter(|r| r.hit).map(|r| r.distance).collect();
        if valid.is_empty() {
            skipped_no_return += 1;
            continue;
        }
        let distance = match cfg.tof_reduce {
            TofReduce::Max => valid.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            TofReduce::Mean => valid.iter().sum::<f64>() / valid.len() as f64,
        };

        let axis_dir = Unit::new_normalize(pose.rotation() * -Vector3::z());
        let cone = AcceptanceCone::from_na(
            Point3::from(pose.translation),
            axis_dir,
            cfg.na,
            distance,
            cfg.epsilon,
        )?;
        let (mut spectrum, members) = observe_spectrum(scene, &cone, cfg.mixing);
        if let Some(noise) = noise.as_ref() {
            let noisy: Vec<f64> = spectrum
                .values()
                .iter()
                .map(|v| v + noise.sample(&mut rng))
                .collect();
            spectrum = Spectrum::new(spectrum.wavelengths().to_vec(), noisy)
                .expect("noise is finite");
        }

        let observed_spectrum = if members.is_empty() {
            None
        } else {
            associate_spectrum(&mut observed, &cone, &spectrum)?;
            Some(spectrum)
        };
        records.push(ViewpointRecord {
            sequence: records.len(),
            target_index: vp.target_index,
            pose,
            tof,
            member_count: members.len(),
            spectrum: observed_spectrum,
        });
    }

    Ok(ScanResult {
        mode,
        cloud: observed,
        records,
        skipped_infeasible,
        skipped_no_return,
    })
}

fn tof_with_jitter(
    scene: &Scene,
    pose: &PlatformPose,
    cfg: &ScanConfig,
    jitter: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> [TofReading; 3] {
    let mut readings = simulate_tof(scene, pose, &cfg.tof_layout);
    if let Some(dist) = jitter {
        for r in &mut readings {
            if r.hit {
                r.distance = (r.distance + dist.sample(rng)).clamp(1e-6, TOF_RANGE_M);
            }
        }
    }
    readings
}

/// Per-point SAM between two observed clouds over their commonly scanned
/// points, with the summary statistics used for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct SamComparison {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub range: f64,
}

/// Compares the mean observed spectrum per point between two clouds over
/// the intersection of their scanned points.
pub fn compare_clouds(a: &SpectralCloud, b: &SpectralCloud) -> Result<SamComparison, SimError> {
    let mut indices = Vec::new();
    let mut scores = Vec::new();
    for i in 0..a.len().min(b.len()) {
        if !(a.is_scanned(i) && b.is_scanned(i)) {
            continue;
        }
        let sa = a.mean_spectrum(i).expect("scanned");
        let sb = b.mean_spectrum(i).expect("scanned");
        let score = sam_on_slices(&sa, &sb)?;
        indices.push(i);
        scores.push(score);
    }
    if indices.is_empty() {
        return Err(SimError::NoOverlap);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SamComparison {
        indices,
        scores,
        mean,
        std_dev: var.sqrt(),
        range: max - min,
    })
}

/// Convenience wrapper over [`compare_clouds`] for two scan results.
pub fn compare_scans(a: &ScanResult, b: &ScanResult) -> Result<SamComparison, SimError> {
    compare_clouds(&a.cloud, &b.cloud)
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "paired samples required");
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &order[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let ra = rank(xs);
    let rb = rank(ys);
    let ma = ra.iter().sum::<f64>() / ra.len() as f64;
    let mb = rb.iter().sum::<f64>() / rb.len() as f64;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (a, b) in ra.iter().zip(&rb) {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    cov / (va * vb).sqrt()
}
