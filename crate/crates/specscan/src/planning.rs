//! Viewpoint coverage planning and ToF-based surface normal matching.
//!
//! Planning downsamples a cleaned cloud to evenly spaced targets, estimates
//! a normal per target, and emits one probe placement per target: the probe
//! standing off `scan_dist` along the normal, decomposed into a coarse arm
//! frame (fixed rotation, z up) plus a fine platform pose that does the
//! normal matching. Arm frames are transformed into the arm base frame as a
//! final step; platform poses stay relative to the arm frame.

use crate::cloud::{estimate_normals, voxel_downsample, CloudError, SpectralCloud};
use crate::kinematics::{PlatformGeometry, PlatformPose};
use nalgebra::{Isometry3, Point2, Point3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ranging limit of the platform's time-of-flight sensors (meters).
pub const TOF_RANGE_M: f64 = 0.06;

/// Beam half-angle of one ToF sensor.
pub const TOF_HALF_ANGLE_RAD: f64 = 9.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, PartialEq)]
pub enum PlanningError {
    #[error("cannot plan over an empty cloud")]
    EmptyCloud,
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("ToF contact points are coincident or collinear")]
    DegenerateContacts,
    #[error("ToF reading {reading} m on sensor {sensor} outside (0, {TOF_RANGE_M}]")]
    OutOfRange { sensor: usize, reading: f64 },
}

/// One planned probe placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Viewpoint {
    /// Index into the downsampled target cloud.
    pub target_index: usize,
    pub surface_point: Point3<f64>,
    pub surface_normal: Vector3<f64>,
    /// `surface_point + scan_dist * surface_normal`.
    pub probe_point: Point3<f64>,
    /// Coarse frame for the global motion stage, z aligned with global up.
    pub arm_frame: Isometry3<f64>,
    /// Fine platform pose relative to the arm frame; plate z parallel to
    /// the surface normal.
    pub stewart_pose: PlatformPose,
    /// False when the platform cannot reach the pose within joint limits.
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewpointOrder {
    /// Greedy nearest-neighbor tour over probe points (shorter travel).
    Tour,
    /// Downsampled-cloud order.
    Cloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub voxel_size: f64,
    pub scan_dist: f64,
    pub arm_offset: Vector3<f64>,
    pub camera_to_base: Isometry3<f64>,
    pub order: ViewpointOrder,
    /// k-NN size for normal estimation on the downsampled cloud.
    pub normal_neighbors: usize,
    /// Normal orientation target, in the cloud (camera) frame.
    pub sensor_origin: Point3<f64>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            voxel_size: 0.01,
            scan_dist: 0.03,
            arm_offset: Vector3::new(0.0, 0.0, 0.05),
            camera_to_base: Isometry3::identity(),
            order: ViewpointOrder::Tour,
            normal_neighbors: 30,
            sensor_origin: Point3::origin(),
        }
    }
}

/// Ordered viewpoints plus the configuration and the fingerprint of the
/// cloud they were planned from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan {
    pub viewpoints: Vec<Viewpoint>,
    pub config: PlanConfig,
    pub source_points: usize,
    pub source_fingerprint: u64,
}

impl ScanPlan {
    pub fn infeasible_count(&self) -> usize {
        self.viewpoints.iter().filter(|v| !v.feasible).count()
    }
}

/// Rotation with the smallest angle taking +z to `dir`.
fn rotation_z_to(dir: &Vector3<f64>) -> Rotation3<f64> {
    match UnitQuaternion::rotation_between(&Vector3::z(), dir) {
        Some(q) => q.to_rotation_matrix(),
        // dir is anti-parallel to z
        None => Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
    }
}

/// Maps an arm-relative platform pose into the platform's own IK frame.
///
/// The platform base hangs from the arm flange pointing down (a π flip
/// about x), and the nominal relative pose — probe `arm_offset` below the
/// arm frame, no rotation — corresponds to the platform's home pose.
pub fn platform_ik_pose(
    stewart_pose: &PlatformPose,
    arm_offset: &Vector3<f64>,
    geom: &PlatformGeometry,
) -> PlatformPose {
    let flip = Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
    let translation = Vector3::new(0.0, 0.0, geom.home_height())
        + flip * (stewart_pose.translation + arm_offset);
    let rotation = flip * stewart_pose.rotation() * flip;
    PlatformPose::from_parts(translation, &rotation)
}

/// Whether the platform can realize an arm-relative pose (IK solvable and
/// inside joint limits).
pub fn stewart_pose_feasible(
    stewart_pose: &PlatformPose,
    arm_offset: &Vector3<f64>,
    geom: &PlatformGeometry,
) -> bool {
    geom.is_reachable(&platform_ik_pose(stewart_pose, arm_offset, geom))
}

/// Plans probe viewpoints covering `cloud` (assumed cleaned, in the camera
/// frame). Infeasible platform poses are flagged, not dropped.
pub fn plan_viewpoints(
    cloud: &SpectralCloud,
    geom: &PlatformGeometry,
    cfg: &PlanConfig,
) -> Result<ScanPlan, PlanningError> {
    if cloud.is_empty() {
        return Err(PlanningError::EmptyCloud);
    }
    let down = voxel_downsample(cloud, cfg.voxel_size)?;
    if down.len() < 4 {
        return Err(CloudError::TooFewPoints {
            needed: 4,
            got: down.len(),
        }
        .into());
    }
    let k = cfg.normal_neighbors.clamp(3, down.len() - 1);
    let down = estimate_normals(&down, k, &cfg.sensor_origin)?;
    let normals = down.normals().expect("normals just estimated");

    let mut viewpoints = Vec::with_capacity(down.len());
    for (i, (point, normal)) in down.points().iter().zip(normals).enumerate() {
        let probe = point + cfg.scan_dist * normal;
        let arm_point = probe + cfg.arm_offset;
        let stewart_pose =
            PlatformPose::from_parts(probe - arm_point, &rotation_z_to(normal));
        let feasible = stewart_pose_feasible(&stewart_pose, &cfg.arm_offset, geom);
        viewpoints.push(Viewpoint {
            target_index: i,
            surface_point: *point,
            surface_normal: *normal,
            probe_point: probe,
            arm_frame: Isometry3::from_parts(
                Translation3::from(arm_point.coords),
                UnitQuaternion::identity(),
            ),
            stewart_pose,
            feasible,
        });
    }

    if cfg.order == ViewpointOrder::Tour {
        viewpoints = greedy_tour(viewpoints);
    }

    // Alg. trailing step: arm frames into the arm base frame. World-space
    // viewpoint fields move with them; the platform-relative pose does not.
    for vp in &mut viewpoints {
        vp.surface_point = cfg.camera_to_base * vp.surface_point;
        vp.surface_normal = cfg.camera_to_base * vp.surface_normal;
        vp.probe_point = cfg.camera_to_base * vp.probe_point;
        vp.arm_frame = cfg.camera_to_base * vp.arm_frame;
    }

    Ok(ScanPlan {
        viewpoints,
        config: cfg.clone(),
        source_points: cloud.len(),
        source_fingerprint: cloud.fingerprint(),
    })
}

fn greedy_tour(mut pending: Vec<Viewpoint>) -> Vec<Viewpoint> {
    let mut ordered = Vec::with_capacity(pending.len());
    let mut current = 0usize;
    while !pending.is_empty() {
        let vp = pending.remove(current.min(pending.len() - 1));
        let here = vp.probe_point;
        ordered.push(vp);
        if pending.is_empty() {
            break;
        }
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (i, cand) in pending.iter().enumerate() {
            let d = (cand.probe_point - here).norm_squared();
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        current = best;
    }
    ordered
}

/// Default ToF mount layout: three sensors at 120° increments on a 2 cm
/// radius around the fiber.
pub fn default_tof_layout() -> [Point2<f64>; 3] {
    let r = 0.02;
    [0.0, 2.0 * std::f64::consts::FRAC_PI_3, 4.0 * std::f64::consts::FRAC_PI_3]
        .map(|ang: f64| Point2::new(r * ang.cos(), r * ang.sin()))
}

/// Corrective pose from three ToF readings.
///
/// Each sensor sits at a 2D mount position on the plate (z = 0 in the plate
/// frame) and ranges along plate −z. The three contact points define the
/// local surface plane; the returned pose turns the plate z against that
/// plane and places the probe `target_offset` above it along the new
/// normal. Lateral position is preserved.
pub fn normal_match_pose(
    tof_readings: &[f64; 3],
    tof_layout: &[Point2<f64>; 3],
    current: &PlatformPose,
    target_offset: f64,
) -> Result<PlatformPose, PlanningError> {
    for (i, r) in tof_readings.iter().enumerate() {
        if !(*r > 0.0 && *r <= TOF_RANGE_M) {
            return Err(PlanningError::OutOfRange {
                sensor: i,
                reading: *r,
            });
        }
    }
    let rot = current.rotation();
    let contacts: Vec<Point3<f64>> = tof_layout
        .iter()
        .zip(tof_readings)
        .map(|(mount, reading)| {
            let local = Vector3::new(mount.x, mount.y, -reading);
            Point3::from(current.translation + rot * local)
        })
        .collect();

    let cross = (contacts[1] - contacts[0]).cross(&(contacts[2] - contacts[0]));
    if cross.norm() < 1e-12 {
        return Err(PlanningError::DegenerateContacts);
    }
    let mut plane_normal = cross.normalize();
    // orient toward the plate
    if plane_normal.dot(&(current.translation - contacts[0].coords)) < 0.0 {
        plane_normal = -plane_normal;
    }

    let height = plane_normal.dot(&(current.translation - contacts[0].coords));
    let new_translation = current.translation - (height - target_offset) * plane_normal;

    let plate_z = rot * Vector3::z();
    let align = UnitQuaternion::rotation_between(&plate_z, &plane_normal)
        .map(|q| q.to_rotation_matrix())
        .unwrap_or_else(|| {
            Rotation3::from_axis_angle(&Unit::new_normalize(rot * Vector3::x()), std::f64::consts::PI)
        });
    let new_rotation = align * rot;
    Ok(PlatformPose::from_parts(new_translation, &new_rotation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::GeometryConfig;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn geom() -> PlatformGeometry {
        PlatformGeometry::from_config(&GeometryConfig::default()).unwrap()
    }

    fn plane_cloud() -> SpectralCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<_> = (0..3000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-0.08..0.08),
                    rng.random_range(-0.08..0.08),
                    -0.15,
                )
            })
            .collect();
        SpectralCloud::new(pts)
    }

    fn hemisphere_cloud(r: f64, center: Point3<f64>) -> SpectralCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<_> = (0..4000)
            .map(|_| {
                let cos_t: f64 = rng.random_range(0.3..1.0);
                let sin_t = (1.0 - cos_t * cos_t).sqrt();
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                center + r * Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
            })
            .collect();
        SpectralCloud::new(pts)
    }

    fn sensor_above() -> Point3<f64> {
        Point3::new(0.0, 0.0, 1.0)
    }

    #[test]
    fn flat_plane_plan_stands_off_vertically_with_identity_rotation() {
        let cloud = plane_cloud();
        let cfg = PlanConfig {
            sensor_origin: sensor_above(),
            order: ViewpointOrder::Cloud,
            ..PlanConfig::default()
        };
        let plan = plan_viewpoints(&cloud, &geom(), &cfg).unwrap();
        assert!(!plan.viewpoints.is_empty());
        assert_eq!(plan.infeasible_count(), 0);
        for vp in &plan.viewpoints {
            assert_relative_eq!(
                vp.probe_point,
                vp.surface_point + Vector3::z() * cfg.scan_dist,
                epsilon = 1e-9
            );
            assert!(vp.stewart_pose.yaw.abs() < 1e-9);
            assert!(vp.stewart_pose.pitch.abs() < 1e-9);
            assert!(vp.stewart_pose.roll.abs() < 1e-9);
            assert_relative_eq!(
                vp.stewart_pose.translation,
                -cfg.arm_offset,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn viewpoints_satisfy_composition_invariants() {
        let center = Point3::new(0.0, 0.0, -0.25);
        let cloud = hemisphere_cloud(0.06, center);
        let cfg = PlanConfig {
            sensor_origin: sensor_above(),
            ..PlanConfig::default()
        };
        let plan = plan_viewpoints(&cloud, &geom(), &cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        for vp in &plan.viewpoints {
            assert!(seen.insert(vp.target_index), "duplicate target index");
            assert_relative_eq!(
                (vp.probe_point - vp.surface_point).norm(),
                cfg.scan_dist,
                epsilon = 1e-9
            );
            // arm ∘ stewart puts the probe at probe_point...
            let stewart_iso = Isometry3::from_parts(
                Translation3::from(vp.stewart_pose.translation),
                UnitQuaternion::from_rotation_matrix(&vp.stewart_pose.rotation()),
            );
            let composed = vp.arm_frame * stewart_iso;
            assert_relative_eq!(
                Point3::from(composed.translation.vector),
                vp.probe_point,
                epsilon = 1e-9
            );
            // ...with the probe axis (plate −z) against the surface normal.
            let probe_axis = composed.rotation * -Vector3::z();
            assert!(probe_axis.dot(&vp.surface_normal) < -(1.0 - 1e-6));
        }
    }

    #[test]
    fn hemisphere_probes_lie_on_concentric_shell() {
        let center = Point3::new(0.0, 0.0, -0.25);
        let cloud = hemisphere_cloud(0.06, center);
        let cfg = PlanConfig {
            sensor_origin: sensor_above(),
            ..PlanConfig::default()
        };
        let plan = plan_viewpoints(&cloud, &geom(), &cfg).unwrap();
        for vp in &plan.viewpoints {
            let radius = (vp.probe_point - center).norm();
            assert!(
                (radius - 0.09).abs() < 2.5e-3,
                "probe radius {radius} target 0.09"
            );
            // plate z parallel to the (near-radial) surface normal
            let plate_z = vp.stewart_pose.rotation() * Vector3::z();
            assert!(plate_z.dot(&vp.surface_normal) > 1.0 - 1e-9);
        }
    }

    #[test]
    fn camera_to_base_moves_arm_frames_exactly() {
        let cloud = plane_cloud();
        let base_cfg = PlanConfig {
            sensor_origin: sensor_above(),
            order: ViewpointOrder::Cloud,
            ..PlanConfig::default()
        };
        let iso = Isometry3::new(
            Vector3::new(0.4, -0.1, 0.2),
            Vector3::new(0.1, 0.2, -0.3),
        );
        let moved_cfg = PlanConfig {
            camera_to_base: iso,
            ..base_cfg.clone()
        };
        let g = geom();
        let a = plan_viewpoints(&cloud, &g, &base_cfg).unwrap();
        let b = plan_viewpoints(&cloud, &g, &moved_cfg).unwrap();
        for (va, vb) in a.viewpoints.iter().zip(&b.viewpoints) {
            let expected = iso * va.arm_frame;
            assert_relative_eq!(
                vb.arm_frame.translation.vector,
                expected.translation.vector,
                epsilon = 1e-12
            );
            assert_relative_eq!(vb.probe_point, iso * va.probe_point, epsilon = 1e-12);
            assert_eq!(va.stewart_pose, vb.stewart_pose);
            assert_eq!(va.feasible, vb.feasible);
        }
    }

    #[test]
    fn joint_cloud_and_extrinsics_transform_leaves_plan_unchanged() {
        let cloud = hemisphere_cloud(0.06, Point3::new(0.0, 0.0, -0.25));
        let g = geom();
        // The voxel grid is axis-aligned in the camera frame, so the
        // invariant is exercised with a bucketing-preserving rigid motion:
        // translation by whole voxel cells.
        let voxel = PlanConfig::default().voxel_size;
        let iso = Isometry3::translation(3.0 * voxel, -2.0 * voxel, 5.0 * voxel);
        let cfg = PlanConfig {
            sensor_origin: sensor_above(),
            camera_to_base: iso, // camera -> base undoes the cloud motion below
            order: ViewpointOrder::Cloud,
            ..PlanConfig::default()
        };
        let reference = plan_viewpoints(&cloud, &g, &{
            let mut c = cfg.clone();
            c.camera_to_base = Isometry3::identity();
            c
        })
        .unwrap();

        let moved = cloud.transformed(&iso.inverse());
        let moved_cfg = PlanConfig {
            sensor_origin: iso.inverse() * sensor_above(),
            ..cfg
        };
        let plan = plan_viewpoints(&moved, &g, &moved_cfg).unwrap();
        assert_eq!(reference.viewpoints.len(), plan.viewpoints.len());
        for (va, vb) in reference.viewpoints.iter().zip(&plan.viewpoints) {
            assert_relative_eq!(va.probe_point, vb.probe_point, epsilon = 1e-9);
            assert_relative_eq!(
                va.stewart_pose.translation,
                vb.stewart_pose.translation,
                epsilon = 1e-9
            );
            assert_relative_eq!(va.stewart_pose.pitch, vb.stewart_pose.pitch, epsilon = 1e-9);
            assert_eq!(va.feasible, vb.feasible);
        }
    }

    #[test]
    fn tour_order_is_deterministic_and_complete() {
        let cloud = plane_cloud();
        let g = geom();
        let tour_cfg = PlanConfig {
            sensor_origin: sensor_above(),
            ..PlanConfig::default()
        };
        let cloud_cfg = PlanConfig {
            order: ViewpointOrder::Cloud,
            ..tour_cfg.clone()
        };
        let a = plan_viewpoints(&cloud, &g, &tour_cfg).unwrap();
        let b = plan_viewpoints(&cloud, &g, &tour_cfg).unwrap();
        assert_eq!(a.viewpoints, b.viewpoints);
        let c = plan_viewpoints(&cloud, &g, &cloud_cfg).unwrap();
        let mut a_targets: Vec<_> = a.viewpoints.iter().map(|v| v.target_index).collect();
        let mut c_targets: Vec<_> = c.viewpoints.iter().map(|v| v.target_index).collect();
        a_targets.sort_unstable();
        c_targets.sort_unstable();
        assert_eq!(a_targets, c_targets);

        // tour visits near neighbors consecutively more than cloud order does
        let tour_len: f64 = a
            .viewpoints
            .windows(2)
            .map(|w| (w[1].probe_point - w[0].probe_point).norm())
            .sum();
        let cloud_len: f64 = c
            .viewpoints
            .windows(2)
            .map(|w| (w[1].probe_point - w[0].probe_point).norm())
            .sum();
        assert!(tour_len < cloud_len);
    }

    #[test]
    fn empty_cloud_is_rejected() {
        let empty = SpectralCloud::new(Vec::new());
        assert_eq!(
            plan_viewpoints(&empty, &geom(), &PlanConfig::default()),
            Err(PlanningError::EmptyCloud)
        );
    }

    #[test]
    fn steep_targets_are_flagged_infeasible_not_dropped() {
        // Upper hemisphere band with near-horizontal normals at the rim.
        let center = Point3::new(0.0, 0.0, -0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pts: Vec<_> = (0..4000)
            .map(|_| {
                let cos_t: f64 = rng.random_range(0.02..1.0);
                let sin_t = (1.0 - cos_t * cos_t).sqrt();
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                center + 0.06 * Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
            })
            .collect();
        let cloud = SpectralCloud::new(pts);
        // A tight joint limit forces rim viewpoints out of the workspace.
        let g = PlatformGeometry::from_config(&GeometryConfig {
            joint_limits_rad: 0.35,
            ..GeometryConfig::default()
        })
        .unwrap();
        let plan = plan_viewpoints(
            &cloud,
            &g,
            &PlanConfig {
                sensor_origin: sensor_above(),
                ..PlanConfig::default()
            },
        )
        .unwrap();
        let infeasible = plan.infeasible_count();
        assert!(infeasible > 0, "expected some rim viewpoints out of reach");
        assert!(infeasible < plan.viewpoints.len());
        for vp in &plan.viewpoints {
            let tilt = vp.surface_normal.angle(&Vector3::z());
            if tilt < 0.1 {
                assert!(vp.feasible);
            }
        }
    }

    #[test]
    fn normal_match_on_parallel_surface_only_changes_height() {
        let layout = default_tof_layout();
        let current = PlatformPose::new(Vector3::new(0.01, -0.02, 0.1), 0.0, 0.0, 0.0);
        let d = 0.04;
        let out = normal_match_pose(&[d, d, d], &layout, &current, 0.03).unwrap();
        assert_relative_eq!(out.yaw, current.yaw, epsilon = 1e-12);
        assert_relative_eq!(out.pitch, current.pitch, epsilon = 1e-12);
        assert_relative_eq!(out.roll, current.roll, epsilon = 1e-12);
        assert_relative_eq!(out.translation.x, current.translation.x, epsilon = 1e-12);
        assert_relative_eq!(out.translation.y, current.translation.y, epsilon = 1e-12);
        assert_relative_eq!(
            out.translation.z,
            current.translation.z - (d - 0.03),
            epsilon = 1e-12
        );
    }

    /// Ideal ToF readings for a plane `normal·p = offset` seen from `pose`.
    fn ideal_readings(
        pose: &PlatformPose,
        layout: &[Point2<f64>; 3],
        normal: &Vector3<f64>,
        offset: f64,
    ) -> [f64; 3] {
        let rot = pose.rotation();
        let dir = rot * -Vector3::z();
        let mut out = [0.0; 3];
        for (i, mount) in layout.iter().enumerate() {
            let origin = pose.translation + rot * Vector3::new(mount.x, mount.y, 0.0);
            out[i] = (offset - normal.dot(&origin)) / normal.dot(&dir);
        }
        out
    }

    #[test]
    fn normal_match_recovers_tilted_plane() {
        let layout = default_tof_layout();
        let current = PlatformPose::new(Vector3::new(0.0, 0.0, 0.04), 0.0, 0.0, 0.0);
        let tilt = 10.0_f64.to_radians();
        let plane_normal = Rotation3::from_axis_angle(&Vector3::x_axis(), tilt) * Vector3::z();
        let readings = ideal_readings(&current, &layout, &plane_normal, 0.0);
        let target = 0.03;
        let out = normal_match_pose(&readings, &layout, &current, target).unwrap();

        let plate_z = out.rotation() * Vector3::z();
        assert!(plate_z.angle(&plane_normal) < 1e-9);
        // probe-to-plane distance along the new normal equals the target
        let dist = plane_normal.dot(&out.translation);
        assert_relative_eq!(dist, target, epsilon = 1e-6);
        assert_relative_eq!(out.roll, tilt, epsilon = 1e-9);
    }

    #[test]
    fn normal_match_is_idempotent_on_ideal_readings() {
        let layout = default_tof_layout();
        let start = PlatformPose::new(Vector3::new(0.0, 0.0, 0.05), 0.0, 0.0, 0.0);
        let plane_normal =
            (Rotation3::from_axis_angle(&Vector3::y_axis(), 0.15) * Vector3::z()).normalize();
        let r1 = ideal_readings(&start, &layout, &plane_normal, 0.0);
        let once = normal_match_pose(&r1, &layout, &start, 0.03).unwrap();
        let r2 = ideal_readings(&once, &layout, &plane_normal, 0.0);
        let twice = normal_match_pose(&r2, &layout, &once, 0.03).unwrap();
        assert_relative_eq!(once.translation, twice.translation, epsilon = 1e-9);
        assert_relative_eq!(once.pitch, twice.pitch, epsilon = 1e-9);
        assert_relative_eq!(once.roll, twice.roll, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_layout_and_bad_readings_error() {
        let current = PlatformPose::new(Vector3::new(0.0, 0.0, 0.05), 0.0, 0.0, 0.0);
        let dup = [
            Point2::new(0.02, 0.0),
            Point2::new(0.02, 0.0),
            Point2::new(-0.02, 0.0),
        ];
        assert_eq!(
            normal_match_pose(&[0.03, 0.03, 0.03], &dup, &current, 0.03),
            Err(PlanningError::DegenerateContacts)
        );
        let layout = default_tof_layout();
        assert!(matches!(
            normal_match_pose(&[0.03, 0.07, 0.03], &layout, &current, 0.03),
            Err(PlanningError::OutOfRange { sensor: 1, .. })
        ));
        assert!(matches!(
            normal_match_pose(&[0.0, 0.03, 0.03], &layout, &current, 0.03),
            Err(PlanningError::OutOfRange { sensor: 0, .. })
        ));
    }
}
