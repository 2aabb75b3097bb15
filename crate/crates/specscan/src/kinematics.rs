//! Rotary-servo Stewart platform kinematics.
//!
//! The platform is driven by six servos. Each servo sweeps a horn of length
//! `l_h` in a fixed plane; a ball-jointed arm of length `l_a` connects the
//! horn tip to an anchor on the moving plate. Closed-form inverse kinematics
//! follow the classic substitution: for servo angle `α_i`,
//!
//! ```text
//! A_i sin α_i + B_i cos α_i = C_i
//! A_i = 2 l_h l_iz
//! B_i = 2 l_h (cos β_i l_ix + sin β_i l_iy)
//! C_i = |l_i|² − (l_a² − l_h²)
//! α_i = asin(C_i / √(A_i² + B_i²)) − atan2(B_i, A_i)
//! ```
//!
//! where `l_i = T + R·P_i − B_i` is the virtual prismatic leg for the
//! commanded plate pose `(T, R)`. Forward kinematics has no closed form; it
//! is solved numerically as a damped least-squares root-find on the six
//! ball-joint closure residuals `|T + R·P_i − H_i(α_i)| − l_a`.

use nalgebra::{Matrix6, Point3, Quaternion, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("horn length must be positive, got {0}")]
    NonPositiveHorn(f64),
    #[error("arm length {arm} must exceed horn length {horn}")]
    ArmNotLongerThanHorn { arm: f64, horn: f64 },
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("joint limit must be positive, got {0}")]
    NonPositiveJointLimit(f64),
    #[error("geometry has no level home pose: arm too short for anchor span on leg {0}")]
    Unrealizable(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("pose unreachable: arcsin domain violated on leg {leg_index}")]
    Unreachable { leg_index: usize },
    #[error("forward kinematics did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("input lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("quaternion norm too small to normalize")]
    ZeroNorm,
}

/// On-disk platform description. Angles in radians, lengths in meters.
///
/// `beta_rad` may be omitted, in which case horn planes default to the
/// tangential layout produced by [`PlatformGeometry::from_config`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeometryConfig {
    pub horn_length_m: f64,
    pub arm_length_m: f64,
    pub base_radius_m: f64,
    pub platform_radius_m: f64,
    pub theta_b_rad: f64,
    pub theta_p_rad: f64,
    #[serde(default)]
    pub beta_rad: Option<[f64; 6]>,
    #[serde(default = "default_joint_limit")]
    pub joint_limits_rad: f64,
}

fn default_joint_limit() -> f64 {
    FRAC_PI_2
}

impl Default for GeometryConfig {
    /// Plausible desk-scale dimensions. The sampling box of ±20 mm in z and
    /// ±0.4 rad in pitch/roll about the home pose is fully reachable and
    /// stays inside the ±π/2 joint limits.
    fn default() -> Self {
        GeometryConfig {
            horn_length_m: 0.045,
            arm_length_m: 0.09,
            base_radius_m: 0.05,
            platform_radius_m: 0.03,
            theta_b_rad: 0.5,
            theta_p_rad: 0.5,
            beta_rad: None,
            joint_limits_rad: FRAC_PI_2,
        }
    }
}

/// Fixed mechanical parameters with generated anchor points.
///
/// Anchors come in three mirrored pairs (120° apart), so the anchor set is
/// invariant under rotation by 120° about z with a leg-index shift of two.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformGeometry {
    horn_length: f64,
    arm_length: f64,
    base_anchors: [Point3<f64>; 6],
    platform_anchors: [Point3<f64>; 6],
    servo_plane_angles: [f64; 6],
    base_pair_angle: f64,
    platform_pair_angle: f64,
    joint_limit: f64,
    home_height: f64,
}

impl PlatformGeometry {
    /// Builds anchors in the triangular-pair layout: base pairs centered at
    /// 0°/120°/240°, plate pairs at 60°/180°/300°, `theta_*` being the full
    /// angular separation inside a pair. Default horn planes are tangential,
    /// mirrored between pair partners.
    pub fn from_config(cfg: &GeometryConfig) -> Result<Self, GeometryError> {
        if cfg.horn_length_m <= 0.0 {
            return Err(GeometryError::NonPositiveHorn(cfg.horn_length_m));
        }
        if cfg.arm_length_m <= cfg.horn_length_m {
            return Err(GeometryError::ArmNotLongerThanHorn {
                arm: cfg.arm_length_m,
                horn: cfg.horn_length_m,
            });
        }
        if cfg.base_radius_m <= 0.0 {
            return Err(GeometryError::NonPositiveRadius(cfg.base_radius_m));
        }
        if cfg.platform_radius_m <= 0.0 {
            return Err(GeometryError::NonPositiveRadius(cfg.platform_radius_m));
        }
        if cfg.joint_limits_rad <= 0.0 {
            return Err(GeometryError::NonPositiveJointLimit(cfg.joint_limits_rad));
        }

        let mut base = [Point3::origin(); 6];
        let mut plat = [Point3::origin(); 6];
        let mut beta = [0.0_f64; 6];
        for i in 0..6 {
            let pm = if i % 2 == 0 { 1.0 } else { -1.0 };
            let phi_b = (i + i % 2) as f64 * FRAC_PI_3 + pm * cfg.theta_b_rad / 2.0;
            let phi_cut = (1 + i - i % 2) as f64 * FRAC_PI_3;
            let phi_p = phi_cut - pm * cfg.theta_p_rad / 2.0;
            base[i] = Point3::new(
                cfg.base_radius_m * phi_b.cos(),
                cfg.base_radius_m * phi_b.sin(),
                0.0,
            );
            plat[i] = Point3::new(
                cfg.platform_radius_m * phi_p.cos(),
                cfg.platform_radius_m * phi_p.sin(),
                0.0,
            );
            beta[i] = phi_b + pm * FRAC_PI_2;
        }
        if let Some(b) = cfg.beta_rad {
            beta = b;
        }

        let mut geom = PlatformGeometry {
            horn_length: cfg.horn_length_m,
            arm_length: cfg.arm_length_m,
            base_anchors: base,
            platform_anchors: plat,
            servo_plane_angles: beta,
            base_pair_angle: cfg.theta_b_rad,
            platform_pair_angle: cfg.theta_p_rad,
            joint_limit: cfg.joint_limits_rad,
            home_height: 0.0,
        };

        // Home height: plate level, all horns horizontal (α = 0). Every leg
        // must agree on it for the neutral pose to exist.
        let mut h = f64::NAN;
        for i in 0..6 {
            let tip = geom.horn_end(i, 0.0);
            let dx = geom.platform_anchors[i].x - tip.x;
            let dy = geom.platform_anchors[i].y - tip.y;
            let span2 = dx * dx + dy * dy;
            let rest = geom.arm_length * geom.arm_length - span2;
            if rest <= 0.0 {
                return Err(GeometryError::Unrealizable(i));
            }
            let hi = rest.sqrt();
            if i == 0 {
                h = hi;
            } else if (hi - h).abs() > 1e-9 {
                return Err(GeometryError::Unrealizable(i));
            }
        }
        geom.home_height = h;
        Ok(geom)
    }

    pub fn horn_length(&self) -> f64 {
        self.horn_length
    }

    pub fn arm_length(&self) -> f64 {
        self.arm_length
    }

    pub fn base_anchors(&self) -> &[Point3<f64>; 6] {
        &self.base_anchors
    }

    pub fn platform_anchors(&self) -> &[Point3<f64>; 6] {
        &self.platform_anchors
    }

    pub fn servo_plane_angles(&self) -> &[f64; 6] {
        &self.servo_plane_angles
    }

    pub fn base_pair_angle(&self) -> f64 {
        self.base_pair_angle
    }

    pub fn platform_pair_angle(&self) -> f64 {
        self.platform_pair_angle
    }

    pub fn joint_limit(&self) -> f64 {
        self.joint_limit
    }

    /// Plate height above the base plane with every horn level (α = 0).
    pub fn home_height(&self) -> f64 {
        self.home_height
    }

    /// Neutral pose: centered at home height, no rotation.
    pub fn home_pose(&self) -> PlatformPose {
        PlatformPose::new(Vector3::new(0.0, 0.0, self.home_height), 0.0, 0.0, 0.0)
    }

    /// Ball-joint position at the horn tip for servo `leg` at angle `alpha`.
    pub fn horn_end(&self, leg: usize, alpha: f64) -> Point3<f64> {
        let beta = self.servo_plane_angles[leg];
        let dir = Vector3::new(
            alpha.cos() * beta.cos(),
            alpha.cos() * beta.sin(),
            alpha.sin(),
        );
        self.base_anchors[leg] + self.horn_length * dir
    }

    pub fn within_limits(&self, angles: &ServoAngles) -> bool {
        angles.0.iter().all(|a| a.abs() <= self.joint_limit)
    }

    /// IK solvable and inside the servo joint limits.
    pub fn is_reachable(&self, pose: &PlatformPose) -> bool {
        matches!(stewart_ik(self, pose), Ok(a) if self.within_limits(&a))
    }
}

/// Plate pose relative to the base: translation plus intrinsic x-y-z Euler
/// rotation, `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformPose {
    pub translation: Vector3<f64>,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl PlatformPose {
    pub fn new(translation: Vector3<f64>, yaw: f64, pitch: f64, roll: f64) -> Self {
        PlatformPose {
            translation,
            yaw,
            pitch,
            roll,
        }
    }

    /// Recovers Euler angles from a rotation matrix.
    pub fn from_parts(translation: Vector3<f64>, rotation: &Rotation3<f64>) -> Self {
        let (roll, pitch, yaw) = rotation.euler_angles();
        PlatformPose {
            translation,
            yaw,
            pitch,
            roll,
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    /// Position of a plate-frame point in the base frame.
    pub fn transform_point(&self, plate_point: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.translation + self.rotation() * plate_point.coords)
    }
}

/// Six servo angles in radians, indexed by leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoAngles(pub [f64; 6]);

impl ServoAngles {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }
}

/// Servo angles that realize `pose`, or which leg made it unreachable.
pub fn stewart_ik(
    geom: &PlatformGeometry,
    pose: &PlatformPose,
) -> Result<ServoAngles, KinematicsError> {
    let rot = pose.rotation();
    let mut alphas = [0.0_f64; 6];
    for (i, alpha) in alphas.iter_mut().enumerate() {
        let q = pose.translation + rot * geom.platform_anchors[i].coords;
        let l = q - geom.base_anchors[i].coords;
        let beta = geom.servo_plane_angles[i];
        let a = 2.0 * geom.horn_length * l.z;
        let b = 2.0 * geom.horn_length * (beta.cos() * l.x + beta.sin() * l.y);
        let c = l.norm_squared()
            - (geom.arm_length * geom.arm_length - geom.horn_length * geom.horn_length);
        let hyp = a.hypot(b);
        if c.abs() > hyp {
            return Err(KinematicsError::Unreachable { leg_index: i });
        }
        *alpha = (c / hyp).asin() - b.atan2(a);
    }
    Ok(ServoAngles(alphas))
}

/// Knobs for the forward-kinematics root-find.
#[derive(Debug, Clone, Copy)]
pub struct FkOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the closure residual norm (meters).
    pub residual_tolerance: f64,
    /// Per-iteration step caps keep the iterate in the guess's basin.
    pub max_translation_step: f64,
    pub max_rotation_step: f64,
}

impl Default for FkOptions {
    fn default() -> Self {
        FkOptions {
            max_iterations: 200,
            residual_tolerance: 1e-10,
            max_translation_step: 0.004,
            max_rotation_step: 0.04,
        }
    }
}

/// Numerically inverts [`stewart_ik`]: finds a pose whose legs close on the
/// horn tips fixed by `angles`. The result depends on `initial_guess`; FK of
/// a Stewart platform admits several assembly branches.
pub fn forward_kinematics(
    geom: &PlatformGeometry,
    angles: &ServoAngles,
    initial_guess: &PlatformPose,
) -> Result<PlatformPose, KinematicsError> {
    forward_kinematics_with(geom, angles, initial_guess, &FkOptions::default())
}

pub fn forward_kinematics_with(
    geom: &PlatformGeometry,
    angles: &ServoAngles,
    initial_guess: &PlatformPose,
    opts: &FkOptions,
) -> Result<PlatformPose, KinematicsError> {
    let tips: Vec<Point3<f64>> = (0..6).map(|i| geom.horn_end(i, angles.0[i])).collect();

    let residual = |x: &Vector6<f64>| -> Vector6<f64> {
        let rot = Rotation3::from_euler_angles(x[5], x[4], x[3]);
        let t = Vector3::new(x[0], x[1], x[2]);
        let mut r = Vector6::zeros();
        for i in 0..6 {
            let q = t + rot * geom.platform_anchors[i].coords;
            r[i] = (q - tips[i].coords).norm() - geom.arm_length;
        }
        r
    };

    let mut x = Vector6::new(
        initial_guess.translation.x,
        initial_guess.translation.y,
        initial_guess.translation.z,
        initial_guess.yaw,
        initial_guess.pitch,
        initial_guess.roll,
    );
    let mut r = residual(&x);
    let mut lambda = 1e-6;

    for _ in 0..opts.max_iterations {
        if r.norm() < opts.residual_tolerance {
            return Ok(PlatformPose::new(
                Vector3::new(x[0], x[1], x[2]),
                x[3],
                x[4],
                x[5],
            ));
        }

        let rot = Rotation3::from_euler_angles(x[5], x[4], x[3]);
        let t = Vector3::new(x[0], x[1], x[2]);
        // Instantaneous rotation axes of the intrinsic x-y-z Euler chain.
        let rz = Rotation3::from_euler_angles(0.0, 0.0, x[3]);
        let rzy = rz * Rotation3::from_euler_angles(0.0, x[4], 0.0);
        let axes = [Vector3::z(), rz * Vector3::y(), rzy * Vector3::x()];

        let mut jac = Matrix6::zeros();
        for i in 0..6 {
            let arm_disp = rot * geom.platform_anchors[i].coords;
            let v = t + arm_disp - tips[i].coords;
            let n = v / v.norm();
            jac[(i, 0)] = n.x;
            jac[(i, 1)] = n.y;
            jac[(i, 2)] = n.z;
            for (k, axis) in axes.iter().enumerate() {
                jac[(i, 3 + k)] = n.dot(&axis.cross(&arm_disp));
            }
        }

        let normal = jac.transpose() * jac + Matrix6::identity() * lambda;
        let rhs = -(jac.transpose() * r);
        let Some(step) = normal.lu().solve(&rhs) else {
            lambda *= 10.0;
            continue;
        };

        let t_norm = step.fixed_rows::<3>(0).norm();
        let r_norm = step.fixed_rows::<3>(3).norm();
        let scale = 1.0_f64
            .min(opts.max_translation_step / t_norm.max(1e-300))
            .min(opts.max_rotation_step / r_norm.max(1e-300));
        let candidate = x + step * scale;
        let cand_r = residual(&candidate);
        if cand_r.norm() < r.norm() {
            x = candidate;
            r = cand_r;
            lambda = (lambda * 0.5).max(1e-12);
        } else {
            lambda *= 10.0;
            if lambda > 1e8 {
                break;
            }
        }
    }

    if r.norm() < opts.residual_tolerance {
        Ok(PlatformPose::new(
            Vector3::new(x[0], x[1], x[2]),
            x[3],
            x[4],
            x[5],
        ))
    } else {
        Err(KinematicsError::NoConvergence {
            iterations: opts.max_iterations,
        })
    }
}

/// Root-mean-square Euclidean error between paired point lists.
pub fn pose_rmse(
    observed: &[Point3<f64>],
    commanded: &[Point3<f64>],
) -> Result<f64, MetricError> {
    if observed.len() != commanded.len() {
        return Err(MetricError::LengthMismatch(observed.len(), commanded.len()));
    }
    if observed.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let sum: f64 = observed
        .iter()
        .zip(commanded)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((sum / observed.len() as f64).sqrt())
}

/// Rotation discrepancy `acos(|q1·q2|)` between two orientations, in
/// `[0, π/2]`. Antipodal quaternions encode the same rotation and score 0.
/// Inputs are normalized; a norm below 1e-9 is rejected.
pub fn quat_error(q1: &Quaternion<f64>, q2: &Quaternion<f64>) -> Result<f64, MetricError> {
    let n1 = q1.norm();
    let n2 = q2.norm();
    if n1 < 1e-9 || n2 < 1e-9 {
        return Err(MetricError::ZeroNorm);
    }
    let dot = (q1.coords / n1).dot(&(q2.coords / n2));
    Ok(dot.abs().clamp(0.0, 1.0).acos())
}

/// Mean of [`quat_error`] over paired samples.
pub fn mean_quat_error(
    ground_truth: &[Quaternion<f64>],
    commanded: &[Quaternion<f64>],
) -> Result<f64, MetricError> {
    if ground_truth.len() != commanded.len() {
        return Err(MetricError::LengthMismatch(
            ground_truth.len(),
            commanded.len(),
        ));
    }
    if ground_truth.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sum = 0.0;
    for (a, b) in ground_truth.iter().zip(commanded) {
        sum += quat_error(a, b)?;
    }
    Ok(sum / ground_truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn default_geom() -> PlatformGeometry {
        PlatformGeometry::from_config(&GeometryConfig::default()).unwrap()
    }

    /// The l_h = 0.02 m / l_a = 0.08 m anchor set used in documented examples.
    fn small_geom() -> PlatformGeometry {
        PlatformGeometry::from_config(&GeometryConfig {
            horn_length_m: 0.02,
            arm_length_m: 0.08,
            base_radius_m: 0.05,
            platform_radius_m: 0.04,
            ..GeometryConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn euler_composition_is_z_then_y_then_x_intrinsic() {
        let (yaw, pitch, roll) = (0.3, -0.2, 0.7);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), pitch);
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), roll);
        let expected = rz * ry * rx;
        let got = PlatformPose::new(Vector3::zeros(), yaw, pitch, roll).rotation();
        assert_relative_eq!(got.matrix(), expected.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn pose_rotation_is_orthonormal() {
        let rot = PlatformPose::new(Vector3::zeros(), 1.1, -0.8, 2.4).rotation();
        let m = rot.matrix();
        assert_relative_eq!(
            (m * m.transpose()),
            nalgebra::Matrix3::identity(),
            epsilon = 1e-9
        );
        assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn anchors_have_threefold_symmetry() {
        let geom = default_geom();
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 2.0 * FRAC_PI_3);
        for i in 0..6 {
            let j = (i + 2) % 6;
            assert_relative_eq!(
                rot * geom.base_anchors()[i],
                geom.base_anchors()[j],
                epsilon = 1e-12
            );
            assert_relative_eq!(
                rot * geom.platform_anchors()[i],
                geom.platform_anchors()[j],
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn neutral_pose_gives_six_equal_angles() {
        let geom = default_geom();
        let angles = stewart_ik(&geom, &geom.home_pose()).unwrap();
        for a in angles.0 {
            assert_relative_eq!(a, angles.0[0], epsilon = 1e-12);
        }
        // Home is defined by level horns.
        assert_relative_eq!(angles.0[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn raising_plate_rotates_all_horns_up_equally() {
        let geom = default_geom();
        let neutral = stewart_ik(&geom, &geom.home_pose()).unwrap();
        let mut raised_pose = geom.home_pose();
        raised_pose.translation.z += 0.005;
        let raised = stewart_ik(&geom, &raised_pose).unwrap();
        for i in 0..6 {
            assert_relative_eq!(raised.0[i], raised.0[0], epsilon = 1e-12);
            assert!(raised.0[i] > neutral.0[i]);
        }
    }

    #[test]
    fn documented_pose_matches_independent_computation() {
        // Cross-checked against a separate implementation of the same
        // anchor layout (NumPy prototype).
        let geom = small_geom();
        let pose = PlatformPose::new(Vector3::new(0.0, 0.0, 0.075), 0.0, 0.1, 0.1);
        let angles = stewart_ik(&geom, &pose).unwrap();
        let expected = [
            -0.169790023319,
            -0.030303956114,
            0.074469542396,
            -0.025269548275,
            -0.426739208024,
            -0.461430371460,
        ];
        for i in 0..6 {
            assert_relative_eq!(angles.0[i], expected[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn documented_pose_round_trips_through_fk_oracle() {
        let geom = small_geom();
        let pose = PlatformPose::new(Vector3::new(0.0, 0.0, 0.075), 0.0, 0.1, 0.1);
        let angles = stewart_ik(&geom, &pose).unwrap();
        let back = forward_kinematics(&geom, &angles, &geom.home_pose()).unwrap();
        assert_relative_eq!(back.translation, pose.translation, epsilon = 1e-6);
        assert_relative_eq!(back.yaw, pose.yaw, epsilon = 1e-6);
        assert_relative_eq!(back.pitch, pose.pitch, epsilon = 1e-6);
        assert_relative_eq!(back.roll, pose.roll, epsilon = 1e-6);
    }

    #[test]
    fn fk_of_neutral_angles_is_a_fixed_point() {
        let geom = default_geom();
        let angles = stewart_ik(&geom, &geom.home_pose()).unwrap();
        let pose = forward_kinematics(&geom, &angles, &geom.home_pose()).unwrap();
        assert_relative_eq!(
            pose.translation,
            geom.home_pose().translation,
            epsilon = 1e-6
        );
        assert!(pose.yaw.abs() < 1e-6 && pose.pitch.abs() < 1e-6 && pose.roll.abs() < 1e-6);
    }

    #[test]
    fn ik_fk_round_trip_over_sampled_workspace() {
        let geom = default_geom();
        let home = geom.home_height();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let opts = FkOptions {
            residual_tolerance: 1e-12,
            ..FkOptions::default()
        };
        for _ in 0..200 {
            let pose = PlatformPose::new(
                Vector3::new(0.0, 0.0, home + rng.random_range(-0.02..0.02)),
                0.0,
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            );
            let angles = stewart_ik(&geom, &pose).unwrap();
            assert!(geom.within_limits(&angles));

            // Closure residual: reconstructed ball joints sit one arm length
            // from the plate anchors.
            let rot = pose.rotation();
            for i in 0..6 {
                let q = pose.translation + rot * geom.platform_anchors()[i].coords;
                let closure = (q - geom.horn_end(i, angles.0[i]).coords).norm();
                assert!((closure - geom.arm_length()).abs() <= 1e-9);
            }

            let guess = PlatformPose::new(
                pose.translation + Vector3::new(0.001, -0.001, 0.0015),
                pose.yaw + 0.02,
                pose.pitch - 0.03,
                pose.roll + 0.03,
            );
            let back = forward_kinematics_with(&geom, &angles, &guess, &opts).unwrap();
            assert_relative_eq!(back.translation, pose.translation, epsilon = 1e-6);
            assert_relative_eq!(back.yaw, pose.yaw, epsilon = 1e-6);
            assert_relative_eq!(back.pitch, pose.pitch, epsilon = 1e-6);
            assert_relative_eq!(back.roll, pose.roll, epsilon = 1e-6);
        }
    }

    #[test]
    fn rotating_pose_by_120_degrees_permutes_legs() {
        let geom = default_geom();
        let pose = PlatformPose::new(
            Vector3::new(0.002, -0.001, geom.home_height() + 0.008),
            0.1,
            0.15,
            -0.12,
        );
        let angles = stewart_ik(&geom, &pose).unwrap();

        // Rotating the whole configuration maps leg i onto leg i+2; the
        // plate orientation conjugates (its material frame is relabeled).
        let rot120 = Rotation3::from_axis_angle(&Vector3::z_axis(), 2.0 * FRAC_PI_3);
        let rotated = PlatformPose::from_parts(
            rot120 * pose.translation,
            &(rot120 * pose.rotation() * rot120.inverse()),
        );
        let rotated_angles = stewart_ik(&geom, &rotated).unwrap();
        for i in 0..6 {
            assert_relative_eq!(rotated_angles.0[(i + 2) % 6], angles.0[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn far_pose_reports_offending_leg() {
        let geom = default_geom();
        let mut pose = geom.home_pose();
        pose.translation.z += 0.1;
        match stewart_ik(&geom, &pose) {
            Err(KinematicsError::Unreachable { leg_index }) => assert!(leg_index < 6),
            other => panic!("expected Unreachable, got {other:?}"),
        }
    }

    #[test]
    fn fk_rejects_angles_pushed_past_workspace() {
        let geom = default_geom();
        let edge = PlatformPose::new(
            Vector3::new(0.0, 0.0, geom.home_height() + 0.019),
            0.0,
            0.39,
            0.39,
        );
        let mut angles = stewart_ik(&geom, &edge).unwrap();
        angles.0[0] += 0.3;
        let result = forward_kinematics(&geom, &angles, &geom.home_pose());
        assert!(matches!(
            result,
            Err(KinematicsError::NoConvergence { .. })
        ));
    }

    #[test]
    fn geometry_validation_rejects_bad_dimensions() {
        let cfg = GeometryConfig {
            horn_length_m: -0.01,
            ..GeometryConfig::default()
        };
        assert!(matches!(
            PlatformGeometry::from_config(&cfg),
            Err(GeometryError::NonPositiveHorn(_))
        ));

        let cfg = GeometryConfig {
            arm_length_m: GeometryConfig::default().horn_length_m,
            ..GeometryConfig::default()
        };
        assert!(matches!(
            PlatformGeometry::from_config(&cfg),
            Err(GeometryError::ArmNotLongerThanHorn { .. })
        ));

        let cfg = GeometryConfig {
            arm_length_m: 0.05,
            horn_length_m: 0.045,
            base_radius_m: 0.2,
            ..GeometryConfig::default()
        };
        assert!(matches!(
            PlatformGeometry::from_config(&cfg),
            Err(GeometryError::Unrealizable(_))
        ));
    }

    #[test]
    fn geometry_config_json_round_trip() {
        let cfg = GeometryConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(text.contains("horn_length_m"));
        let back: GeometryConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        // beta_rad may be omitted entirely.
        let sparse: GeometryConfig = serde_json::from_str(
            r#"{"horn_length_m":0.045,"arm_length_m":0.09,"base_radius_m":0.05,
                "platform_radius_m":0.03,"theta_b_rad":0.5,"theta_p_rad":0.5}"#,
        )
        .unwrap();
        assert_eq!(sparse.joint_limits_rad, FRAC_PI_2);
        assert!(sparse.beta_rad.is_none());
    }

    #[test]
    fn rmse_identical_lists_is_zero() {
        let pts = vec![Point3::new(0.1, 0.2, 0.3), Point3::new(-1.0, 0.0, 2.0)];
        assert_eq!(pose_rmse(&pts, &pts).unwrap(), 0.0);
    }

    #[test]
    fn rmse_of_3_4_offset_is_5() {
        let a = vec![Point3::new(0.0, 0.0, 0.0)];
        let b = vec![Point3::new(0.003, 0.004, 0.0)];
        assert_relative_eq!(pose_rmse(&a, &b).unwrap(), 0.005, epsilon = 1e-15);
    }

    #[test]
    fn rmse_averages_squared_errors() {
        // errors 1 mm and 7 mm -> sqrt((1 + 49)/2) = 5 mm
        let a = vec![Point3::origin(), Point3::origin()];
        let b = vec![Point3::new(0.001, 0.0, 0.0), Point3::new(0.0, 0.007, 0.0)];
        assert_relative_eq!(pose_rmse(&a, &b).unwrap(), 0.005, epsilon = 1e-15);
    }

    #[test]
    fn rmse_error_cases() {
        let one = vec![Point3::origin()];
        assert_eq!(
            pose_rmse(&one, &[]),
            Err(MetricError::LengthMismatch(1, 0))
        );
        assert_eq!(pose_rmse(&[], &[]), Err(MetricError::EmptyInput));
    }

    #[test]
    fn rmse_invariant_under_common_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<_> = (0..8)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let b: Vec<_> = (0..8)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let c = Vector3::new(0.7, -1.3, 0.4);
        let a_off: Vec<_> = a.iter().map(|p| p + c).collect();
        let b_off: Vec<_> = b.iter().map(|p| p + c).collect();
        assert_relative_eq!(
            pose_rmse(&a, &b).unwrap(),
            pose_rmse(&a_off, &b_off).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn quat_error_basics() {
        let q = Quaternion::new(1.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(quat_error(&q, &q).unwrap(), 0.0);
        let neg = Quaternion::new(-1.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(quat_error(&q, &neg).unwrap(), 0.0);

        // 90° about z: (cos 45°, 0, 0, sin 45°), dot with identity = cos 45°.
        let half = std::f64::consts::FRAC_PI_4;
        let qz = Quaternion::new(half.cos(), 0.0, 0.0, half.sin());
        assert_relative_eq!(quat_error(&q, &qz).unwrap(), half, epsilon = 1e-12);
    }

    #[test]
    fn quat_error_symmetric_and_rejects_zero() {
        let q1 = Quaternion::new(0.3, -0.2, 0.5, 0.4);
        let q2 = Quaternion::new(-0.1, 0.9, 0.2, 0.05);
        assert_relative_eq!(
            quat_error(&q1, &q2).unwrap(),
            quat_error(&q2, &q1).unwrap()
        );
        let zero = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(quat_error(&q1, &zero), Err(MetricError::ZeroNorm));
    }

    #[test]
    fn mean_quat_error_aggregates() {
        let q = Quaternion::new(1.0, 0.0, 0.0, 0.0);
        let half = std::f64::consts::FRAC_PI_4;
        let qz = Quaternion::new(half.cos(), 0.0, 0.0, half.sin());
        let mean = mean_quat_error(&[q, q], &[q, qz]).unwrap();
        assert_relative_eq!(mean, half / 2.0, epsilon = 1e-12);
    }
}
