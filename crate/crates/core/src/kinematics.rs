//! Forward kinematics, image Jacobian and incremental joint-step solver for the
//! 4-DoF arm with the vertical-wrist constraint.
//!
//! Only three joints are controlled. The fourth is slaved so that the wrist
//! axis stays vertical: `gamma3 = wrist_sum - gamma1 - gamma2`. Positions are
//! expressed in the arm base frame (origin at the first joint, x forward,
//! z up).

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Condition number above which the plain inverse is not trusted.
pub const CONDITION_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid arm geometry: {0}")]
    InvalidGeometry(String),
    #[error("joint {joint} = {value:.6} rad outside limits [{lower:.6}, {upper:.6}]")]
    JointLimit {
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("step fraction must satisfy 0 < lambda <= 1, got {0}")]
    InvalidLambda(f64),
    #[error("singular Jacobian at {q} (condition number {condition:.3e})")]
    Singular { q: JointConfig, condition: f64 },
    #[error("inverse position did not converge to {target:?} (residual {residual:.3e} m)")]
    NoConvergence {
        target: CartesianPoint,
        residual: f64,
    },
}

/// Link lengths and design offsets of the arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmGeometry {
    /// Link 1 length, joint 1 to joint 2 (m).
    pub r1: f64,
    /// Link 2 length, joint 2 to joint 3 (m).
    pub r2: f64,
    /// Design offset angle of link 1 (rad).
    pub alpha_j: f64,
    /// Target value of `gamma1 + gamma2 + gamma3` keeping the wrist vertical.
    /// Nominally pi/2; trimmed slightly to absorb mount flex.
    pub wrist_sum: f64,
}

impl Default for ArmGeometry {
    fn default() -> Self {
        Self {
            r1: 0.13,
            r2: 0.124,
            alpha_j: 0.186,
            wrist_sum: FRAC_PI_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointConfig {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl JointConfig {
    pub const fn new(gamma0: f64, gamma1: f64, gamma2: f64) -> Self {
        Self {
            gamma0,
            gamma1,
            gamma2,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.gamma0, self.gamma1, self.gamma2]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Slaved wrist angle, never stored.
    pub fn gamma3(&self, geometry: &ArmGeometry) -> f64 {
        geometry.wrist_sum - self.gamma1 - self.gamma2
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for JointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(γ0={:.6}, γ1={:.6}, γ2={:.6})",
            self.gamma0, self.gamma1, self.gamma2
        )
    }
}

/// Joint increments `(δγ0, δγ1, δγ2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointDelta {
    pub d_gamma0: f64,
    pub d_gamma1: f64,
    pub d_gamma2: f64,
}

impl JointDelta {
    pub const ZERO: JointDelta = JointDelta {
        d_gamma0: 0.0,
        d_gamma1: 0.0,
        d_gamma2: 0.0,
    };

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            d_gamma0: a[0],
            d_gamma1: a[1],
            d_gamma2: a[2],
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.d_gamma0, self.d_gamma1, self.d_gamma2]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.as_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Mul<f64> for JointDelta {
    type Output = JointDelta;
    fn mul(self, k: f64) -> JointDelta {
        JointDelta::from_array(self.as_array().map(|v| v * k))
    }
}

impl Add<JointDelta> for JointConfig {
    type Output = JointConfig;
    fn add(self, d: JointDelta) -> JointConfig {
        JointConfig::new(
            self.gamma0 + d.d_gamma0,
            self.gamma1 + d.d_gamma1,
            self.gamma2 + d.d_gamma2,
        )
    }
}

impl Sub for JointConfig {
    type Output = JointDelta;
    fn sub(self, o: JointConfig) -> JointDelta {
        JointDelta::from_array([
            self.gamma0 - o.gamma0,
            self.gamma1 - o.gamma1,
            self.gamma2 - o.gamma2,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CartesianPoint {
    pub const ORIGIN: CartesianPoint = CartesianPoint {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn planar_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl Add for CartesianPoint {
    type Output = CartesianPoint;
    fn add(self, o: CartesianPoint) -> CartesianPoint {
        CartesianPoint::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for CartesianPoint {
    type Output = CartesianPoint;
    fn sub(self, o: CartesianPoint) -> CartesianPoint {
        CartesianPoint::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CylindricalPoint {
    pub r: f64,
    pub theta: f64,
    pub h: f64,
}

impl CylindricalPoint {
    pub fn to_cartesian(self) -> CartesianPoint {
        CartesianPoint::new(self.r * self.theta.cos(), self.r * self.theta.sin(), self.h)
    }
}

impl ArmGeometry {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.r1 > 0.0 && self.r1.is_finite()) {
            return Err(KinematicsError::InvalidGeometry(format!(
                "r1 must be positive, got {}",
                self.r1
            )));
        }
        if !(self.r2 > 0.0 && self.r2.is_finite()) {
            return Err(KinematicsError::InvalidGeometry(format!(
                "r2 must be positive, got {}",
                self.r2
            )));
        }
        if !self.alpha_j.is_finite() {
            return Err(KinematicsError::InvalidGeometry(
                "alpha_j not finite".into(),
            ));
        }
        if !((FRAC_PI_2 - 0.1)..=(FRAC_PI_2 + 0.1)).contains(&self.wrist_sum) {
            return Err(KinematicsError::InvalidGeometry(format!(
                "wrist_sum {} outside [pi/2 - 0.1, pi/2 + 0.1]",
                self.wrist_sum
            )));
        }
        Ok(())
    }

    /// `(r, θ, h)` of the last joint. No limit checks.
    pub fn cylindrical(&self, q: &JointConfig) -> CylindricalPoint {
        let delta = q.gamma1 + self.alpha_j;
        let beta = -q.gamma1 - q.gamma2;
        CylindricalPoint {
            r: self.r1 * delta.sin() + self.r2 * beta.cos(),
            theta: q.gamma0,
            h: self.r1 * delta.cos() + self.r2 * beta.sin(),
        }
    }

    /// Cartesian position of the last joint. No limit checks.
    pub fn cartesian(&self, q: &JointConfig) -> CartesianPoint {
        let delta = q.gamma1 + self.alpha_j;
        let beta = -q.gamma1 - q.gamma2;
        let radial = self.r1 * delta.sin() + self.r2 * beta.cos();
        CartesianPoint::new(
            radial * q.gamma0.cos(),
            radial * q.gamma0.sin(),
            self.r1 * delta.cos() + self.r2 * beta.sin(),
        )
    }

    /// Analytic `∂(x, y, z) / ∂(γ0, γ1, γ2)`.
    ///
    /// The bottom row carries `cos β` terms: that is what differentiating the
    /// height `r1 cos δ + r2 sin β` gives, and it is what finite differences of
    /// [`ArmGeometry::cartesian`] agree with.
    pub fn jacobian(&self, q: &JointConfig) -> Matrix3<f64> {
        let delta = q.gamma1 + self.alpha_j;
        let beta = -q.gamma1 - q.gamma2;
        let (s0, c0) = q.gamma0.sin_cos();
        let (sb, cb) = beta.sin_cos();
        let phi1 = self.r1 * delta.sin();
        let phi2 = self.r2;
        let phi3 = self.r1 * delta.cos();

        let radial = phi1 + phi2 * cb;
        let d_radial_1 = phi3 + phi2 * sb;
        let d_radial_2 = phi2 * sb;

        Matrix3::new(
            -radial * s0,
            d_radial_1 * c0,
            d_radial_2 * c0,
            radial * c0,
            d_radial_1 * s0,
            d_radial_2 * s0,
            0.0,
            -phi1 - phi2 * cb,
            -phi2 * cb,
        )
    }
}

/// Per-joint box limits on `(γ0, γ1, γ2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl JointLimits {
    pub fn around(center: JointConfig, half_width: f64) -> Self {
        let c = center.as_array();
        Self {
            lower: c.map(|v| v - half_width),
            upper: c.map(|v| v + half_width),
        }
    }

    pub fn check(&self, q: &JointConfig) -> Result<(), KinematicsError> {
        for (joint, value) in q.as_array().into_iter().enumerate() {
            let (lower, upper) = (self.lower[joint], self.upper[joint]);
            if !(lower..=upper).contains(&value) {
                return Err(KinematicsError::JointLimit {
                    joint,
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, q: &JointConfig) -> bool {
        self.check(q).is_ok()
    }

    /// Clamp into limits. The flag reports whether any joint was clipped.
    pub fn clamp(&self, q: &JointConfig) -> (JointConfig, bool) {
        let mut hit = false;
        let a = q.as_array();
        let mut out = [0.0; 3];
        for j in 0..3 {
            out[j] = a[j].clamp(self.lower[j], self.upper[j]);
            hit |= out[j] != a[j];
        }
        (JointConfig::from_array(out), hit)
    }
}

/// What to do when the Jacobian is ill-conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SingularityPolicy {
    #[default]
    Damped,
    Reject,
}

/// Geometry plus joint limits; the checked entry point for all kinematics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub geometry: ArmGeometry,
    pub limits: JointLimits,
}

impl Arm {
    pub fn new(geometry: ArmGeometry, limits: JointLimits) -> Result<Self, KinematicsError> {
        geometry.validate()?;
        for j in 0..3 {
            if !(limits.lower[j] < limits.upper[j]) {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "joint {j} limits are empty"
                )));
            }
        }
        Ok(Self { geometry, limits })
    }

    pub fn forward_cylindrical(
        &self,
        q: &JointConfig,
    ) -> Result<CylindricalPoint, KinematicsError> {
        self.limits.check(q)?;
        Ok(self.geometry.cylindrical(q))
    }

    pub fn forward_cartesian(&self, q: &JointConfig) -> Result<CartesianPoint, KinematicsError> {
        self.limits.check(q)?;
        Ok(self.geometry.cartesian(q))
    }

    pub fn image_jacobian(&self, q: &JointConfig) -> Result<Matrix3<f64>, KinematicsError> {
        self.limits.check(q)?;
        Ok(self.geometry.jacobian(q))
    }

    /// Joint increments moving the last joint by `lambda * delta_pos`.
    ///
    /// Uses the exact inverse while `cond(J) < CONDITION_LIMIT`, damped least
    /// squares with `mu = 1e-4 * trace(JᵀJ) / 3` above it, or fails when the
    /// policy forbids damping.
    pub fn solve_increment(
        &self,
        q: &JointConfig,
        delta_pos: CartesianPoint,
        lambda: f64,
        policy: SingularityPolicy,
    ) -> Result<JointDelta, KinematicsError> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(KinematicsError::InvalidLambda(lambda));
        }
        let j = self.image_jacobian(q)?;
        let full = solve_full_step(&j, &delta_pos.to_vector(), policy)
            .map_err(|condition| KinematicsError::Singular { q: *q, condition })?;
        Ok(JointDelta::from_array([full.x, full.y, full.z]) * lambda)
    }

    /// Newton iteration on the position kinematics, starting from `seed`.
    pub fn inverse_position(
        &self,
        target: CartesianPoint,
        seed: JointConfig,
    ) -> Result<JointConfig, KinematicsError> {
        let mut q = seed;
        let mut residual = f64::INFINITY;
        for _ in 0..100 {
            let err = target - self.geometry.cartesian(&q);
            residual = err.norm();
            if residual < 1e-12 {
                break;
            }
            let j = self.geometry.jacobian(&q);
            let step = solve_full_step(&j, &err.to_vector(), SingularityPolicy::Damped)
                .unwrap_or_else(|_| Vector3::zeros());
            // keep Newton steps modest so the iterate stays on the same branch
            let scale = (0.2 / step.amax()).min(1.0);
            q = q + JointDelta::from_array([step.x, step.y, step.z]) * scale;
        }
        if residual > 1e-9 || !self.limits.contains(&q) {
            return Err(KinematicsError::NoConvergence { target, residual });
        }
        Ok(q)
    }
}

/// 2-norm condition number of a 3×3 matrix via its singular values.
pub fn condition_number(j: &Matrix3<f64>) -> f64 {
    let sv = j.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `J⁻¹ δ` or its damped least-squares surrogate. `Err` carries the
/// condition number when damping is not allowed.
fn solve_full_step(
    j: &Matrix3<f64>,
    delta: &Vector3<f64>,
    policy: SingularityPolicy,
) -> Result<Vector3<f64>, f64> {
    let cond = condition_number(j);
    if cond < CONDITION_LIMIT {
        if let Some(x) = j.lu().solve(delta) {
            return Ok(x);
        }
    }
    match policy {
        SingularityPolicy::Reject => Err(cond),
        SingularityPolicy::Damped => {
            let jtj = j.transpose() * j;
            let mu = 1e-4 * jtj.trace() / 3.0;
            let damped = j * j.transpose() + Matrix3::identity() * mu;
            let y = damped.lu().solve(delta).unwrap_or_else(Vector3::zeros);
            Ok(j.transpose() * y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn unit_arm() -> Arm {
        Arm::new(
            ArmGeometry {
                r1: 1.0,
                r2: 1.0,
                alpha_j: 0.0,
                wrist_sum: FRAC_PI_2,
            },
            JointLimits::around(JointConfig::default(), PI),
        )
        .unwrap()
    }

    #[test]
    fn zero_pose_of_unit_arm() {
        let arm = unit_arm();
        let c = arm.forward_cylindrical(&JointConfig::default()).unwrap();
        assert_abs_diff_eq!(c.r, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.theta, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.h, 1.0, epsilon = 1e-15);
        let p = arm.forward_cartesian(&JointConfig::default()).unwrap();
        assert_abs_diff_eq!(p.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.z, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn base_rotation_only_changes_theta() {
        let arm = unit_arm();
        let c = arm
            .forward_cylindrical(&JointConfig::new(FRAC_PI_2, 0.0, 0.0))
            .unwrap();
        assert_abs_diff_eq!(c.r, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.theta, FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(c.h, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_base_angle_gives_zero_y() {
        let arm = Arm::new(
            ArmGeometry::default(),
            JointLimits::around(JointConfig::default(), 1.5),
        )
        .unwrap();
        for g1 in [-0.7, 0.1, 0.9] {
            for g2 in [-1.0, 0.0, 0.4] {
                let p = arm
                    .forward_cartesian(&JointConfig::new(0.0, g1, g2))
                    .unwrap();
                assert_eq!(p.y, 0.0);
            }
        }
    }

    #[test]
    fn unit_arm_jacobian_at_zero() {
        let j = unit_arm().image_jacobian(&JointConfig::default()).unwrap();
        // row 1: [-(φ1+φ2cβ)s0, (φ3+φ2sβ)c0, φ2 sβ c0] with φ1=0, φ3=1, β=0
        assert_abs_diff_eq!(j[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(0, 1)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(0, 2)], 0.0, epsilon = 1e-15);
        assert_eq!(j[(2, 0)], 0.0);
        // β = 0: ∂z/∂γ2 = -φ2 cos β = -1
        assert_abs_diff_eq!(j[(2, 2)], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn limits_reject_and_clamp() {
        let arm = Arm::new(
            ArmGeometry::default(),
            JointLimits::around(JointConfig::default(), 0.5),
        )
        .unwrap();
        let q = JointConfig::new(0.0, 0.6, 0.0);
        assert!(matches!(
            arm.forward_cartesian(&q),
            Err(KinematicsError::JointLimit { joint: 1, .. })
        ));
        let (c, hit) = arm.limits.clamp(&q);
        assert!(hit);
        assert_eq!(c.gamma1, 0.5);
    }

    #[test]
    fn geometry_validation() {
        let mut g = ArmGeometry::default();
        assert!(g.validate().is_ok());
        g.wrist_sum = FRAC_PI_2 + 0.2;
        assert!(g.validate().is_err());
        g = ArmGeometry {
            r1: 0.0,
            ..ArmGeometry::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn zero_displacement_gives_zero_step() {
        let arm = Arm::new(
            ArmGeometry::default(),
            JointLimits::around(JointConfig::new(0.0, 0.9, -0.1), 1.5),
        )
        .unwrap();
        let d = arm
            .solve_increment(
                &JointConfig::new(0.0, 0.9, -0.1),
                CartesianPoint::ORIGIN,
                0.2,
                SingularityPolicy::Reject,
            )
            .unwrap();
        assert_eq!(d, JointDelta::ZERO);
    }

    #[test]
    fn lambda_bounds() {
        let arm = unit_arm();
        let q = JointConfig::new(0.1, 0.3, 0.2);
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                arm.solve_increment(
                    &q,
                    CartesianPoint::new(0.01, 0.0, 0.0),
                    bad,
                    SingularityPolicy::Damped
                ),
                Err(KinematicsError::InvalidLambda(_))
            ));
        }
    }

    #[test]
    fn singular_configuration() {
        // r1 = r2 and link 2 folded back onto link 1: radial reach is zero,
        // so the base rotation column vanishes.
        let arm = unit_arm();
        // δ = γ1, β = -γ1-γ2; radial = sin γ1 + cos(γ1+γ2) = 0 at γ1=0, γ2=π/2
        let q = JointConfig::new(0.0, 0.0, FRAC_PI_2);
        let j = arm.image_jacobian(&q).unwrap();
        assert!(condition_number(&j) > CONDITION_LIMIT);
        let err = arm
            .solve_increment(
                &q,
                CartesianPoint::new(0.0, 0.01, 0.0),
                1.0,
                SingularityPolicy::Reject,
            )
            .unwrap_err();
        match err {
            KinematicsError::Singular { q: at, .. } => assert_eq!(at, q),
            other => panic!("unexpected {other:?}"),
        }
        let damped = arm
            .solve_increment(
                &q,
                CartesianPoint::new(0.0, 0.01, 0.0),
                1.0,
                SingularityPolicy::Damped,
            )
            .unwrap();
        assert!(damped.is_finite());
    }

    #[test]
    fn inverse_position_round_trip() {
        let arm = Arm::new(
            ArmGeometry::default(),
            JointLimits::around(JointConfig::new(0.0, 0.9, -0.1), FRAC_PI_2),
        )
        .unwrap();
        let target = CartesianPoint::new(0.18, 0.05, -0.02);
        let q = arm
            .inverse_position(target, JointConfig::new(0.0, 0.9, -0.1))
            .unwrap();
        let p = arm.forward_cartesian(&q).unwrap();
        assert!((p - target).norm() < 1e-10);
    }
}
