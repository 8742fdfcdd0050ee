//! Eye-in-hand pinhole projection and the pixel-to-displacement scaling used
//! by the servo loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::CartesianPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point at depth {0} m is not in front of the camera")]
    BehindCamera(f64),
    #[error("invalid camera parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn delta_to(&self, other: &PixelCoord) -> PixelCoord {
        PixelCoord::new(other.u - self.u, other.v - self.v)
    }

    pub fn norm(&self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Projection parameter (pixels per unit of `x_c / z_c`).
    pub omega: f64,
    pub principal_point: PixelCoord,
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
}

impl CameraIntrinsics {
    /// Intrinsics whose horizontal field of view spans the image width.
    pub fn from_fov(width: u32, height: u32, fov_deg: f64) -> Self {
        let omega = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self {
            omega,
            principal_point: PixelCoord::new(width as f64 / 2.0, height as f64 / 2.0),
            width,
            height,
            fov_deg,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(CameraError::Invalid(format!(
                "omega must be > 0, got {}",
                self.omega
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Invalid("empty image size".into()));
        }
        if !self.contains(&self.principal_point) {
            return Err(CameraError::Invalid("principal point outside image".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &PixelCoord) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }

    /// Pinhole projection of a point given in the camera frame.
    pub fn project(&self, p_cam: CartesianPoint) -> Result<PixelCoord, CameraError> {
        if !(p_cam.z > 0.0) {
            return Err(CameraError::BehindCamera(p_cam.z));
        }
        let k = self.omega / p_cam.z;
        Ok(PixelCoord::new(
            k * p_cam.x + self.principal_point.u,
            k * p_cam.y + self.principal_point.v,
        ))
    }

    /// Scale calibration for a camera held `nominal_zc` above the ground.
    pub fn calibration_at(&self, nominal_zc: f64, hand_eye_yaw: f64) -> ScaleCalibration {
        ScaleCalibration {
            meters_per_pixel: nominal_zc / self.omega,
            nominal_zc,
            hand_eye_yaw,
        }
    }
}

/// Fixed `z_c / ω` scaling and the image-to-rover rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleCalibration {
    pub meters_per_pixel: f64,
    pub nominal_zc: f64,
    /// Rotation from image axes to rover axes (rad). Zero maps `u` to `x`
    /// and `v` to `y`.
    pub hand_eye_yaw: f64,
}

impl ScaleCalibration {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.meters_per_pixel > 0.0 && self.meters_per_pixel.is_finite()) {
            return Err(CameraError::Invalid(format!(
                "meters_per_pixel must be > 0, got {}",
                self.meters_per_pixel
            )));
        }
        if !(self.nominal_zc > 0.0) {
            return Err(CameraError::Invalid("nominal_zc must be > 0".into()));
        }
        Ok(())
    }

    /// Same calibration with the camera yawed by an extra `yaw` (e.g. the
    /// current base joint angle).
    pub fn yawed(&self, yaw: f64) -> ScaleCalibration {
        ScaleCalibration {
            hand_eye_yaw: self.hand_eye_yaw + yaw,
            ..*self
        }
    }

    /// Planar rover-frame displacement `(δx, δy)` for a pixel error.
    pub fn pixel_to_displacement(&self, pixel_error: PixelCoord) -> (f64, f64) {
        let du = pixel_error.u * self.meters_per_pixel;
        let dv = pixel_error.v * self.meters_per_pixel;
        let (s, c) = self.hand_eye_yaw.sin_cos();
        (c * du - s * dv, s * du + c * dv)
    }
}
