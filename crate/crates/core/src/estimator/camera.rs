//! Pinhole projection and visual measurement types.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Depths at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Undistorted pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PinholeCamera {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn new(fu: f64, fv: f64, cu: f64, cv: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self {
            fu,
            fv,
            cu,
            cv,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Left camera of the EuRoC MAV, after undistortion.
    pub fn euroc() -> Self {
        Self {
            fu: 458.654,
            fv: 457.296,
            cu: 367.215,
            cv: 248.375,
            width: 752,
            height: 480,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fu > 0.0 && self.fv > 0.0 && self.cu.is_finite() && self.cv.is_finite()) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        Ok(())
    }

    /// `[fu X/Z + cu, fv Y/Z + cv]`.
    pub fn project(&self, xc: &Vector3<f64>) -> Result<Vector2<f64>> {
        if xc.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { depth: xc.z });
        }
        Ok(self.project_unchecked(xc))
    }

    #[inline]
    pub(crate) fn project_unchecked(&self, xc: &Vector3<f64>) -> Vector2<f64> {
        let iz = 1.0 / xc.z;
        Vector2::new(self.fu * xc.x * iz + self.cu, self.fv * xc.y * iz + self.cv)
    }

    /// ∂π/∂X_C.
    pub fn projection_jacobian(&self, xc: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / xc.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fu * iz,
            0.0,
            -self.fu * xc.x * iz2,
            0.0,
            self.fv * iz,
            -self.fv * xc.y * iz2,
        )
    }

    pub fn in_image(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0 && uv.y >= 0.0 && uv.x < self.width as f64 && uv.y < self.height as f64
    }

    /// Normalized bearing of a pixel.
    pub fn unproject(&self, uv: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((uv.x - self.cu) / self.fu, (uv.y - self.cv) / self.fv, 1.0)
    }
}

/// A map point in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmark {
    pub id: usize,
    pub position: Vector3<f64>,
}

/// A keypoint matched to a landmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub landmark_id: usize,
    /// pixels
    pub keypoint: Vector2<f64>,
    /// pixel⁻²
    pub info: Matrix2<f64>,
}

impl Observation {
    /// Observation with isotropic pixel noise `sigma`.
    pub fn new(landmark_id: usize, keypoint: Vector2<f64>, sigma: f64) -> Self {
        Self {
            landmark_id,
            keypoint,
            info: Matrix2::identity() / (sigma * sigma),
        }
    }
}
