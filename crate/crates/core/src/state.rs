//! Navigation state shared by preintegration, initialization and the estimator.

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::manifold::{RigidPose, Rotation};

/// Gyroscope and accelerometer biases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImuBias {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuBias {
    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { gyro, accel }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.gyro.iter().chain(self.accel.iter()).all(|x| x.is_finite())
    }
}

impl std::ops::Sub for ImuBias {
    type Output = ImuBias;
    fn sub(self, rhs: ImuBias) -> ImuBias {
        ImuBias::new(self.gyro - rhs.gyro, self.accel - rhs.accel)
    }
}

/// Tangent-space dimension of [`NavState`].
pub const NAV_DIM: usize = 15;

/// Offsets of each block inside the 15-dim error state `[δφ, δv, δp, δb_g, δb_a]`.
pub mod idx {
    pub const ROT: usize = 0;
    pub const VEL: usize = 3;
    pub const POS: usize = 6;
    pub const BG: usize = 9;
    pub const BA: usize = 12;
}

pub type NavVector = SVector<f64, NAV_DIM>;

/// Body state in the world frame: the 15-DoF estimation target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavState {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub bias: ImuBias,
    pub timestamp: f64,
}

impl Default for NavState {
    fn default() -> Self {
        Self {
            rotation: Rotation::identity(),
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            bias: ImuBias::zero(),
            timestamp: 0.0,
        }
    }
}

impl NavState {
    pub fn pose(&self) -> RigidPose {
        RigidPose::new(self.rotation, self.position)
    }

    /// Applies a tangent update: rotation on the right, everything else additively.
    pub fn retract(&self, delta: &NavVector) -> NavState {
        let d = |o: usize| Vector3::new(delta[o], delta[o + 1], delta[o + 2]);
        NavState {
            rotation: (self.rotation * Rotation::exp(&d(idx::ROT))).renormalized(),
            velocity: self.velocity + d(idx::VEL),
            position: self.position + d(idx::POS),
            bias: ImuBias::new(self.bias.gyro + d(idx::BG), self.bias.accel + d(idx::BA)),
            timestamp: self.timestamp,
        }
    }

    /// Tangent difference `other ⊖ self`, inverse of [`NavState::retract`].
    pub fn local(&self, other: &NavState) -> NavVector {
        let mut out = NavVector::zeros();
        let dphi = (self.rotation.transpose() * other.rotation).log();
        out.fixed_rows_mut::<3>(idx::ROT).copy_from(&dphi);
        out.fixed_rows_mut::<3>(idx::VEL)
            .copy_from(&(other.velocity - self.velocity));
        out.fixed_rows_mut::<3>(idx::POS)
            .copy_from(&(other.position - self.position));
        out.fixed_rows_mut::<3>(idx::BG)
            .copy_from(&(other.bias.gyro - self.bias.gyro));
        out.fixed_rows_mut::<3>(idx::BA)
            .copy_from(&(other.bias.accel - self.bias.accel));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.matrix().iter().all(|x| x.is_finite())
            && self.position.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.bias.is_finite()
    }
}

/// Timestamped body pose, the unit of trajectory files and evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedPose {
    /// seconds
    pub timestamp: f64,
    pub pose: RigidPose,
}

impl StampedPose {
    pub fn new(timestamp: f64, pose: RigidPose) -> Self {
        Self { timestamp, pose }
    }
}

impl From<&NavState> for StampedPose {
    fn from(s: &NavState) -> Self {
        Self::new(s.timestamp, s.pose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retract_local_inverse() {
        let s = NavState {
            rotation: Rotation::exp(&Vector3::new(0.2, -0.4, 1.0)),
            position: Vector3::new(1.0, 2.0, 3.0),
            velocity: Vector3::new(0.1, 0.0, -0.3),
            bias: ImuBias::new(Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.0, 0.1, 0.0)),
            timestamp: 0.5,
        };
        let d = NavVector::from_fn(|i, _| 0.01 * (i as f64 - 7.0));
        let back = s.local(&s.retract(&d));
        assert!((back - d).norm() < 1e-12);
    }
}
