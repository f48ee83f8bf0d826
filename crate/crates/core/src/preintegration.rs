//! IMU preintegration between keyframes.
//!
//! Raw gyroscope/accelerometer samples between two keyframes are compounded
//! into a relative rotation, velocity and position increment that does not
//! depend on the global state. First-order Jacobians with respect to the
//! biases allow cheap correction after a bias update, and the 9×9 covariance
//! (ordering `[δφ, δv, δp]`) is propagated with the same recursion.
//!
//! Measurements are held constant over each interval (zero-order hold), so a
//! preintegration reproduces the discrete kinematic model
//!
//! ```text
//! R⁺ = R · Exp((ω − b_g) Δt)
//! v⁺ = v + g Δt + R (a − b_a) Δt
//! p⁺ = p + v Δt + ½ g Δt² + ½ R (a − b_a) Δt²
//! ```
//!
//! to rounding error.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::manifold::{hat, right_jacobian_so3, Rotation};
use crate::state::{ImuBias, NavState};

pub type Matrix9 = SMatrix<f64, 9, 9>;

/// One gyroscope + accelerometer sample in the body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuMeasurement {
    /// Seconds, relative to the stream origin.
    pub timestamp: f64,
    /// rad/s
    pub omega: Vector3<f64>,
    /// m/s², specific force (includes the reaction to gravity)
    pub accel: Vector3<f64>,
}

impl ImuMeasurement {
    pub fn new(timestamp: f64, omega: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self {
            timestamp,
            omega,
            accel,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite()
            && self.omega.iter().all(|x| x.is_finite())
            && self.accel.iter().all(|x| x.is_finite())
    }
}

/// Continuous-time noise densities of the IMU and the gravity magnitude.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ImuNoiseModel {
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    /// m/s²/√Hz
    pub accel_noise_density: f64,
    /// rad/s²/√Hz
    pub gyro_walk: f64,
    /// m/s³/√Hz
    pub accel_walk: f64,
    /// m/s²
    pub gravity_magnitude: f64,
}

impl ImuNoiseModel {
    pub fn new(
        gyro_noise_density: f64,
        accel_noise_density: f64,
        gyro_walk: f64,
        accel_walk: f64,
        gravity_magnitude: f64,
    ) -> Result<Self> {
        let model = Self {
            gyro_noise_density,
            accel_noise_density,
            gyro_walk,
            accel_walk,
            gravity_magnitude,
        };
        model.validate()?;
        Ok(model)
    }

    /// Densities of the ADIS16448 used on the EuRoC MAV.
    pub fn euroc() -> Self {
        Self {
            gyro_noise_density: 1.6968e-4,
            accel_noise_density: 2.0e-3,
            gyro_walk: 1.9393e-5,
            accel_walk: 3.0e-3,
            gravity_magnitude: 9.81,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gyro_noise_density", self.gyro_noise_density),
            ("accel_noise_density", self.accel_noise_density),
            ("gyro_walk", self.gyro_walk),
            ("accel_walk", self.accel_walk),
            ("gravity_magnitude", self.gravity_magnitude),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Preintegrated relative motion between two keyframes.
#[derive(Clone, Debug, PartialEq)]
pub struct PreintegratedImu {
    pub delta_r: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
    pub jac_r_bg: Matrix3<f64>,
    pub jac_v_bg: Matrix3<f64>,
    pub jac_v_ba: Matrix3<f64>,
    pub jac_p_bg: Matrix3<f64>,
    pub jac_p_ba: Matrix3<f64>,
    /// Ordering `[δφ, δv, δp]`.
    pub covariance: Matrix9,
    pub dt_total: f64,
    /// Bias subtracted from the raw samples while integrating.
    pub bias_lin: ImuBias,
}

impl PreintegratedImu {
    pub fn new(bias_lin: ImuBias) -> Self {
        Self {
            delta_r: Rotation::identity(),
            delta_v: Vector3::zeros(),
            delta_p: Vector3::zeros(),
            jac_r_bg: Matrix3::zeros(),
            jac_v_bg: Matrix3::zeros(),
            jac_v_ba: Matrix3::zeros(),
            jac_p_bg: Matrix3::zeros(),
            jac_p_ba: Matrix3::zeros(),
            covariance: Matrix9::zeros(),
            dt_total: 0.0,
            bias_lin,
        }
    }

    /// Adds one sample held constant for `dt` seconds and returns the new value.
    pub fn integrate_measurement(
        &self,
        m: &ImuMeasurement,
        dt: f64,
        noise: &ImuNoiseModel,
    ) -> Result<PreintegratedImu> {
        let mut next = self.clone();
        next.integrate_in_place(m, dt, noise)?;
        Ok(next)
    }

    pub(crate) fn integrate_in_place(&mut self, m: &ImuMeasurement, dt: f64, noise: &ImuNoiseModel) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("integration step must be positive, got {dt}")));
        }
        if !m.is_finite() {
            return Err(Error::invalid("non-finite IMU measurement"));
        }

        let w = m.omega - self.bias_lin.gyro;
        let a = m.accel - self.bias_lin.accel;
        let dt2 = dt * dt;
        let dr = *self.delta_r.matrix();
        let a_hat = hat(&a);
        let dr_a_hat = dr * a_hat;

        let step = Rotation::exp(&(w * dt));
        let jr = right_jacobian_so3(&(w * dt));

        // Error-state transition A and noise maps, from the pre-update values.
        let mut trans = Matrix9::identity();
        trans.fixed_view_mut::<3, 3>(0, 0).copy_from(&step.matrix().transpose());
        trans.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-dr_a_hat * dt));
        trans.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * dr_a_hat * dt2));
        trans
            .fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(Matrix3::identity() * dt));
        let mut gyro_map = SMatrix::<f64, 9, 3>::zeros();
        gyro_map.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        let mut accel_map = SMatrix::<f64, 9, 3>::zeros();
        accel_map.fixed_view_mut::<3, 3>(3, 0).copy_from(&(dr * dt));
        accel_map.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * dr * dt2));
        let gyro_var = noise.gyro_noise_density.powi(2) / dt;
        let accel_var = noise.accel_noise_density.powi(2) / dt;
        let cov = trans * self.covariance * trans.transpose()
            + gyro_map * gyro_map.transpose() * gyro_var
            + accel_map * accel_map.transpose() * accel_var;
        self.covariance = 0.5 * (cov + cov.transpose());

        // Bias Jacobians: position first, then velocity, then rotation.
        self.jac_p_ba += self.jac_v_ba * dt - 0.5 * dr * dt2;
        self.jac_p_bg += self.jac_v_bg * dt - 0.5 * dr_a_hat * self.jac_r_bg * dt2;
        self.jac_v_ba -= dr * dt;
        self.jac_v_bg -= dr_a_hat * self.jac_r_bg * dt;
        self.jac_r_bg = step.matrix().transpose() * self.jac_r_bg - jr * dt;

        self.delta_p += self.delta_v * dt + 0.5 * dr * a * dt2;
        self.delta_v += dr * a * dt;
        self.delta_r = (self.delta_r * step).renormalized();
        self.dt_total += dt;
        Ok(())
    }

    /// Preintegrates the samples of `stream` covering `[t_start, t_end)`.
    ///
    /// Sample `k` is held over `[t_k, t_{k+1})`; the last sample is held until
    /// `t_end`. Partial overlaps at either end are integrated with the clipped step.
    pub fn from_stream(
        stream: &[ImuMeasurement],
        t_start: f64,
        t_end: f64,
        bias_lin: ImuBias,
        noise: &ImuNoiseModel,
    ) -> Result<PreintegratedImu> {
        if !(t_end > t_start) {
            return Err(Error::invalid(format!(
                "empty preintegration span [{t_start}, {t_end})"
            )));
        }
        let mut pre = PreintegratedImu::new(bias_lin);
        // first sample whose hold interval reaches past t_start
        let first = stream.partition_point(|m| m.timestamp <= t_start).saturating_sub(1);
        for (k, m) in stream.iter().enumerate().skip(first) {
            if m.timestamp >= t_end {
                break;
            }
            let next_t = stream.get(k + 1).map_or(t_end, |n| n.timestamp);
            let lo = m.timestamp.max(t_start);
            let hi = next_t.min(t_end);
            // skip slivers from timestamp rounding
            if hi - lo > 1e-12 {
                pre.integrate_in_place(m, hi - lo, noise)?;
            }
        }
        if (pre.dt_total - (t_end - t_start)).abs() > 1e-6 {
            return Err(Error::InsufficientData(format!(
                "IMU stream covers {:.6} s of the requested {:.6} s span",
                pre.dt_total,
                t_end - t_start
            )));
        }
        Ok(pre)
    }

    /// Deltas corrected to first order for a new bias, without re-integration.
    pub fn correct_bias_first_order(&self, new_bias: &ImuBias) -> (Rotation, Vector3<f64>, Vector3<f64>) {
        let db = *new_bias - self.bias_lin;
        let r = self.delta_r * Rotation::exp(&(self.jac_r_bg * db.gyro));
        let v = self.delta_v + self.jac_v_bg * db.gyro + self.jac_v_ba * db.accel;
        let p = self.delta_p + self.jac_p_bg * db.gyro + self.jac_p_ba * db.accel;
        (r, v, p)
    }

    /// Copy whose deltas are corrected to `new_bias`, which also becomes the
    /// new linearization bias. Jacobians and covariance are kept.
    pub fn rebased(&self, new_bias: &ImuBias) -> PreintegratedImu {
        let (r, v, p) = self.correct_bias_first_order(new_bias);
        PreintegratedImu {
            delta_r: r,
            delta_v: v,
            delta_p: p,
            bias_lin: *new_bias,
            ..self.clone()
        }
    }

    /// Covariance of the bias random walk accumulated over the span,
    /// ordering `[b_g, b_a]`.
    pub fn bias_walk_covariance(&self, noise: &ImuNoiseModel) -> Matrix6<f64> {
        let mut c = Matrix6::zeros();
        for i in 0..3 {
            c[(i, i)] = noise.gyro_walk.powi(2) * self.dt_total;
            c[(i + 3, i + 3)] = noise.accel_walk.powi(2) * self.dt_total;
        }
        c
    }
}

/// Propagates a keyframe state across a preintegrated span.
///
/// The bias of `state_i` is carried over and its offset from the
/// preintegration's linearization bias is applied through the Jacobians.
pub fn predict(state_i: &NavState, pre: &PreintegratedImu, gravity: &Vector3<f64>) -> NavState {
    let (dr, dv, dp) = pre.correct_bias_first_order(&state_i.bias);
    let dt = pre.dt_total;
    let r = state_i.rotation.matrix();
    NavState {
        rotation: (state_i.rotation * dr).renormalized(),
        velocity: state_i.velocity + gravity * dt + r * dv,
        position: state_i.position + state_i.velocity * dt + 0.5 * gravity * dt * dt + r * dp,
        bias: state_i.bias,
        timestamp: state_i.timestamp + dt,
    }
}
