//! Analytic trajectory models.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Rotation;

/// Position and its first two time derivatives in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// Shape of the position track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Hover {
        position: Vector3<f64>,
    },
    /// Horizontal circle with an optional vertical oscillation.
    Circle {
        center: Vector3<f64>,
        radius: f64,
        /// rad/s
        rate: f64,
        vertical_amplitude: f64,
        /// rad/s
        vertical_rate: f64,
    },
    /// `center + amplitude ∘ sin(frequency ∘ t + phase)`, frequencies in rad/s.
    Lissajous {
        center: Vector3<f64>,
        amplitude: Vector3<f64>,
        frequency: Vector3<f64>,
        phase: Vector3<f64>,
    },
    /// Closed C² cubic spline through `waypoints`, traversed once per `period`.
    WaypointSpline {
        waypoints: Vec<Vector3<f64>>,
        period: f64,
    },
    /// Straight line at constant velocity. Leaves scale and gravity unobservable.
    ConstantVelocity {
        start: Vector3<f64>,
        velocity: Vector3<f64>,
    },
}

/// Sinusoidal roll/pitch/yaw oscillation about a base attitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    /// `[roll, pitch, yaw]`, rad
    pub amplitude: Vector3<f64>,
    /// rad/s
    pub frequency: Vector3<f64>,
    pub phase: Vector3<f64>,
}

impl Oscillation {
    fn angles(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.amplitude[i] * (self.frequency[i] * t + self.phase[i]).sin())
    }
}

/// Body attitude as a function of time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttitudeProfile {
    Fixed {
        yaw: f64,
        pitch: f64,
        roll: f64,
    },
    /// Body x axis along the horizontal velocity, with an optional oscillation
    /// superimposed. Requires the horizontal speed to stay above
    /// [`MIN_YAW_FOLLOW_SPEED`].
    YawFollow {
        oscillation: Option<Oscillation>,
    },
    Oscillating {
        /// `[roll, pitch, yaw]` base angles, rad
        base: Vector3<f64>,
        /// steady yaw rotation added to the base, rad/s
        #[serde(default)]
        yaw_rate: f64,
        oscillation: Oscillation,
    },
}

/// Slowest horizontal speed for which a velocity-aligned yaw is accepted, m/s.
pub const MIN_YAW_FOLLOW_SPEED: f64 = 0.05;

/// A trajectory: position track, attitude profile and duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryModel {
    pub trajectory: TrajectoryKind,
    pub attitude: AttitudeProfile,
    /// seconds
    pub duration: f64,
}

impl TrajectoryModel {
    pub fn new(trajectory: TrajectoryKind, attitude: AttitudeProfile, duration: f64) -> Self {
        Self {
            trajectory,
            attitude,
            duration,
        }
    }

    /// Stationary body with identity attitude.
    pub fn hover(position: Vector3<f64>, duration: f64) -> Self {
        Self::new(
            TrajectoryKind::Hover { position },
            AttitudeProfile::Fixed {
                yaw: 0.0,
                pitch: 0.0,
                roll: 0.0,
            },
            duration,
        )
    }

    /// Horizontal circle flown with the camera looking along the direction of travel.
    pub fn circle(radius: f64, rate: f64, duration: f64) -> Self {
        Self::new(
            TrajectoryKind::Circle {
                center: Vector3::new(0.0, 0.0, 1.5),
                radius,
                rate,
                vertical_amplitude: 0.0,
                vertical_rate: 0.0,
            },
            AttitudeProfile::YawFollow { oscillation: None },
            duration,
        )
    }

    /// MAV-like exploration: a 3D Lissajous figure with oscillating attitude.
    /// Excites every axis of both sensors.
    pub fn excited(duration: f64) -> Self {
        Self::new(
            TrajectoryKind::Lissajous {
                center: Vector3::new(0.0, 0.0, 1.5),
                amplitude: Vector3::new(2.0, 1.5, 0.5),
                frequency: Vector3::new(0.6, 0.9, 0.7),
                phase: Vector3::new(0.0, PI / 2.0, PI / 3.0),
            },
            AttitudeProfile::Oscillating {
                base: Vector3::zeros(),
                yaw_rate: 0.5,
                oscillation: Oscillation {
                    amplitude: Vector3::new(0.25, 0.25, 0.6),
                    frequency: Vector3::new(1.1, 0.8, 0.5),
                    phase: Vector3::new(0.0, PI / 4.0, PI / 2.0),
                },
            },
            duration,
        )
    }

    /// Constant velocity with fixed attitude.
    pub fn constant_velocity(velocity: Vector3<f64>, duration: f64) -> Self {
        Self::new(
            TrajectoryKind::ConstantVelocity {
                start: Vector3::new(0.0, 0.0, 1.5),
                velocity,
            },
            AttitudeProfile::Fixed {
                yaw: 0.0,
                pitch: 0.0,
                roll: 0.0,
            },
            duration,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidModel(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        match &self.trajectory {
            TrajectoryKind::Circle { radius, rate, .. } if !(*radius > 0.0 && rate.is_finite()) => {
                Err(Error::InvalidModel("circle needs a positive radius".into()))
            }
            TrajectoryKind::WaypointSpline { waypoints, period } => {
                if waypoints.len() < 3 {
                    return Err(Error::InvalidModel("spline needs at least 3 waypoints".into()));
                }
                if !(*period > 0.0) {
                    return Err(Error::InvalidModel("spline period must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Prepares the model for repeated evaluation.
    pub fn sampler(&self) -> Result<TrajectorySampler> {
        self.validate()?;
        let spline = match &self.trajectory {
            TrajectoryKind::WaypointSpline { waypoints, period } => Some(PeriodicSpline::new(waypoints, *period)?),
            _ => None,
        };
        Ok(TrajectorySampler {
            model: self.clone(),
            spline,
        })
    }
}

/// Evaluates a [`TrajectoryModel`] at arbitrary times.
#[derive(Clone, Debug)]
pub struct TrajectorySampler {
    model: TrajectoryModel,
    spline: Option<PeriodicSpline>,
}

impl TrajectorySampler {
    pub fn model(&self) -> &TrajectoryModel {
        &self.model
    }

    pub fn kinematics(&self, t: f64) -> Kinematics {
        match &self.model.trajectory {
            TrajectoryKind::Hover { position } => Kinematics {
                position: *position,
                velocity: Vector3::zeros(),
                acceleration: Vector3::zeros(),
            },
            TrajectoryKind::Circle {
                center,
                radius,
                rate,
                vertical_amplitude,
                vertical_rate,
            } => {
                let (s, c) = (rate * t).sin_cos();
                let (sz, cz) = (vertical_rate * t).sin_cos();
                Kinematics {
                    position: center + Vector3::new(radius * c, radius * s, vertical_amplitude * sz),
                    velocity: Vector3::new(
                        -radius * rate * s,
                        radius * rate * c,
                        vertical_amplitude * vertical_rate * cz,
                    ),
                    acceleration: Vector3::new(
                        -radius * rate * rate * c,
                        -radius * rate * rate * s,
                        -vertical_amplitude * vertical_rate * vertical_rate * sz,
                    ),
                }
            }
            TrajectoryKind::Lissajous {
                center,
                amplitude,
                frequency,
                phase,
            } => {
                let arg = |i: usize| frequency[i] * t + phase[i];
                Kinematics {
                    position: center + Vector3::from_fn(|i, _| amplitude[i] * arg(i).sin()),
                    velocity: Vector3::from_fn(|i, _| amplitude[i] * frequency[i] * arg(i).cos()),
                    acceleration: Vector3::from_fn(|i, _| -amplitude[i] * frequency[i] * frequency[i] * arg(i).sin()),
                }
            }
            TrajectoryKind::WaypointSpline { .. } => {
                self.spline.as_ref().expect("spline prepared by sampler()").eval(t)
            }
            TrajectoryKind::ConstantVelocity { start, velocity } => Kinematics {
                position: start + velocity * t,
                velocity: *velocity,
                acceleration: Vector3::zeros(),
            },
        }
    }

    /// World-from-body rotation at `t`.
    pub fn rotation(&self, t: f64, kin: &Kinematics) -> Result<Rotation> {
        let euler = |a: Vector3<f64>| Rotation::from_euler_zyx(a.z, a.y, a.x);
        match &self.model.attitude {
            AttitudeProfile::Fixed { yaw, pitch, roll } => Ok(Rotation::from_euler_zyx(*yaw, *pitch, *roll)),
            AttitudeProfile::YawFollow { oscillation } => {
                let vh = kin.velocity.xy();
                if vh.norm() < MIN_YAW_FOLLOW_SPEED {
                    return Err(Error::InvalidModel(format!(
                        "yaw-follow attitude undefined at t={t:.3} s (horizontal speed {:.3} m/s)",
                        vh.norm()
                    )));
                }
                let yaw = vh.y.atan2(vh.x);
                let osc = oscillation.map_or(Vector3::zeros(), |o| o.angles(t));
                Ok(euler(osc + Vector3::new(0.0, 0.0, yaw)))
            }
            AttitudeProfile::Oscillating {
                base,
                yaw_rate,
                oscillation,
            } => Ok(euler(
                base + oscillation.angles(t) + Vector3::new(0.0, 0.0, yaw_rate * t),
            )),
        }
    }
}

/// Closed interpolating cubic spline with uniform knot spacing.
#[derive(Clone, Debug)]
struct PeriodicSpline {
    points: Vec<Vector3<f64>>,
    /// second derivatives at the knots
    moments: Vec<Vector3<f64>>,
    h: f64,
    period: f64,
}

impl PeriodicSpline {
    fn new(points: &[Vector3<f64>], period: f64) -> Result<Self> {
        let n = points.len();
        let h = period / n as f64;
        // M_{i-1} + 4 M_i + M_{i+1} = 6 (P_{i+1} − 2 P_i + P_{i−1}) / h², cyclic
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] += 4.0;
            a[(i, (i + n - 1) % n)] += 1.0;
            a[(i, (i + 1) % n)] += 1.0;
        }
        let lu = a.lu();
        let mut moments = vec![Vector3::zeros(); n];
        for axis in 0..3 {
            let rhs = DVector::from_fn(n, |i, _| {
                6.0 * (points[(i + 1) % n][axis] - 2.0 * points[i][axis] + points[(i + n - 1) % n][axis]) / (h * h)
            });
            let m = lu
                .solve(&rhs)
                .ok_or_else(|| Error::InvalidModel("singular spline system".into()))?;
            for i in 0..n {
                moments[i][axis] = m[i];
            }
        }
        Ok(Self {
            points: points.to_vec(),
            moments,
            h,
            period,
        })
    }

    fn eval(&self, t: f64) -> Kinematics {
        let n = self.points.len();
        let tau = t.rem_euclid(self.period);
        let i = ((tau / self.h).floor() as usize).min(n - 1);
        let j = (i + 1) % n;
        let h = self.h;
        let a = (i as f64 + 1.0) * h - tau;
        let b = tau - i as f64 * h;
        let (p0, p1, m0, m1) = (self.points[i], self.points[j], self.moments[i], self.moments[j]);
        let position = m0 * a.powi(3) / (6.0 * h)
            + m1 * b.powi(3) / (6.0 * h)
            + (p0 / h - m0 * h / 6.0) * a
            + (p1 / h - m1 * h / 6.0) * b;
        let velocity =
            -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (p0 / h - m0 * h / 6.0) + (p1 / h - m1 * h / 6.0);
        let acceleration = m0 * a / h + m1 * b / h;
        Kinematics {
            position,
            velocity,
            acceleration,
        }
    }
}
