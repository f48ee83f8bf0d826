//! Deterministic ground truth and sensor streams.
//!
//! IMU samples are synthesized so that zero-order-hold integration of the
//! noise-free stream reproduces the ground-truth states exactly at every sample:
//! the gyro sample is the constant rate carrying `R_k` to `R_{k+1}`, the
//! accelerometer sample the constant specific force carrying `v_k` to `v_{k+1}`,
//! and ground-truth positions are the matching trapezoidal integral of the
//! analytic velocity.

mod replay;
mod trajectory;

pub use replay::{replay, SensorEvent};
pub use trajectory::{
    AttitudeProfile, Kinematics, Oscillation, TrajectoryKind, TrajectoryModel, TrajectorySampler, MIN_YAW_FOLLOW_SPEED,
};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::camera::{Landmark, Observation, PinholeCamera};
use crate::initializer::KeyframeVisualPose;
use crate::manifold::{RigidPose, Rotation};
use crate::preintegration::{ImuMeasurement, ImuNoiseModel};
use crate::state::{ImuBias, NavState};

/// Specific force above this multiple of gravity is rejected.
pub const MAX_SPECIFIC_FORCE_G: f64 = 4.0;

/// Near and far limits of the visible depth range, m.
pub const DEPTH_RANGE: (f64, f64) = (0.3, 30.0);

/// Landmarks are drawn uniformly between two boxes grown around the trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkConfig {
    pub count: usize,
    /// m
    pub inner_margin: f64,
    /// m
    pub outer_margin: f64,
}

/// Criteria for emitting loop-closure matches between revisiting frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopOracleConfig {
    /// s
    pub min_time_gap: f64,
    /// m, between camera centers
    pub max_distance: f64,
    /// rad, between camera orientations
    pub max_angle: f64,
    pub min_shared: usize,
}

/// Missing fields take their [`Default`] values when deserialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Hz
    pub imu_rate: f64,
    /// Hz
    pub cam_rate: f64,
    pub noise: ImuNoiseModel,
    /// add white sensor noise with the densities of `noise`
    pub imu_noise: bool,
    /// initial bias
    pub bias: ImuBias,
    /// let the bias drift with the walk densities of `noise`
    pub bias_random_walk: bool,
    pub landmarks: LandmarkConfig,
    pub camera: PinholeCamera,
    /// camera-from-body transform
    pub t_cb: RigidPose,
    /// px, per axis; Gaussian truncated at 3σ
    pub pixel_noise: f64,
    /// monocular units per meter
    pub visual_scale: f64,
    /// rad, isotropic, applied to the visual camera poses
    pub visual_rotation_noise: f64,
    /// m (before scaling), isotropic
    pub visual_position_noise: f64,
    /// express visual poses relative to the first camera, as a monocular map would
    pub anchor_visual_to_first_camera: bool,
    pub loop_oracle: LoopOracleConfig,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            imu_rate: 200.0,
            cam_rate: 20.0,
            noise: ImuNoiseModel::euroc(),
            imu_noise: true,
            bias: ImuBias::new(Vector3::new(0.02, -0.01, 0.03), Vector3::new(0.05, 0.1, -0.05)),
            bias_random_walk: true,
            landmarks: LandmarkConfig {
                count: 1500,
                inner_margin: 2.0,
                outer_margin: 5.0,
            },
            camera: PinholeCamera::euroc(),
            t_cb: default_t_cb(),
            pixel_noise: 1.0,
            visual_scale: 2.3,
            visual_rotation_noise: 0.0,
            visual_position_noise: 0.0,
            anchor_visual_to_first_camera: false,
            loop_oracle: LoopOracleConfig {
                min_time_gap: 10.0,
                max_distance: 0.5,
                max_angle: 0.35,
                min_shared: 20,
            },
            seed: 0,
        }
    }
}

/// Forward-looking camera 5 cm ahead of the body origin: camera z is body x,
/// camera x is body −y, camera y is body −z.
pub fn default_t_cb() -> RigidPose {
    let r_cb = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let p_bc = Vector3::new(0.05, 0.0, 0.0);
    RigidPose::new(Rotation::from_matrix_unchecked(r_cb), -(r_cb * p_bc))
}

impl SimConfig {
    /// Noise-free, bias-free configuration for oracle tests.
    pub fn noise_free() -> Self {
        Self {
            imu_noise: false,
            bias: ImuBias::zero(),
            bias_random_walk: false,
            pixel_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.noise.gravity_magnitude)
    }

    /// IMU samples per camera frame.
    pub fn imu_per_frame(&self) -> Result<usize> {
        let ratio = self.imu_rate / self.cam_rate;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return Err(Error::invalid(format!(
                "imu_rate {} is not a multiple of cam_rate {}",
                self.imu_rate, self.cam_rate
            )));
        }
        Ok(ratio.round() as usize)
    }

    /// IMU sample period in whole nanoseconds.
    pub fn imu_period_ns(&self) -> Result<u64> {
        let ns = 1e9 / self.imu_rate;
        if !(ns >= 1.0 && (ns - ns.round()).abs() < 1e-6) {
            return Err(Error::invalid(format!(
                "imu_rate {} Hz has no whole-nanosecond period",
                self.imu_rate
            )));
        }
        Ok(ns.round() as u64)
    }

    pub fn validate(&self) -> Result<()> {
        self.imu_per_frame()?;
        self.imu_period_ns()?;
        self.noise.validate()?;
        self.camera.validate()?;
        if !(self.visual_scale.is_finite() && self.visual_scale > 0.0) {
            return Err(Error::invalid("visual_scale must be positive"));
        }
        let nonneg = [
            ("pixel_noise", self.pixel_noise),
            ("visual_rotation_noise", self.visual_rotation_noise),
            ("visual_position_noise", self.visual_position_noise),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        let l = &self.landmarks;
        if !(l.inner_margin >= 0.0 && l.outer_margin > l.inner_margin) {
            return Err(Error::invalid("landmark shell needs 0 <= inner_margin < outer_margin"));
        }
        if !self.bias.is_finite() {
            return Err(Error::invalid("injected bias must be finite"));
        }
        Ok(())
    }
}

/// Observations of one camera frame. Landmark ids are the ground-truth ids.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFrame {
    pub id: usize,
    pub timestamp: f64,
    /// sorted by landmark id
    pub observations: Vec<Observation>,
}

/// A revisit: `query` sees `landmarks` that `matched` saw earlier.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopOracleEdge {
    pub query: usize,
    pub matched: usize,
    pub landmarks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// One state per IMU sample plus the state at the end of the last sample.
    pub states: Vec<NavState>,
    pub landmarks: Vec<Landmark>,
    pub gravity: Vector3<f64>,
    /// Similarity taking metric world coordinates to visual ones:
    /// `x_vis = visual_from_world · x / visual_scale`.
    pub visual_from_world: RigidPose,
}

impl GroundTruth {
    /// Ground-truth state at the instant of IMU sample `k`.
    pub fn state(&self, k: usize) -> &NavState {
        &self.states[k]
    }
}

#[derive(Clone, Debug)]
pub struct SimulatedDataset {
    pub config: SimConfig,
    pub model: TrajectoryModel,
    pub ground_truth: GroundTruth,
    pub imu: Vec<ImuMeasurement>,
    /// raw timestamp of each IMU sample, ns
    pub imu_ns: Vec<u64>,
    pub frames: Vec<CameraFrame>,
    /// ground-truth index of each frame's state
    pub frame_state_index: Vec<usize>,
    /// one noisy up-to-scale camera pose per frame
    pub visual_poses: Vec<KeyframeVisualPose>,
    pub loop_edges: Vec<LoopOracleEdge>,
}

impl SimulatedDataset {
    pub fn frame_state(&self, frame: usize) -> &NavState {
        &self.ground_truth.states[self.frame_state_index[frame]]
    }
}

/// Runs the simulator.
pub fn generate(model: &TrajectoryModel, cfg: &SimConfig) -> Result<SimulatedDataset> {
    cfg.validate()?;
    let sampler = model.sampler()?;
    let period_ns = cfg.imu_period_ns()?;
    let per_frame = cfg.imu_per_frame()?;
    let n = (model.duration * cfg.imu_rate).round() as usize;
    if n == 0 {
        return Err(Error::InvalidModel("duration shorter than one IMU period".into()));
    }
    let gravity = cfg.gravity();
    let f_max = MAX_SPECIFIC_FORCE_G * cfg.noise.gravity_magnitude;

    let stamp = |k: usize| (k as u64 * period_ns) as f64 / 1e9;
    let mut rotations = Vec::with_capacity(n + 1);
    let mut velocities = Vec::with_capacity(n + 1);
    let mut start = None;
    for k in 0..=n {
        let t = stamp(k);
        let kin = sampler.kinematics(t);
        let f = (kin.acceleration - gravity).norm();
        if f >= f_max {
            return Err(Error::InvalidModel(format!(
                "specific force {f:.2} m/s² at t={t:.3} s exceeds {MAX_SPECIFIC_FORCE_G} g"
            )));
        }
        rotations.push(sampler.rotation(t, &kin)?);
        velocities.push(kin.velocity);
        start.get_or_insert(kin.position);
    }

    let mut imu_rng = stream_rng(cfg.seed, 0);
    let mut walk_rng = stream_rng(cfg.seed, 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut imu = Vec::with_capacity(n);
    let mut imu_ns = Vec::with_capacity(n);
    let mut position = start.unwrap_or_default();
    let mut bias = cfg.bias;
    for k in 0..=n {
        let t = stamp(k);
        states.push(NavState {
            rotation: rotations[k],
            position,
            velocity: velocities[k],
            bias,
            timestamp: t,
        });
        if k == n {
            break;
        }
        let dt = stamp(k + 1) - t;
        let rel = rotations[k].transpose() * rotations[k + 1];
        let mut omega = rel.log() / dt + bias.gyro;
        let mut accel = rotations[k].transpose() * ((velocities[k + 1] - velocities[k]) / dt - gravity) + bias.accel;
        if cfg.imu_noise {
            omega += gaussian3(&mut imu_rng) * (cfg.noise.gyro_noise_density / dt.sqrt());
            accel += gaussian3(&mut imu_rng) * (cfg.noise.accel_noise_density / dt.sqrt());
        }
        imu.push(ImuMeasurement::new(t, omega, accel));
        imu_ns.push(k as u64 * period_ns);

        position += 0.5 * (velocities[k] + velocities[k + 1]) * dt;
        if cfg.bias_random_walk {
            bias.gyro += gaussian3(&mut walk_rng) * (cfg.noise.gyro_walk * dt.sqrt());
            bias.accel += gaussian3(&mut walk_rng) * (cfg.noise.accel_walk * dt.sqrt());
        }
    }

    let landmarks = sample_landmarks(&states, &cfg.landmarks, &mut stream_rng(cfg.seed, 2));

    let t_bc = cfg.t_cb.inverse();
    let camera_pose = |s: &NavState| s.pose() * t_bc;
    let frame_state_index: Vec<usize> = (0..n).step_by(per_frame).collect();
    let mut pix_rng = stream_rng(cfg.seed, 3);
    let frames: Vec<CameraFrame> = frame_state_index
        .iter()
        .enumerate()
        .map(|(id, &k)| {
            let observations = observe(
                &camera_pose(&states[k]),
                &landmarks,
                &cfg.camera,
                cfg.pixel_noise,
                &mut pix_rng,
            );
            CameraFrame {
                id,
                timestamp: states[k].timestamp,
                observations,
            }
        })
        .collect();

    let first_cam = camera_pose(&states[0]);
    let visual_from_world = if cfg.anchor_visual_to_first_camera {
        first_cam.inverse()
    } else {
        RigidPose::identity()
    };
    let mut vis_rng = stream_rng(cfg.seed, 4);
    let visual_poses = frame_state_index
        .iter()
        .enumerate()
        .map(|(id, &k)| {
            let mut pose = camera_pose(&states[k]);
            pose.rotation = pose.rotation * Rotation::exp(&(gaussian3(&mut vis_rng) * cfg.visual_rotation_noise));
            pose.translation += gaussian3(&mut vis_rng) * cfg.visual_position_noise;
            let pose = visual_from_world * pose;
            KeyframeVisualPose {
                id,
                timestamp: states[k].timestamp,
                rotation: pose.rotation,
                position: pose.translation / cfg.visual_scale,
            }
        })
        .collect();

    let cam_poses: Vec<RigidPose> = frame_state_index.iter().map(|&k| camera_pose(&states[k])).collect();
    let loop_edges = loop_oracle(&frames, &cam_poses, &cfg.loop_oracle);

    Ok(SimulatedDataset {
        config: cfg.clone(),
        model: model.clone(),
        ground_truth: GroundTruth {
            states,
            landmarks,
            gravity,
            visual_from_world,
        },
        imu,
        imu_ns,
        frames,
        frame_state_index,
        visual_poses,
        loop_edges,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian3(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.sample(StandardNormal))
}

fn truncated_gaussian(rng: &mut impl Rng) -> f64 {
    loop {
        let x: f64 = rng.sample(StandardNormal);
        if x.abs() <= 3.0 {
            return x;
        }
    }
}

fn sample_landmarks(states: &[NavState], cfg: &LandmarkConfig, rng: &mut impl Rng) -> Vec<Landmark> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for s in states {
        lo = lo.inf(&s.position);
        hi = hi.sup(&s.position);
    }
    let (inner_lo, inner_hi) = (lo.add_scalar(-cfg.inner_margin), hi.add_scalar(cfg.inner_margin));
    let (outer_lo, outer_hi) = (lo.add_scalar(-cfg.outer_margin), hi.add_scalar(cfg.outer_margin));
    let inside = |x: &Vector3<f64>| (0..3).all(|i| x[i] > inner_lo[i] && x[i] < inner_hi[i]);
    let mut out = Vec::with_capacity(cfg.count);
    while out.len() < cfg.count {
        let x = Vector3::from_fn(|i, _| rng.random_range(outer_lo[i]..outer_hi[i]));
        if !inside(&x) {
            out.push(Landmark {
                id: out.len(),
                position: x,
            });
        }
    }
    out
}

/// Projects every landmark into a camera with pose `t_wc`, keeping those in
/// the image and inside [`DEPTH_RANGE`].
fn observe(
    t_wc: &RigidPose,
    landmarks: &[Landmark],
    camera: &PinholeCamera,
    sigma: f64,
    rng: &mut impl Rng,
) -> Vec<Observation> {
    let t_cw = t_wc.inverse();
    let info_sigma = if sigma > 0.0 { sigma } else { 1.0 };
    landmarks
        .iter()
        .filter_map(|lm| {
            let xc = t_cw.transform_point(&lm.position);
            if xc.z < DEPTH_RANGE.0 || xc.z > DEPTH_RANGE.1 {
                return None;
            }
            let uv = camera.project(&xc).ok()?;
            if !camera.in_image(&uv) {
                return None;
            }
            let noise = Vector2::new(truncated_gaussian(rng), truncated_gaussian(rng)) * sigma;
            Some(Observation::new(lm.id, uv + noise, info_sigma))
        })
        .collect()
}

fn shared_landmarks(a: &[Observation], b: &[Observation]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let (x, y) = (a[i].landmark_id, b[j].landmark_id);
        match x.cmp(&y) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(x);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn loop_oracle(frames: &[CameraFrame], cam_poses: &[RigidPose], cfg: &LoopOracleConfig) -> Vec<LoopOracleEdge> {
    let mut edges = Vec::new();
    for q in 0..frames.len() {
        let mut best: Option<LoopOracleEdge> = None;
        for m in 0..q {
            if frames[q].timestamp - frames[m].timestamp < cfg.min_time_gap {
                break;
            }
            let (pq, pm) = (&cam_poses[q], &cam_poses[m]);
            if (pq.translation - pm.translation).norm() > cfg.max_distance {
                continue;
            }
            if (pm.rotation.transpose() * pq.rotation).log().norm() > cfg.max_angle {
                continue;
            }
            let shared = shared_landmarks(&frames[q].observations, &frames[m].observations);
            if shared.len() >= cfg.min_shared && best.as_ref().is_none_or(|b| shared.len() > b.landmarks.len()) {
                best = Some(LoopOracleEdge {
                    query: q,
                    matched: m,
                    landmarks: shared,
                });
            }
        }
        edges.extend(best);
    }
    edges
}
