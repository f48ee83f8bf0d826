//! Inertial initialization from up-to-scale keyframe poses.
//!
//! Four stages, each a small problem: gyroscope bias from relative rotations,
//! scale and gravity ignoring the accelerometer bias, accelerometer bias with
//! scale and gravity-direction refinement using the known gravity magnitude,
//! and finally keyframe velocities. Scale and gravity are solved on relations
//! between three consecutive keyframes so velocities drop out of the systems.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataio::{fmt_real, fmt_vec3};
use crate::error::{Error, Result};
use crate::manifold::{hat, right_jacobian_inv_so3, right_jacobian_so3, RigidPose, Rotation};
use crate::preintegration::{ImuMeasurement, ImuNoiseModel, PreintegratedImu};
use crate::state::ImuBias;

/// Camera pose of a keyframe from monocular vision, in arbitrary units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyframeVisualPose {
    pub id: usize,
    pub timestamp: f64,
    /// R_WC
    pub rotation: Rotation,
    /// Wp_C, visual units
    pub position: Vector3<f64>,
}

/// Gravity direction in the inertial frame.
pub const GRAVITY_DIRECTION_I: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitializerConfig {
    /// Largest accepted time between consecutive keyframes, s.
    pub max_keyframe_gap: f64,
    /// Condition numbers above this are flagged as ill-conditioned (never fatal).
    pub condition_threshold: f64,
    pub gyro_max_iterations: usize,
    /// Gauss-Newton stops when the gyro-bias step norm falls below this.
    pub gyro_step_tolerance: f64,
    /// Frames used by [`reinitialize_biases`].
    pub reinit_frames: usize,
    /// Stage-3 solves, each linearized about the previous gravity estimate.
    pub gravity_refinement_passes: usize,
}

impl Default for InitializerConfig {
    fn default() -> Self {
        Self {
            max_keyframe_gap: 0.5,
            condition_threshold: 25_000.0,
            gyro_max_iterations: 20,
            gyro_step_tolerance: 1e-10,
            reinit_frames: 20,
            gravity_refinement_passes: 1,
        }
    }
}

/// Singular values below this fraction of the largest mark a rank-deficient system.
const RANK_TOLERANCE: f64 = 1e-12;

/// Keyframes, the preintegrations between consecutive ones and the calibration.
#[derive(Clone, Debug)]
pub struct InitializationInput {
    pub keyframes: Vec<KeyframeVisualPose>,
    /// `preintegrations[i]` spans keyframes `i` and `i + 1`.
    pub preintegrations: Vec<PreintegratedImu>,
    /// camera-from-body
    pub t_cb: RigidPose,
    /// m/s²
    pub gravity_magnitude: f64,
}

impl InitializationInput {
    pub fn new(
        keyframes: Vec<KeyframeVisualPose>,
        preintegrations: Vec<PreintegratedImu>,
        t_cb: RigidPose,
        gravity_magnitude: f64,
    ) -> Self {
        Self {
            keyframes,
            preintegrations,
            t_cb,
            gravity_magnitude,
        }
    }

    /// Preintegrates `imu` between each pair of consecutive keyframes.
    pub fn from_imu(
        keyframes: Vec<KeyframeVisualPose>,
        imu: &[ImuMeasurement],
        bias_lin: ImuBias,
        noise: &ImuNoiseModel,
        t_cb: RigidPose,
    ) -> Result<Self> {
        let preintegrations = keyframes
            .windows(2)
            .map(|w| PreintegratedImu::from_stream(imu, w[0].timestamp, w[1].timestamp, bias_lin, noise))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(keyframes, preintegrations, t_cb, noise.gravity_magnitude))
    }

    pub fn validate(&self, cfg: &InitializerConfig) -> Result<()> {
        let n = self.keyframes.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!("{n} keyframes, need at least 2")));
        }
        if self.preintegrations.len() + 1 != n {
            return Err(Error::invalid(format!(
                "{} preintegrations for {n} keyframes",
                self.preintegrations.len()
            )));
        }
        if !(self.gravity_magnitude > 0.0) {
            return Err(Error::invalid("gravity magnitude must be positive"));
        }
        for (w, pre) in self.keyframes.windows(2).zip(&self.preintegrations) {
            let gap = w[1].timestamp - w[0].timestamp;
            if !(gap > 0.0) {
                return Err(Error::invalid(format!(
                    "keyframe timestamps not increasing at id {}",
                    w[1].id
                )));
            }
            if gap > cfg.max_keyframe_gap {
                return Err(Error::invalid(format!(
                    "keyframes {} and {} are {gap:.3} s apart (limit {})",
                    w[0].id, w[1].id, cfg.max_keyframe_gap
                )));
            }
            if (pre.dt_total - gap).abs() > 1e-3 {
                return Err(Error::invalid(format!(
                    "preintegration spans {:.4} s but keyframes {} and {} are {gap:.4} s apart",
                    pre.dt_total, w[0].id, w[1].id
                )));
            }
        }
        Ok(())
    }

    fn require(&self, min: usize, cfg: &InitializerConfig) -> Result<()> {
        self.validate(cfg)?;
        if self.keyframes.len() < min {
            return Err(Error::InsufficientData(format!(
                "{} keyframes, need at least {min}",
                self.keyframes.len()
            )));
        }
        Ok(())
    }

    /// R_WB of keyframe `i`.
    fn body_rotation(&self, i: usize) -> Matrix3<f64> {
        self.keyframes[i].rotation.matrix() * self.t_cb.rotation.matrix()
    }

    /// Copy with every preintegration corrected to first order for a new gyro bias.
    pub fn with_gyro_bias(&self, gyro_bias: &Vector3<f64>) -> Self {
        let preintegrations = self
            .preintegrations
            .iter()
            .map(|p| p.rebased(&ImuBias::new(*gyro_bias, p.bias_lin.accel)))
            .collect();
        Self {
            preintegrations,
            ..self.clone()
        }
    }
}

/// Coefficients of one three-keyframe relation.
///
/// Stage 2: `λ s + β g_W = γ`. Stage 3: `λ s + φ δθ_xy + ζ b_a = ψ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletSystemBlocks {
    pub lambda: Vector3<f64>,
    pub beta: Matrix3<f64>,
    pub gamma: Vector3<f64>,
    pub phi: Matrix3x2<f64>,
    pub zeta: Matrix3<f64>,
    pub psi: Vector3<f64>,
}

/// Blocks for keyframes `i, i+1, i+2`, given the gravity-direction rotation `r_wi`.
///
/// Deltas are taken at zero accelerometer bias, so `b_a` in the stage-3
/// relation is absolute.
pub fn triplet_blocks(input: &InitializationInput, i: usize, r_wi: &Rotation) -> TripletSystemBlocks {
    let (k1, k2, k3) = (&input.keyframes[i], &input.keyframes[i + 1], &input.keyframes[i + 2]);
    let (pre12, pre23) = (&input.preintegrations[i], &input.preintegrations[i + 1]);
    let dt12 = pre12.dt_total;
    let dt23 = pre23.dt_total;
    let cpb = input.t_cb.translation;
    let (rc1, rc2, rc3) = (k1.rotation.matrix(), k2.rotation.matrix(), k3.rotation.matrix());
    let r1 = input.body_rotation(i);
    let r2 = input.body_rotation(i + 1);
    let (dp12, dv12) = zero_accel_bias_deltas(pre12);
    let (dp23, _) = zero_accel_bias_deltas(pre23);

    let c = dt12 * dt12 * dt23 + dt23 * dt23 * dt12;
    let lambda = (k2.position - k1.position) * dt23 - (k3.position - k2.position) * dt12;
    let beta = Matrix3::identity() * (0.5 * c);
    let gamma = (rc1 - rc2) * cpb * dt23 - (rc2 - rc3) * cpb * dt12 + r1 * dp12 * dt23
        - r2 * dp23 * dt12
        - r1 * dv12 * dt12 * dt23;

    let g = input.gravity_magnitude;
    let r_wi = r_wi.matrix();
    let phi_full = -0.5 * c * g * r_wi * hat(&GRAVITY_DIRECTION_I);
    let phi = phi_full.fixed_columns::<2>(0).into_owned();
    let zeta = r2 * pre23.jac_p_ba * dt12 + r1 * pre12.jac_v_ba * dt12 * dt23 - r1 * pre12.jac_p_ba * dt23;
    let psi = gamma - 0.5 * c * g * r_wi * GRAVITY_DIRECTION_I;

    TripletSystemBlocks {
        lambda,
        beta,
        gamma,
        phi,
        zeta,
        psi,
    }
}

/// `(Δp, Δv)` extrapolated to zero accelerometer bias; exact since both are
/// linear in it.
fn zero_accel_bias_deltas(pre: &PreintegratedImu) -> (Vector3<f64>, Vector3<f64>) {
    let ba = pre.bias_lin.accel;
    (pre.delta_p - pre.jac_p_ba * ba, pre.delta_v - pre.jac_v_ba * ba)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitializationResult {
    pub scale: f64,
    /// m/s²
    pub gravity_w: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    /// W-frame body velocity per keyframe, m/s
    pub velocities: Vec<Vector3<f64>>,
    pub condition_number_stage2: f64,
    pub condition_number_stage3: f64,
    /// either condition number above the configured threshold
    pub ill_conditioned: bool,
    pub gyro_iterations: usize,
}

impl InitializationResult {
    pub fn bias(&self) -> ImuBias {
        ImuBias::new(self.gyro_bias, self.accel_bias)
    }

    /// Flat `key = value` record, one field per line; vectors are three
    /// space-separated reals and keyframe velocities are `velocity.<i>`.
    ///
    /// Keys: `scale`, `gravity_w`, `gyro_bias`, `accel_bias`,
    /// `condition_number_stage2`, `condition_number_stage3`,
    /// `ill_conditioned`, `gyro_iterations`, `keyframes`, `velocity.0` ...
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("scale", fmt_real(self.scale));
        put("gravity_w", fmt_vec3(&self.gravity_w, " "));
        put("gyro_bias", fmt_vec3(&self.gyro_bias, " "));
        put("accel_bias", fmt_vec3(&self.accel_bias, " "));
        put("condition_number_stage2", fmt_real(self.condition_number_stage2));
        put("condition_number_stage3", fmt_real(self.condition_number_stage3));
        put("ill_conditioned", self.ill_conditioned.to_string());
        put("gyro_iterations", self.gyro_iterations.to_string());
        put("keyframes", self.velocities.len().to_string());
        for (i, v) in self.velocities.iter().enumerate() {
            put(&format!("velocity.{i}"), fmt_vec3(v, " "));
        }
        s
    }

    /// Inverse of [`Self::to_record`]; reals round-trip exactly.
    pub fn from_record(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("record line {}: expected key = value", n + 1)))?;
            if fields.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::InvalidInput(format!(
                    "record line {}: duplicate key '{}'",
                    n + 1,
                    k.trim()
                )));
            }
        }
        let mut take = |k: &str| {
            fields
                .remove(k)
                .ok_or_else(|| Error::InvalidInput(format!("record: missing key '{k}'")))
        };
        let real = |k: &str, v: String| -> Result<f64> {
            v.parse::<f64>()
                .ok()
                .filter(|x| !x.is_nan())
                .ok_or_else(|| Error::InvalidInput(format!("record: {k} = '{v}' is not a number")))
        };
        let vec3 = |k: &str, v: String| -> Result<Vector3<f64>> {
            let xs = v
                .split_whitespace()
                .map(|x| real(k, x.to_string()))
                .collect::<Result<Vec<_>>>()?;
            if xs.len() != 3 {
                return Err(Error::InvalidInput(format!("record: {k} needs 3 values")));
            }
            Ok(Vector3::new(xs[0], xs[1], xs[2]))
        };
        let int = |k: &str, v: String| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::InvalidInput(format!("record: {k} = '{v}' is not a count")))
        };
        let scale = real("scale", take("scale")?)?;
        let gravity_w = vec3("gravity_w", take("gravity_w")?)?;
        let gyro_bias = vec3("gyro_bias", take("gyro_bias")?)?;
        let accel_bias = vec3("accel_bias", take("accel_bias")?)?;
        let condition_number_stage2 = real("condition_number_stage2", take("condition_number_stage2")?)?;
        let condition_number_stage3 = real("condition_number_stage3", take("condition_number_stage3")?)?;
        let ill_conditioned = match take("ill_conditioned")?.as_str() {
            "true" => true,
            "false" => false,
            v => return Err(Error::InvalidInput(format!("record: ill_conditioned = '{v}'"))),
        };
        let gyro_iterations = int("gyro_iterations", take("gyro_iterations")?)?;
        let n = int("keyframes", take("keyframes")?)?;
        let velocities = (0..n)
            .map(|i| {
                let k = format!("velocity.{i}");
                vec3(&k, take(&k)?)
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(k) = fields.keys().next() {
            return Err(Error::InvalidInput(format!("record: unknown key '{k}'")));
        }
        Ok(Self {
            scale,
            gravity_w,
            gyro_bias,
            accel_bias,
            velocities,
            condition_number_stage2,
            condition_number_stage3,
            ill_conditioned,
            gyro_iterations,
        })
    }
}

/// Stage 1: constant gyroscope bias aligning integrated and visual rotations.
///
/// Returns the bias and the number of Gauss-Newton iterations taken.
pub fn estimate_gyro_bias(input: &InitializationInput, cfg: &InitializerConfig) -> Result<(Vector3<f64>, usize)> {
    input.require(2, cfg)?;
    let frames: Vec<Rotation> = (0..input.keyframes.len())
        .map(|i| Rotation::from_matrix_unchecked(input.body_rotation(i)))
        .collect();
    solve_gyro_bias(&frames, &input.preintegrations, cfg)
}

fn solve_gyro_bias(
    r_wb: &[Rotation],
    pre: &[PreintegratedImu],
    cfg: &InitializerConfig,
) -> Result<(Vector3<f64>, usize)> {
    let mut bg = Vector3::zeros();
    let mut iterations = 0;
    while iterations < cfg.gyro_max_iterations {
        iterations += 1;
        let mut h = Matrix3::zeros();
        let mut b = Vector3::zeros();
        for (w, p) in r_wb.windows(2).zip(pre) {
            let e0 = p.delta_r.transpose() * w[0].transpose() * w[1];
            let delta = bg - p.bias_lin.gyro;
            let jd = p.jac_r_bg * delta;
            let r = (Rotation::exp(&-jd) * e0).log();
            let j = -right_jacobian_inv_so3(&r) * e0.transpose().matrix() * right_jacobian_so3(&-jd) * p.jac_r_bg;
            h += j.transpose() * j;
            b -= j.transpose() * r;
        }
        let eig = h.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || lo < RANK_TOLERANCE * hi {
            return Err(Error::DegenerateMotion {
                reason: "gyroscope bias normal equations are rank deficient".into(),
                condition_number: if lo > 0.0 { hi / lo } else { f64::INFINITY },
            });
        }
        let step = h
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("gyro bias normal equations".into()))?
            .solve(&b);
        bg += step;
        if step.norm() < cfg.gyro_step_tolerance {
            break;
        }
    }
    Ok((bg, iterations))
}

/// Least-squares solve through the SVD, with the condition number of `a`.
fn svd_solve(a: DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<(DVector<f64>, f64)> {
    let svd = a.svd(true, true);
    let hi = svd.singular_values.max();
    let lo = svd.singular_values.min();
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(hi > 0.0) || lo < RANK_TOLERANCE * hi {
        return Err(Error::DegenerateMotion {
            reason: format!("{what} system is rank deficient"),
            condition_number: cond,
        });
    }
    let x = svd
        .solve(b, 0.0)
        .map_err(|e| Error::NumericalFailure(format!("{what} SVD solve: {e}")))?;
    Ok((x, cond))
}

/// Stage 2: scale and gravity with the accelerometer bias neglected.
///
/// Preintegrations must already be corrected for the gyroscope bias.
/// Returns `(s, g_W, condition number)`.
pub fn solve_scale_gravity(input: &InitializationInput, cfg: &InitializerConfig) -> Result<(f64, Vector3<f64>, f64)> {
    input.require(4, cfg)?;
    let m = input.keyframes.len() - 2;
    let mut a = DMatrix::zeros(3 * m, 4);
    let mut b = DVector::zeros(3 * m);
    for i in 0..m {
        let blk = triplet_blocks(input, i, &Rotation::identity());
        a.view_mut((3 * i, 0), (3, 1)).copy_from(&blk.lambda);
        a.view_mut((3 * i, 1), (3, 3)).copy_from(&blk.beta);
        b.rows_mut(3 * i, 3).copy_from(&blk.gamma);
    }
    let (x, cond) = svd_solve(a, &b, "scale/gravity")?;
    Ok((x[0], Vector3::new(x[1], x[2], x[3]), cond))
}

/// Rotation taking [`GRAVITY_DIRECTION_I`] onto the direction of `g_w`.
pub fn gravity_rotation(g_w: &Vector3<f64>) -> Result<Rotation> {
    let n = g_w.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::invalid("gravity estimate has no direction"));
    }
    let gw = g_w / n;
    let cross = GRAVITY_DIRECTION_I.cross(&gw);
    let s = cross.norm();
    let c = GRAVITY_DIRECTION_I.dot(&gw);
    let theta = s.atan2(c);
    if theta < 1e-8 {
        return Ok(Rotation::identity());
    }
    if s < 1e-8 {
        // antiparallel: any horizontal axis works
        return Ok(Rotation::exp(&Vector3::new(theta, 0.0, 0.0)));
    }
    Ok(Rotation::exp(&(cross / s * theta)))
}

/// Stage 3 output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinedGravity {
    pub scale: f64,
    pub gravity_w: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    /// δθ_xy applied to the stage-2 direction
    pub delta_theta: [f64; 2],
    pub condition_number: f64,
}

/// Stage 3: accelerometer bias, scale and a two-angle gravity-direction correction,
/// using the known gravity magnitude. Single linearization about `g_approx`.
pub fn refine_with_accel_bias(
    input: &InitializationInput,
    g_approx: &Vector3<f64>,
    cfg: &InitializerConfig,
) -> Result<RefinedGravity> {
    input.require(4, cfg)?;
    let r_wi = gravity_rotation(g_approx)?;
    let m = input.keyframes.len() - 2;
    let mut a = DMatrix::zeros(3 * m, 6);
    let mut b = DVector::zeros(3 * m);
    for i in 0..m {
        let blk = triplet_blocks(input, i, &r_wi);
        a.view_mut((3 * i, 0), (3, 1)).copy_from(&blk.lambda);
        a.view_mut((3 * i, 1), (3, 2)).copy_from(&blk.phi);
        a.view_mut((3 * i, 3), (3, 3)).copy_from(&blk.zeta);
        b.rows_mut(3 * i, 3).copy_from(&blk.psi);
    }
    let (x, cond) = svd_solve(a, &b, "scale/gravity/accelerometer-bias")?;
    let dtheta = Vector3::new(x[1], x[2], 0.0);
    let gravity_w = r_wi * (Rotation::exp(&dtheta) * GRAVITY_DIRECTION_I) * input.gravity_magnitude;
    Ok(RefinedGravity {
        scale: x[0],
        gravity_w,
        accel_bias: Vector3::new(x[3], x[4], x[5]),
        delta_theta: [x[1], x[2]],
        condition_number: cond,
    })
}

/// Stage 4: keyframe velocities from the position relation between each keyframe
/// and its successor; the last keyframe uses the velocity relation.
pub fn estimate_velocities(
    input: &InitializationInput,
    scale: f64,
    gravity_w: &Vector3<f64>,
    bias: &ImuBias,
) -> Vec<Vector3<f64>> {
    let n = input.keyframes.len();
    let cpb = input.t_cb.translation;
    let body_position = |i: usize| scale * input.keyframes[i].position + input.keyframes[i].rotation * cpb;
    let mut out = Vec::with_capacity(n);
    for i in 0..n.saturating_sub(1) {
        let pre = &input.preintegrations[i];
        let (_, _, dp) = pre.correct_bias_first_order(bias);
        let dt = pre.dt_total;
        let v =
            (body_position(i + 1) - body_position(i) - 0.5 * gravity_w * dt * dt - input.body_rotation(i) * dp) / dt;
        out.push(v);
    }
    if n >= 2 {
        let pre = &input.preintegrations[n - 2];
        let (_, dv, _) = pre.correct_bias_first_order(bias);
        let last = out[n - 2] + gravity_w * pre.dt_total + input.body_rotation(n - 2) * dv;
        out.push(last);
    }
    out
}

/// Runs the four stages in order.
pub fn run_full_initialization(input: &InitializationInput, cfg: &InitializerConfig) -> Result<InitializationResult> {
    input.require(4, cfg)?;
    let (gyro_bias, gyro_iterations) = estimate_gyro_bias(input, cfg)?;
    let corrected = input.with_gyro_bias(&gyro_bias);
    let (_, g_approx, cond2) = solve_scale_gravity(&corrected, cfg)?;
    let mut refined = refine_with_accel_bias(&corrected, &g_approx, cfg)?;
    for _ in 1..cfg.gravity_refinement_passes {
        refined = refine_with_accel_bias(&corrected, &refined.gravity_w, cfg)?;
    }
    if !(refined.scale > 0.0) {
        return Err(Error::DegenerateMotion {
            reason: format!("non-positive scale {:.3e}", refined.scale),
            condition_number: refined.condition_number,
        });
    }
    let bias = ImuBias::new(gyro_bias, refined.accel_bias);
    let velocities = estimate_velocities(&corrected, refined.scale, &refined.gravity_w, &bias);
    Ok(InitializationResult {
        scale: refined.scale,
        gravity_w: refined.gravity_w,
        gyro_bias,
        accel_bias: refined.accel_bias,
        velocities,
        condition_number_stage2: cond2,
        condition_number_stage3: refined.condition_number,
        ill_conditioned: cond2 > cfg.condition_threshold || refined.condition_number > cfg.condition_threshold,
        gyro_iterations,
    })
}

/// Re-estimates both biases from frames localized by vision alone, with scale
/// and gravity already known. Takes exactly `cfg.reinit_frames` frames.
pub fn reinitialize_biases(
    input: &InitializationInput,
    scale: f64,
    gravity_w: &Vector3<f64>,
    cfg: &InitializerConfig,
) -> Result<ImuBias> {
    input.validate(cfg)?;
    if input.keyframes.len() != cfg.reinit_frames {
        return Err(Error::invalid(format!(
            "bias reinitialization takes {} frames, got {}",
            cfg.reinit_frames,
            input.keyframes.len()
        )));
    }
    if input.keyframes.len() < 3 {
        return Err(Error::InsufficientData("bias reinitialization needs 3 frames".into()));
    }
    let (gyro, _) = estimate_gyro_bias(input, cfg)?;
    let corrected = input.with_gyro_bias(&gyro);
    let m = corrected.keyframes.len() - 2;
    let mut a = DMatrix::zeros(3 * m, 3);
    let mut b = DVector::zeros(3 * m);
    for i in 0..m {
        let blk = triplet_blocks(&corrected, i, &Rotation::identity());
        a.view_mut((3 * i, 0), (3, 3)).copy_from(&blk.zeta);
        b.rows_mut(3 * i, 3)
            .copy_from(&(blk.gamma - blk.lambda * scale - blk.beta * gravity_w));
    }
    let (x, _) = svd_solve(a, &b, "accelerometer-bias")?;
    Ok(ImuBias::new(gyro, Vector3::new(x[0], x[1], x[2])))
}
