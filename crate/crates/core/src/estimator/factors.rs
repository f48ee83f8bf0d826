//! Residuals and analytic Jacobians of the visual, inertial and prior terms.
//!
//! Jacobians are taken with respect to the error state `[δφ, δv, δp, δb_g, δb_a]`
//! of [`NavState::retract`]: rotation perturbed on the right, the rest additive.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};

use super::camera::{Observation, PinholeCamera};
use super::robust::{Huber, CHI2_15, CHI2_2, CHI2_6, CHI2_9};
use crate::error::{Error, Result};
use crate::manifold::{hat, right_jacobian_inv_so3, right_jacobian_so3, RigidPose, Rotation};
use crate::preintegration::{ImuNoiseModel, Matrix9, PreintegratedImu};
use crate::state::{idx, NavState, NavVector, NAV_DIM};

pub type Matrix15 = SMatrix<f64, NAV_DIM, NAV_DIM>;
pub type Matrix2x15 = SMatrix<f64, 2, NAV_DIM>;

/// Smallest variance used when inverting a covariance into an information matrix.
const MIN_VARIANCE: f64 = 1e-12;

/// Whitened reprojection error of one observation.
#[derive(Clone, Copy, Debug)]
pub struct ReprojectionResidual {
    /// `x − π(X_C)`, pixels
    pub residual: Vector2<f64>,
    /// Point in the camera frame.
    pub point_camera: Vector3<f64>,
    /// d residual / d state, nonzero only in the rotation and position columns.
    pub jac_state: Matrix2x15,
    /// d residual / d landmark position.
    pub jac_landmark: Matrix2x3<f64>,
    /// `rᵀ Σ⁻¹ r`
    pub chi2: f64,
    pub weight: f64,
}

/// Reprojection residual of `landmark` (world frame) seen from `state`.
///
/// `t_cb` maps body coordinates to camera coordinates.
pub fn reprojection_residual(
    state: &NavState,
    landmark: &Vector3<f64>,
    obs: &Observation,
    cam: &PinholeCamera,
    t_cb: &RigidPose,
) -> Result<ReprojectionResidual> {
    let r_bw = state.rotation.transpose();
    let r_cb = t_cb.rotation.matrix();
    let x_b = r_bw * (landmark - state.position);
    let x_c = r_cb * x_b + t_cb.translation;
    let uv = cam.project(&x_c)?;
    let residual = obs.keypoint - uv;
    let proj = cam.projection_jacobian(&x_c);

    let mut jac_state = Matrix2x15::zeros();
    jac_state
        .fixed_view_mut::<2, 3>(0, idx::ROT)
        .copy_from(&(-proj * r_cb * hat(&x_b)));
    jac_state
        .fixed_view_mut::<2, 3>(0, idx::POS)
        .copy_from(&(proj * r_cb * r_bw.matrix()));
    let jac_landmark = -proj * r_cb * r_bw.matrix();

    let chi2 = (residual.transpose() * obs.info * residual)[0];
    Ok(ReprojectionResidual {
        residual,
        point_camera: x_c,
        jac_state,
        jac_landmark,
        chi2,
        weight: Huber::from_chi2(CHI2_2).weight(chi2),
    })
}

/// Preintegrated inertial residual between two states.
///
/// Ordering is `[e_R, e_v, e_p, e_bg, e_ba]`. The first nine rows are
/// weighted by `inertial_info`, the bias rows by `bias_info`, each with its
/// own Huber kernel.
#[derive(Clone, Copy, Debug)]
pub struct ImuResidual {
    pub residual: NavVector,
    pub jac_i: Matrix15,
    pub jac_j: Matrix15,
    pub inertial_info: Matrix9,
    pub bias_info: SMatrix<f64, 6, 6>,
    pub inertial_chi2: f64,
    pub bias_chi2: f64,
    pub inertial_weight: f64,
    pub bias_weight: f64,
}

impl ImuResidual {
    /// Block-diagonal information with the robust weights folded in.
    pub fn weighted_information(&self) -> Matrix15 {
        let mut w = Matrix15::zeros();
        w.fixed_view_mut::<9, 9>(0, 0)
            .copy_from(&(self.inertial_info * self.inertial_weight));
        w.fixed_view_mut::<6, 6>(9, 9)
            .copy_from(&(self.bias_info * self.bias_weight));
        w
    }

    pub fn robust_cost(&self) -> f64 {
        Huber::from_chi2(CHI2_9).cost(self.inertial_chi2) + Huber::from_chi2(CHI2_6).cost(self.bias_chi2)
    }
}

/// Information matrix of a covariance, with the variance floored at
/// [`MIN_VARIANCE`] so that noise-free models stay invertible.
pub(crate) fn information_from_covariance<const N: usize>(cov: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let mut c = *cov;
    for i in 0..N {
        c[(i, i)] = c[(i, i)].max(MIN_VARIANCE);
    }
    match c.cholesky() {
        Some(ch) => {
            let inv = ch.inverse();
            0.5 * (inv + inv.transpose())
        }
        None => SMatrix::<f64, N, N>::from_diagonal(&c.diagonal().map(|d| 1.0 / d)),
    }
}

/// Inertial residual of `pre`, spanning `state_i` → `state_j`.
///
/// The preintegrated deltas are corrected to first order for the bias of
/// `state_j`; the bias residual is `b_j − b_i`.
pub fn imu_residual(
    state_i: &NavState,
    state_j: &NavState,
    pre: &PreintegratedImu,
    gravity: &Vector3<f64>,
    noise: &ImuNoiseModel,
) -> ImuResidual {
    let dt = pre.dt_total;
    let db = state_j.bias - pre.bias_lin;
    let jr_db = pre.jac_r_bg * db.gyro;
    let dr_corr = pre.delta_r * Rotation::exp(&jr_db);
    let dv_corr = pre.delta_v + pre.jac_v_bg * db.gyro + pre.jac_v_ba * db.accel;
    let dp_corr = pre.delta_p + pre.jac_p_bg * db.gyro + pre.jac_p_ba * db.accel;

    let r_i = state_i.rotation.matrix();
    let r_j = state_j.rotation.matrix();
    let r_it = r_i.transpose();
    let e_mat = dr_corr.transpose() * state_i.rotation.transpose() * state_j.rotation;
    let e_r = e_mat.log();
    let jr_inv = right_jacobian_inv_so3(&e_r);

    let dv_w = state_j.velocity - state_i.velocity - gravity * dt;
    let dp_w = state_j.position - state_i.position - state_i.velocity * dt - 0.5 * gravity * dt * dt;
    let e_v = r_it * dv_w - dv_corr;
    let e_p = r_it * dp_w - dp_corr;
    let e_bg = state_j.bias.gyro - state_i.bias.gyro;
    let e_ba = state_j.bias.accel - state_i.bias.accel;

    let mut residual = NavVector::zeros();
    residual.fixed_rows_mut::<3>(0).copy_from(&e_r);
    residual.fixed_rows_mut::<3>(3).copy_from(&e_v);
    residual.fixed_rows_mut::<3>(6).copy_from(&e_p);
    residual.fixed_rows_mut::<3>(9).copy_from(&e_bg);
    residual.fixed_rows_mut::<3>(12).copy_from(&e_ba);

    let eye = Matrix3::identity();
    let mut jac_i = Matrix15::zeros();
    let mut jac_j = Matrix15::zeros();
    let put = |m: &mut Matrix15, r: usize, c: usize, b: Matrix3<f64>| {
        m.fixed_view_mut::<3, 3>(r, c).copy_from(&b);
    };
    put(&mut jac_i, 0, idx::ROT, -jr_inv * r_j.transpose() * r_i);
    put(&mut jac_j, 0, idx::ROT, jr_inv);
    put(
        &mut jac_j,
        0,
        idx::BG,
        -jr_inv * e_mat.matrix().transpose() * right_jacobian_so3(&jr_db) * pre.jac_r_bg,
    );

    put(&mut jac_i, 3, idx::ROT, hat(&(r_it * dv_w)));
    put(&mut jac_i, 3, idx::VEL, -r_it);
    put(&mut jac_j, 3, idx::VEL, r_it);
    put(&mut jac_j, 3, idx::BG, -pre.jac_v_bg);
    put(&mut jac_j, 3, idx::BA, -pre.jac_v_ba);

    put(&mut jac_i, 6, idx::ROT, hat(&(r_it * dp_w)));
    put(&mut jac_i, 6, idx::VEL, -r_it * dt);
    put(&mut jac_i, 6, idx::POS, -r_it);
    put(&mut jac_j, 6, idx::POS, r_it);
    put(&mut jac_j, 6, idx::BG, -pre.jac_p_bg);
    put(&mut jac_j, 6, idx::BA, -pre.jac_p_ba);

    put(&mut jac_i, 9, idx::BG, -eye);
    put(&mut jac_j, 9, idx::BG, eye);
    put(&mut jac_i, 12, idx::BA, -eye);
    put(&mut jac_j, 12, idx::BA, eye);

    let inertial_info = information_from_covariance(&pre.covariance);
    let bias_info = information_from_covariance(&pre.bias_walk_covariance(noise));
    let e9 = residual.fixed_rows::<9>(0).into_owned();
    let e6 = residual.fixed_rows::<6>(9).into_owned();
    let inertial_chi2 = (e9.transpose() * inertial_info * e9)[0];
    let bias_chi2 = (e6.transpose() * bias_info * e6)[0];
    ImuResidual {
        residual,
        jac_i,
        jac_j,
        inertial_info,
        bias_info,
        inertial_chi2,
        bias_chi2,
        inertial_weight: Huber::from_chi2(CHI2_9).weight(inertial_chi2),
        bias_weight: Huber::from_chi2(CHI2_6).weight(bias_chi2),
    }
}

/// Gaussian prior on a full navigation state left by marginalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalPrior {
    pub mean: NavState,
    /// Ordering `[δφ, δv, δp, δb_g, δb_a]`.
    pub information: Matrix15,
}

impl MarginalPrior {
    pub fn new(mean: NavState, information: Matrix15) -> Result<Self> {
        let p = Self { mean, information };
        p.validate()?;
        Ok(p)
    }

    /// Rejects non-finite, asymmetric or indefinite information.
    pub fn validate(&self) -> Result<()> {
        let h = &self.information;
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure("prior information is not finite".into()));
        }
        let scale = h.amax().max(1.0);
        if (h - h.transpose()).amax() > 1e-9 * scale {
            return Err(Error::NumericalFailure("prior information is not symmetric".into()));
        }
        let min_eig = h.symmetric_eigenvalues().min();
        if min_eig < -1e-9 * scale {
            return Err(Error::NumericalFailure(format!(
                "prior information is not positive semidefinite (eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(())
    }
}

/// Residual `mean ⊖ state` of a marginal prior.
#[derive(Clone, Copy, Debug)]
pub struct PriorResidual {
    pub residual: NavVector,
    pub jacobian: Matrix15,
    pub chi2: f64,
    pub weight: f64,
}

pub fn prior_residual(state: &NavState, prior: &MarginalPrior) -> PriorResidual {
    let residual = prior.mean.local(state);
    let mut jacobian = Matrix15::identity();
    let e_r = residual.fixed_rows::<3>(idx::ROT).into_owned();
    jacobian
        .fixed_view_mut::<3, 3>(idx::ROT, idx::ROT)
        .copy_from(&right_jacobian_inv_so3(&e_r));
    let chi2 = (residual.transpose() * prior.information * residual)[0];
    PriorResidual {
        residual,
        jacobian,
        chi2,
        weight: Huber::from_chi2(CHI2_15).weight(chi2),
    }
}

pub(crate) fn prior_cost(chi2: f64) -> f64 {
    Huber::from_chi2(CHI2_15).cost(chi2)
}

pub(crate) fn reprojection_cost(chi2: f64) -> f64 {
    Huber::from_chi2(CHI2_2).cost(chi2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preintegration::{predict, ImuMeasurement};
    use crate::state::ImuBias;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const STEP: f64 = 1e-6;

    fn rvec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-s..s),
            rng.random_range(-s..s),
            rng.random_range(-s..s),
        )
    }

    fn rstate(rng: &mut ChaCha8Rng) -> NavState {
        NavState {
            rotation: Rotation::exp(&rvec(rng, 2.0)),
            position: rvec(rng, 3.0),
            velocity: rvec(rng, 1.0),
            bias: ImuBias::new(rvec(rng, 0.05), rvec(rng, 0.2)),
            timestamp: 0.0,
        }
    }

    fn rpre(rng: &mut ChaCha8Rng) -> PreintegratedImu {
        let noise = ImuNoiseModel::euroc();
        let mut pre = PreintegratedImu::new(ImuBias::new(rvec(rng, 0.05), rvec(rng, 0.2)));
        let w0 = rvec(rng, 1.0);
        let a0 = rvec(rng, 3.0) + Vector3::new(0.0, 0.0, 9.81);
        for k in 0..40 {
            let t = k as f64 * 0.005;
            let m = ImuMeasurement::new(t, w0 + rvec(rng, 0.3), a0 + rvec(rng, 1.0));
            pre.integrate_in_place(&m, 0.005, &noise).unwrap();
        }
        pre
    }

    /// Relative error with an absolute floor so that exact zeros compare cleanly.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
    }

    fn perturb(s: &NavState, k: usize, h: f64) -> NavState {
        let mut d = NavVector::zeros();
        d[k] = h;
        s.retract(&d)
    }

    #[test]
    fn reprojection_zero_for_consistent_observation() {
        let cam = PinholeCamera::euroc();
        let t_cb = crate::simulator::default_t_cb();
        let s = NavState::default();
        // camera looks along body +x
        let lm = Vector3::new(4.0, 0.3, -0.2);
        let x_c = t_cb.transform_point(&lm);
        let obs = Observation::new(0, cam.project(&x_c).unwrap(), 1.0);
        let r = reprojection_residual(&s, &lm, &obs, &cam, &t_cb).unwrap();
        assert!(r.residual.norm() < 1e-12);
        assert_eq!(r.weight, 1.0);
    }

    #[test]
    fn reprojection_behind_camera_is_error() {
        let cam = PinholeCamera::euroc();
        let t_cb = crate::simulator::default_t_cb();
        let obs = Observation::new(0, Vector2::new(300.0, 200.0), 1.0);
        let r = reprojection_residual(&NavState::default(), &Vector3::new(-3.0, 0.0, 0.0), &obs, &cam, &t_cb);
        assert!(matches!(r, Err(Error::BehindCamera { .. })));
    }

    #[test]
    fn reprojection_jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cam = PinholeCamera::euroc();
        let t_cb = crate::simulator::default_t_cb();
        let mut checked = 0;
        while checked < 100 {
            let s = rstate(&mut rng);
            let x_c = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..6.0),
            );
            let lm = s.pose().transform_point(&t_cb.inverse().transform_point(&x_c));
            let obs = Observation::new(0, cam.project(&x_c).unwrap() + Vector2::new(3.0, -2.0), 1.0);
            let r = reprojection_residual(&s, &lm, &obs, &cam, &t_cb).unwrap();
            for k in 0..NAV_DIM {
                let fp = reprojection_residual(&perturb(&s, k, STEP), &lm, &obs, &cam, &t_cb)
                    .unwrap()
                    .residual;
                let fm = reprojection_residual(&perturb(&s, k, -STEP), &lm, &obs, &cam, &t_cb)
                    .unwrap()
                    .residual;
                let num = (fp - fm) / (2.0 * STEP);
                for row in 0..2 {
                    assert!(rel_err(r.jac_state[(row, k)], num[row]) < 1e-5, "state col {k}");
                }
            }
            for k in 0..3 {
                let mut e = Vector3::zeros();
                e[k] = STEP;
                let fp = reprojection_residual(&s, &(lm + e), &obs, &cam, &t_cb)
                    .unwrap()
                    .residual;
                let fm = reprojection_residual(&s, &(lm - e), &obs, &cam, &t_cb)
                    .unwrap()
                    .residual;
                let num = (fp - fm) / (2.0 * STEP);
                for row in 0..2 {
                    assert!(rel_err(r.jac_landmark[(row, k)], num[row]) < 1e-5);
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn imu_residual_vanishes_on_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Vector3::new(0.0, 0.0, -9.81);
        for _ in 0..20 {
            let si = rstate(&mut rng);
            let pre = rpre(&mut rng);
            let sj = predict(&si, &pre, &g);
            let r = imu_residual(&si, &sj, &pre, &g, &ImuNoiseModel::euroc());
            assert!(r.residual.amax() < 1e-10, "{}", r.residual);
        }
    }

    #[test]
    fn imu_jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Vector3::new(0.0, 0.0, -9.81);
        let noise = ImuNoiseModel::euroc();
        for _ in 0..100 {
            let si = rstate(&mut rng);
            let pre = rpre(&mut rng);
            // off the prediction so that every residual block is nonzero
            let sj = predict(&si, &pre, &g).retract(&NavVector::from_fn(|_, _| rng.random_range(-0.05..0.05)));
            let r = imu_residual(&si, &sj, &pre, &g, &noise);
            for k in 0..NAV_DIM {
                let num_i = (imu_residual(&perturb(&si, k, STEP), &sj, &pre, &g, &noise).residual
                    - imu_residual(&perturb(&si, k, -STEP), &sj, &pre, &g, &noise).residual)
                    / (2.0 * STEP);
                let num_j = (imu_residual(&si, &perturb(&sj, k, STEP), &pre, &g, &noise).residual
                    - imu_residual(&si, &perturb(&sj, k, -STEP), &pre, &g, &noise).residual)
                    / (2.0 * STEP);
                for row in 0..NAV_DIM {
                    assert!(
                        rel_err(r.jac_i[(row, k)], num_i[row]) < 1e-5,
                        "i ({row},{k}) {} vs {}",
                        r.jac_i[(row, k)],
                        num_i[row]
                    );
                    assert!(
                        rel_err(r.jac_j[(row, k)], num_j[row]) < 1e-5,
                        "j ({row},{k}) {} vs {}",
                        r.jac_j[(row, k)],
                        num_j[row]
                    );
                }
            }
        }
    }

    #[test]
    fn position_perturbation_moves_e_p_by_rotated_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Vector3::new(0.0, 0.0, -9.81);
        let si = rstate(&mut rng);
        let pre = rpre(&mut rng);
        let sj = predict(&si, &pre, &g);
        let d = Vector3::new(1e-4, -2e-4, 5e-5);
        let mut moved = sj;
        moved.position += d;
        let e0 = imu_residual(&si, &sj, &pre, &g, &ImuNoiseModel::euroc()).residual;
        let e1 = imu_residual(&si, &moved, &pre, &g, &ImuNoiseModel::euroc()).residual;
        let de = (e1 - e0).fixed_rows::<3>(6).into_owned();
        assert!((de - si.rotation.transpose().matrix() * d).norm() < 1e-12);
    }

    #[test]
    fn prior_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let mean = rstate(&mut rng);
            let s = mean.retract(&NavVector::from_fn(|_, _| rng.random_range(-0.5..0.5)));
            let prior = MarginalPrior::new(mean, Matrix15::identity()).unwrap();
            let r = prior_residual(&s, &prior);
            for k in 0..NAV_DIM {
                let num = (prior_residual(&perturb(&s, k, STEP), &prior).residual
                    - prior_residual(&perturb(&s, k, -STEP), &prior).residual)
                    / (2.0 * STEP);
                for row in 0..NAV_DIM {
                    assert!(rel_err(r.jacobian[(row, k)], num[row]) < 1e-5);
                }
            }
        }
    }

    #[test]
    fn prior_rejects_indefinite_information() {
        let mut h = Matrix15::identity();
        h[(3, 3)] = -1.0;
        assert!(matches!(
            MarginalPrior::new(NavState::default(), h),
            Err(Error::NumericalFailure(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn residuals_vanish_at_consistent_states(seed in proptest::prelude::any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = PinholeCamera::euroc();
            let t_cb = crate::simulator::default_t_cb();
            let s = rstate(&mut rng);
            let x_c = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..6.0));
            let lm = s.pose().transform_point(&t_cb.inverse().transform_point(&x_c));
            let obs = Observation::new(0, cam.project(&x_c).unwrap(), 1.0);
            let r = reprojection_residual(&s, &lm, &obs, &cam, &t_cb).unwrap();
            proptest::prop_assert!(r.residual.norm() < 1e-8);

            let g = Vector3::new(0.0, 0.0, -9.81);
            let mut pre = PreintegratedImu::new(s.bias);
            let noise = ImuNoiseModel::euroc();
            for k in 0..20 {
                let m = ImuMeasurement::new(k as f64 * 0.005, rvec(&mut rng, 1.0), rvec(&mut rng, 12.0));
                pre = pre.integrate_measurement(&m, 0.005, &noise).unwrap();
            }
            let r = imu_residual(&s, &predict(&s, &pre, &g), &pre, &g, &noise);
            proptest::prop_assert!(r.residual.norm() < 1e-8);
        }
    }
}
