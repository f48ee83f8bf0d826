//! Dense Gauss-Newton over navigation states and landmarks.
//!
//! Landmarks are eliminated with a Schur complement before solving for the
//! states, so the linear solve is only as large as the free state dimension.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};

use super::camera::{Observation, PinholeCamera};
use super::factors::{
    imu_residual, prior_cost, prior_residual, reprojection_cost, reprojection_residual, MarginalPrior, Matrix15,
};
use crate::error::{Error, Result};
use crate::manifold::RigidPose;
use crate::preintegration::{ImuNoiseModel, PreintegratedImu};
use crate::state::{idx, NavState, NavVector, NAV_DIM};

type Matrix15x3 = SMatrix<f64, NAV_DIM, 3>;

/// Which components of a state the solver may move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateFreedom {
    Fixed,
    Full,
    /// Rotation and position held, velocity and biases free.
    VelocityBias,
}

const FULL_DIMS: [usize; 15] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14];
const VEL_BIAS_DIMS: [usize; 9] = [3, 4, 5, 9, 10, 11, 12, 13, 14];

impl StateFreedom {
    pub fn dims(&self) -> &'static [usize] {
        match self {
            StateFreedom::Fixed => &[],
            StateFreedom::Full => &FULL_DIMS,
            StateFreedom::VelocityBias => &VEL_BIAS_DIMS,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProjectionTerm {
    pub state: usize,
    pub landmark: usize,
    pub obs: Observation,
}

#[derive(Clone, Debug)]
pub struct InertialTerm {
    pub i: usize,
    pub j: usize,
    pub pre: PreintegratedImu,
}

#[derive(Clone, Debug)]
pub struct PriorTerm {
    pub state: usize,
    pub prior: MarginalPrior,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Step halvings tried before an iteration is abandoned.
    pub max_halvings: usize,
    /// Converged once the largest step component falls below this.
    pub step_tolerance: f64,
    /// Converged once an accepted step lowers the cost by less than this fraction.
    pub relative_cost_tolerance: f64,
    /// Iterations in a row whose full step raised the cost before giving up.
    pub divergence_window: usize,
}

impl SolverOptions {
    pub fn with_max_iterations(max_iterations: usize) -> Self {
        Self {
            max_iterations,
            ..Self::default()
        }
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            max_halvings: 10,
            step_tolerance: 1e-10,
            relative_cost_tolerance: 1e-6,
            divergence_window: 3,
        }
    }
}

/// Outcome of [`Problem::solve`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Robust cost after every accepted iteration, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub converged: bool,
    /// Stopped because the full step kept raising the cost.
    pub diverged: bool,
    /// Observations skipped because the point fell behind the camera.
    pub dropped_observations: usize,
}

/// Least-squares problem over states and landmarks.
#[derive(Clone, Debug)]
pub struct Problem {
    pub states: Vec<NavState>,
    pub freedom: Vec<StateFreedom>,
    pub landmarks: Vec<Vector3<f64>>,
    pub landmark_free: Vec<bool>,
    pub projections: Vec<ProjectionTerm>,
    pub inertial: Vec<InertialTerm>,
    pub priors: Vec<PriorTerm>,
    pub camera: PinholeCamera,
    pub t_cb: RigidPose,
    pub gravity: Vector3<f64>,
    pub noise: ImuNoiseModel,
}

struct LandmarkBlock {
    hll: Matrix3<f64>,
    gl: Vector3<f64>,
    coupling: Vec<(usize, Matrix15x3)>,
}

struct Linearization {
    offsets: Vec<Option<usize>>,
    h: DMatrix<f64>,
    g: DVector<f64>,
    blocks: Vec<Option<LandmarkBlock>>,
}

impl Problem {
    pub fn new(camera: PinholeCamera, t_cb: RigidPose, gravity: Vector3<f64>, noise: ImuNoiseModel) -> Self {
        Self {
            states: Vec::new(),
            freedom: Vec::new(),
            landmarks: Vec::new(),
            landmark_free: Vec::new(),
            projections: Vec::new(),
            inertial: Vec::new(),
            priors: Vec::new(),
            camera,
            t_cb,
            gravity,
            noise,
        }
    }

    pub fn add_state(&mut self, state: NavState, freedom: StateFreedom) -> usize {
        self.states.push(state);
        self.freedom.push(freedom);
        self.states.len() - 1
    }

    pub fn add_landmark(&mut self, position: Vector3<f64>, free: bool) -> usize {
        self.landmarks.push(position);
        self.landmark_free.push(free);
        self.landmarks.len() - 1
    }

    pub fn add_projection(&mut self, state: usize, landmark: usize, obs: Observation) {
        self.projections.push(ProjectionTerm { state, landmark, obs });
    }

    pub fn add_inertial(&mut self, i: usize, j: usize, pre: PreintegratedImu) {
        self.inertial.push(InertialTerm { i, j, pre });
    }

    pub fn add_prior(&mut self, state: usize, prior: MarginalPrior) {
        self.priors.push(PriorTerm { state, prior });
    }

    /// Total robust cost and the number of observations behind the camera.
    pub fn cost(&self) -> (f64, usize) {
        let mut total = 0.0;
        let mut dropped = 0;
        for t in &self.projections {
            match reprojection_residual(
                &self.states[t.state],
                &self.landmarks[t.landmark],
                &t.obs,
                &self.camera,
                &self.t_cb,
            ) {
                Ok(r) => total += reprojection_cost(r.chi2),
                Err(_) => dropped += 1,
            }
        }
        for t in &self.inertial {
            total +=
                imu_residual(&self.states[t.i], &self.states[t.j], &t.pre, &self.gravity, &self.noise).robust_cost();
        }
        for t in &self.priors {
            total += prior_cost(prior_residual(&self.states[t.state], &t.prior).chi2);
        }
        (total, dropped)
    }

    /// Offsets of each free state in the reduced system, and its size.
    pub fn state_offsets(&self) -> (Vec<Option<usize>>, usize) {
        let mut n = 0;
        let offsets = self
            .freedom
            .iter()
            .map(|f| {
                let d = f.dims().len();
                if d == 0 {
                    None
                } else {
                    n += d;
                    Some(n - d)
                }
            })
            .collect();
        (offsets, n)
    }

    fn linearize(&self) -> Linearization {
        let (offsets, n) = self.state_offsets();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        let mut blocks: Vec<Option<LandmarkBlock>> = self
            .landmark_free
            .iter()
            .map(|&f| {
                f.then(|| LandmarkBlock {
                    hll: Matrix3::zeros(),
                    gl: Vector3::zeros(),
                    coupling: Vec::new(),
                })
            })
            .collect();

        for t in &self.projections {
            let Ok(r) = reprojection_residual(
                &self.states[t.state],
                &self.landmarks[t.landmark],
                &t.obs,
                &self.camera,
                &self.t_cb,
            ) else {
                continue;
            };
            let w = t.obs.info * r.weight;
            let jtw = r.jac_state.transpose() * w;
            self.scatter(&mut h, &offsets, t.state, t.state, &(jtw * r.jac_state));
            self.scatter_vec(&mut g, &offsets, t.state, &(jtw * r.residual));
            if let Some(b) = blocks[t.landmark].as_mut() {
                let ltw = r.jac_landmark.transpose() * w;
                b.hll += ltw * r.jac_landmark;
                b.gl += ltw * r.residual;
                if offsets[t.state].is_some() {
                    let c = jtw * r.jac_landmark;
                    match b.coupling.iter_mut().find(|(s, _)| *s == t.state) {
                        Some((_, m)) => *m += c,
                        None => b.coupling.push((t.state, c)),
                    }
                }
            }
        }

        for t in &self.inertial {
            let r = imu_residual(&self.states[t.i], &self.states[t.j], &t.pre, &self.gravity, &self.noise);
            let w = r.weighted_information();
            let jis = [(t.i, r.jac_i), (t.j, r.jac_j)];
            for (a, ja) in &jis {
                let jtw = ja.transpose() * w;
                self.scatter_vec(&mut g, &offsets, *a, &(jtw * r.residual));
                for (b, jb) in &jis {
                    self.scatter(&mut h, &offsets, *a, *b, &(jtw * jb));
                }
            }
        }

        for t in &self.priors {
            let r = prior_residual(&self.states[t.state], &t.prior);
            let jtw = r.jacobian.transpose() * t.prior.information * r.weight;
            self.scatter(&mut h, &offsets, t.state, t.state, &(jtw * r.jacobian));
            self.scatter_vec(&mut g, &offsets, t.state, &(jtw * r.residual));
        }

        Linearization { offsets, h, g, blocks }
    }

    fn scatter(&self, h: &mut DMatrix<f64>, offsets: &[Option<usize>], a: usize, b: usize, blk: &Matrix15) {
        let (Some(oa), Some(ob)) = (offsets[a], offsets[b]) else {
            return;
        };
        for (ra, &da) in self.freedom[a].dims().iter().enumerate() {
            for (rb, &db) in self.freedom[b].dims().iter().enumerate() {
                h[(oa + ra, ob + rb)] += blk[(da, db)];
            }
        }
    }

    fn scatter_vec(&self, g: &mut DVector<f64>, offsets: &[Option<usize>], a: usize, v: &NavVector) {
        let Some(oa) = offsets[a] else {
            return;
        };
        for (ra, &da) in self.freedom[a].dims().iter().enumerate() {
            g[oa + ra] += v[da];
        }
    }

    /// Reduced state system `(S, b)` with landmarks eliminated, plus each
    /// landmark's inverse Hessian block.
    fn reduce(&self, lin: &Linearization) -> (DMatrix<f64>, DVector<f64>, Vec<Option<Matrix3<f64>>>) {
        let mut s = lin.h.clone();
        let mut b = lin.g.clone();
        let mut inverses = Vec::with_capacity(lin.blocks.len());
        for blk in &lin.blocks {
            let Some(blk) = blk else {
                inverses.push(None);
                continue;
            };
            let inv = invert_landmark_block(&blk.hll);
            for (sa, wa) in &blk.coupling {
                let wa_inv = wa * inv;
                let oa = lin.offsets[*sa].unwrap();
                let da = self.freedom[*sa].dims();
                let gv = wa_inv * blk.gl;
                for (ra, &ia) in da.iter().enumerate() {
                    b[oa + ra] -= gv[ia];
                }
                for (sb, wb) in &blk.coupling {
                    let ob = lin.offsets[*sb].unwrap();
                    let db = self.freedom[*sb].dims();
                    let m = wa_inv * wb.transpose();
                    for (ra, &ia) in da.iter().enumerate() {
                        for (rb, &ib) in db.iter().enumerate() {
                            s[(oa + ra, ob + rb)] -= m[(ia, ib)];
                        }
                    }
                }
            }
            inverses.push(Some(inv));
        }
        (s, b, inverses)
    }

    /// Gauss-Newton Hessian of the free states at the current estimate, with
    /// free landmarks marginalized out. Rows follow [`Problem::state_offsets`].
    pub fn state_hessian(&self) -> DMatrix<f64> {
        let lin = self.linearize();
        let (s, _, _) = self.reduce(&lin);
        0.5 * (&s + s.transpose())
    }

    fn gauss_newton_step(&self) -> Result<(Vec<NavVector>, Vec<Vector3<f64>>)> {
        let lin = self.linearize();
        let (s, b, inverses) = self.reduce(&lin);
        let dx = solve_spd(s, -b)?;

        let mut state_steps = vec![NavVector::zeros(); self.states.len()];
        for (k, off) in lin.offsets.iter().enumerate() {
            if let Some(o) = off {
                for (r, &d) in self.freedom[k].dims().iter().enumerate() {
                    state_steps[k][d] = dx[o + r];
                }
            }
        }
        let mut lm_steps = vec![Vector3::zeros(); self.landmarks.len()];
        for (l, blk) in lin.blocks.iter().enumerate() {
            let (Some(blk), Some(inv)) = (blk, inverses[l]) else {
                continue;
            };
            let mut rhs = -blk.gl;
            for (sa, wa) in &blk.coupling {
                rhs -= wa.transpose() * state_steps[*sa];
            }
            lm_steps[l] = inv * rhs;
        }
        Ok((state_steps, lm_steps))
    }

    fn apply(&mut self, states: &[NavState], lms: &[Vector3<f64>], ds: &[NavVector], dl: &[Vector3<f64>], alpha: f64) {
        for k in 0..self.states.len() {
            match self.freedom[k] {
                StateFreedom::Fixed => {}
                StateFreedom::Full => self.states[k] = states[k].retract(&(ds[k] * alpha)),
                StateFreedom::VelocityBias => {
                    // additive only, so the held pose stays bit-identical
                    let mut s = states[k];
                    let d = ds[k] * alpha;
                    s.velocity += d.fixed_rows::<3>(idx::VEL);
                    s.bias.gyro += d.fixed_rows::<3>(idx::BG);
                    s.bias.accel += d.fixed_rows::<3>(idx::BA);
                    self.states[k] = s;
                }
            }
        }
        for l in 0..self.landmarks.len() {
            if self.landmark_free[l] {
                self.landmarks[l] = lms[l] + dl[l] * alpha;
            }
        }
    }

    /// Gauss-Newton with step halving. Fixed states and landmarks are never
    /// written, and the robust cost never increases between accepted iterations.
    pub fn solve(&mut self, opts: &SolverOptions) -> Result<SolveReport> {
        let (initial_cost, _) = self.cost();
        let mut report = SolveReport {
            initial_cost,
            final_cost: initial_cost,
            cost_history: vec![initial_cost],
            ..SolveReport::default()
        };
        if self.state_offsets().1 == 0 && !self.landmark_free.iter().any(|&f| f) {
            report.converged = true;
            return Ok(report);
        }
        let mut cost = initial_cost;
        let mut rising = 0;
        for _ in 0..opts.max_iterations {
            let (ds, dl) = self.gauss_newton_step()?;
            let max_step = ds
                .iter()
                .map(|d| d.amax())
                .chain(dl.iter().map(|d| d.amax()))
                .fold(0.0, f64::max);
            if !max_step.is_finite() {
                return Err(Error::NumericalFailure("non-finite Gauss-Newton step".into()));
            }
            report.iterations += 1;
            if max_step < opts.step_tolerance {
                report.converged = true;
                break;
            }
            let saved_states = self.states.clone();
            let saved_lms = self.landmarks.clone();
            let mut alpha = 1.0;
            let mut accepted = None;
            for h in 0..=opts.max_halvings {
                self.apply(&saved_states, &saved_lms, &ds, &dl, alpha);
                let (c, _) = self.cost();
                if h == 0 && c > cost {
                    rising += 1;
                } else if h == 0 {
                    rising = 0;
                }
                if c <= cost {
                    accepted = Some(c);
                    break;
                }
                alpha *= 0.5;
            }
            let Some(c) = accepted else {
                self.states = saved_states;
                self.landmarks = saved_lms;
                report.converged = true;
                break;
            };
            let decrease = cost - c;
            cost = c;
            report.cost_history.push(c);
            if rising >= opts.divergence_window {
                report.diverged = true;
                break;
            }
            if decrease <= opts.relative_cost_tolerance * cost.max(f64::MIN_POSITIVE)
                || max_step * alpha < opts.step_tolerance
            {
                report.converged = true;
                break;
            }
        }
        let (c, dropped) = self.cost();
        report.final_cost = c;
        report.dropped_observations = dropped;
        Ok(report)
    }
}

fn invert_landmark_block(h: &Matrix3<f64>) -> Matrix3<f64> {
    let mut m = *h;
    let mut damping = 1e-12 * h.trace().abs().max(1e-12);
    for _ in 0..8 {
        if let Some(ch) = m.cholesky() {
            return ch.inverse();
        }
        m = h + Matrix3::identity() * damping;
        damping *= 100.0;
    }
    Matrix3::zeros()
}

/// Solves a symmetric positive (semi)definite system by Cholesky, adding a
/// growing diagonal load when the factorization fails.
pub(crate) fn solve_spd(mut a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(b);
    }
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    let sym = 0.5 * (&a + a.transpose());
    a.copy_from(&sym);
    let mut load = 0.0;
    for _ in 0..8 {
        let mut m = a.clone();
        if load > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += load;
            }
        }
        if let Some(ch) = m.cholesky() {
            let x = ch.solve(&b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        load = if load == 0.0 { 1e-12 * scale } else { load * 100.0 };
    }
    Err(Error::NumericalFailure(
        "normal equations are not positive definite".into(),
    ))
}
