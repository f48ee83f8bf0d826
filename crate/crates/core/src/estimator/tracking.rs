//! Frame tracking with IMU constraints and two-frame marginalization.
//!
//! After the map changes, a frame is optimized against the last keyframe,
//! which is held fixed. Until the next map change each new frame is optimized
//! jointly with the previous one, whose prior comes from the step before, and
//! the previous frame is then marginalized into a prior on the new one.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector3};

use super::camera::{Observation, PinholeCamera};
use super::factors::{MarginalPrior, Matrix15};
use super::problem::{solve_spd, Problem, SolveReport, SolverOptions, StateFreedom};
use crate::error::{Error, Result};
use crate::manifold::RigidPose;
use crate::preintegration::{ImuNoiseModel, PreintegratedImu};
use crate::state::{NavState, NAV_DIM};

/// Map points by id, held fixed while tracking.
pub type LandmarkMap = BTreeMap<usize, Vector3<f64>>;

/// Fewer usable observations than this loses tracking.
pub const MIN_TRACKING_OBSERVATIONS: usize = 6;

/// Sensor setup and solver settings shared by the tracking calls.
#[derive(Clone, Copy, Debug)]
pub struct TrackingContext {
    pub camera: PinholeCamera,
    pub t_cb: RigidPose,
    pub gravity: Vector3<f64>,
    pub noise: ImuNoiseModel,
    pub options: SolverOptions,
}

impl TrackingContext {
    pub fn new(camera: PinholeCamera, t_cb: RigidPose, gravity: Vector3<f64>, noise: ImuNoiseModel) -> Self {
        Self {
            camera,
            t_cb,
            gravity,
            noise,
            options: SolverOptions::with_max_iterations(10),
        }
    }

    fn problem(&self) -> Problem {
        Problem::new(self.camera, self.t_cb, self.gravity, self.noise)
    }
}

/// Result of [`optimize_frame_to_keyframe`].
#[derive(Clone, Debug)]
pub struct TrackingResult {
    pub state: NavState,
    /// Gauss-Newton Hessian of the frame at the optimum; used as its prior.
    pub hessian: Matrix15,
    pub report: SolveReport,
    pub used_observations: usize,
}

impl TrackingResult {
    pub fn prior(&self) -> MarginalPrior {
        MarginalPrior {
            mean: self.state,
            information: self.hessian,
        }
    }
}

/// Result of [`optimize_frame_pair_with_prior`].
#[derive(Clone, Debug)]
pub struct PairResult {
    /// Smoothed estimate of the previous frame.
    pub previous: NavState,
    pub current: NavState,
    /// Prior on `current` after marginalizing the previous frame.
    pub prior: MarginalPrior,
    pub report: SolveReport,
    pub used_observations: usize,
}

/// Adds the observations whose landmark is in `map` and in front of the
/// camera at the state's current estimate. Returns how many were added.
fn add_observations(problem: &mut Problem, state: usize, observations: &[Observation], map: &LandmarkMap) -> usize {
    let pose = problem.states[state].pose();
    let world_to_cam = problem.t_cb * pose.inverse();
    let mut used = 0;
    for obs in observations {
        let Some(x) = map.get(&obs.landmark_id) else {
            continue;
        };
        if world_to_cam.transform_point(x).z <= super::camera::MIN_DEPTH {
            continue;
        }
        let l = problem.add_landmark(*x, false);
        problem.add_projection(state, l, *obs);
        used += 1;
    }
    used
}

fn require_observations(used: usize, timestamp: f64) -> Result<()> {
    if used < MIN_TRACKING_OBSERVATIONS {
        return Err(Error::TrackingLost {
            timestamp,
            usable: used,
        });
    }
    Ok(())
}

fn to_matrix15(h: &DMatrix<f64>, offset: usize) -> Matrix15 {
    Matrix15::from_fn(|r, c| h[(offset + r, offset + c)])
}

/// Optimizes `frame` against the fixed `keyframe`, linked by `pre`, with
/// every map point held fixed. `frame` is the initial guess.
pub fn optimize_frame_to_keyframe(
    ctx: &TrackingContext,
    keyframe: &NavState,
    frame: &NavState,
    observations: &[Observation],
    pre: &PreintegratedImu,
    map: &LandmarkMap,
) -> Result<TrackingResult> {
    let mut p = ctx.problem();
    let kf = p.add_state(*keyframe, StateFreedom::Fixed);
    let fr = p.add_state(*frame, StateFreedom::Full);
    let used = add_observations(&mut p, fr, observations, map);
    require_observations(used, frame.timestamp)?;
    p.add_inertial(kf, fr, pre.clone());
    let report = p.solve(&ctx.options)?;
    let hessian = to_matrix15(&p.state_hessian(), 0);
    Ok(TrackingResult {
        state: p.states[fr],
        hessian,
        report,
        used_observations: used,
    })
}

/// Joint optimization of the previous frame (with its prior) and the current
/// frame, followed by marginalization of the previous frame.
pub fn optimize_frame_pair_with_prior(
    ctx: &TrackingContext,
    previous: &NavState,
    prior: &MarginalPrior,
    current: &NavState,
    observations: &[Observation],
    pre: &PreintegratedImu,
    map: &LandmarkMap,
) -> Result<PairResult> {
    prior.validate()?;
    let mut p = ctx.problem();
    let a = p.add_state(*previous, StateFreedom::Full);
    let b = p.add_state(*current, StateFreedom::Full);
    let used = add_observations(&mut p, b, observations, map);
    require_observations(used, current.timestamp)?;
    p.add_prior(a, *prior);
    p.add_inertial(a, b, pre.clone());
    let report = p.solve(&ctx.options)?;
    let h = p.state_hessian();
    let information = marginalize_leading(&h, NAV_DIM)?;
    Ok(PairResult {
        previous: p.states[a],
        current: p.states[b],
        prior: MarginalPrior::new(p.states[b], information)?,
        report,
        used_observations: used,
    })
}

/// Schur complement eliminating the first `k` variables of `h`, returned as
/// the 15×15 information of the trailing state.
pub fn marginalize_leading(h: &DMatrix<f64>, k: usize) -> Result<Matrix15> {
    let n = h.nrows();
    if n != k + NAV_DIM {
        return Err(Error::invalid(format!(
            "expected a {}×{} Hessian, got {n}×{n}",
            k + NAV_DIM,
            k + NAV_DIM
        )));
    }
    let hmm = h.view((0, 0), (k, k)).into_owned();
    let hmr = h.view((0, k), (k, NAV_DIM)).into_owned();
    let hrr = h.view((k, k), (NAV_DIM, NAV_DIM)).into_owned();
    let mut x = DMatrix::zeros(k, NAV_DIM);
    for c in 0..NAV_DIM {
        let col = solve_spd(hmm.clone(), hmr.column(c).into_owned())?;
        x.set_column(c, &col);
    }
    let s = hrr - hmr.transpose() * x;
    let s = 0.5 * (&s + s.transpose());
    Ok(Matrix15::from_fn(|r, c| s[(r, c)]))
}

/// One frame of a tracked sequence.
#[derive(Clone, Debug)]
pub struct SequenceFrame {
    pub observations: Vec<Observation>,
    /// Preintegration from the previous frame (or the keyframe) to this one.
    pub pre: PreintegratedImu,
}

/// Runs the two-frame sliding estimator from a fixed keyframe over `frames`,
/// seeding each frame with the IMU prediction. Returns every frame's
/// estimate at the time it was the newest.
pub fn track_sequence(
    ctx: &TrackingContext,
    keyframe: &NavState,
    frames: &[SequenceFrame],
    map: &LandmarkMap,
) -> Result<Vec<NavState>> {
    let mut out = Vec::with_capacity(frames.len());
    let mut last: Option<(NavState, MarginalPrior)> = None;
    for f in frames {
        let next = match &last {
            None => {
                let guess = crate::preintegration::predict(keyframe, &f.pre, &ctx.gravity);
                let r = optimize_frame_to_keyframe(ctx, keyframe, &guess, &f.observations, &f.pre, map)?;
                (r.state, r.prior())
            }
            Some((prev, prior)) => {
                let guess = crate::preintegration::predict(prev, &f.pre, &ctx.gravity);
                let r = optimize_frame_pair_with_prior(ctx, prev, prior, &guess, &f.observations, &f.pre, map)?;
                (r.current, r.prior)
            }
        };
        out.push(next.0);
        last = Some(next);
    }
    Ok(out)
}

/// Batch optimization of every frame in `frames` jointly, from the same
/// fixed keyframe and with the same terms as [`track_sequence`].
pub fn optimize_sequence_batch(
    ctx: &TrackingContext,
    keyframe: &NavState,
    frames: &[SequenceFrame],
    map: &LandmarkMap,
    initial: &[NavState],
    options: &SolverOptions,
) -> Result<(Vec<NavState>, SolveReport)> {
    if initial.len() != frames.len() {
        return Err(Error::invalid("one initial state per frame is required"));
    }
    let mut p = ctx.problem();
    let mut prev = p.add_state(*keyframe, StateFreedom::Fixed);
    for (f, s) in frames.iter().zip(initial) {
        let cur = p.add_state(*s, StateFreedom::Full);
        let used = add_observations(&mut p, cur, &f.observations, map);
        require_observations(used, s.timestamp)?;
        p.add_inertial(prev, cur, f.pre.clone());
        prev = cur;
    }
    let report = p.solve(options)?;
    Ok((p.states[1..].to_vec(), report))
}
