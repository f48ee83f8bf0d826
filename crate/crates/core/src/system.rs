//! The tracking, local mapping and loop closing stages run as one
//! deterministic sequential pipeline.
//!
//! Frames carry observations keyed by a feature identity (for simulated data,
//! the true landmark id). The map stores landmark *instances*: a feature that
//! is re-observed after leaving the local map gets a new instance, exactly as
//! a map without place recognition would create a duplicate point. Loop
//! detection counts duplicates of old instances; loop closing aligns them,
//! optimizes the pose graph and fuses them back into the old instances.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataio::SequenceData;
use crate::error::{Error, Result};
use crate::estimator::camera::Observation;
use crate::estimator::factors::{MarginalPrior, Matrix15};
use crate::estimator::graph::{KeyframeGraph, DEFAULT_LOCAL_WINDOW};
use crate::estimator::pose_graph::{
    correct_velocities_after_loop, odometry_edges, pose_graph_optimize, rigid_alignment, PoseGraphEdge,
};
use crate::estimator::problem::{Problem, SolveReport, SolverOptions, StateFreedom};
use crate::estimator::tracking::{
    optimize_frame_pair_with_prior, optimize_frame_to_keyframe, LandmarkMap, TrackingContext,
};
use crate::estimator::triangulation::{triangulate, MIN_PARALLAX};
use crate::initializer::{
    gravity_rotation, run_full_initialization, InitializationInput, InitializationResult, InitializerConfig,
    KeyframeVisualPose,
};
use crate::manifold::{RigidPose, Rotation};
use crate::preintegration::{predict, PreintegratedImu};
use crate::state::{idx, ImuBias, NavState, StampedPose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// mapping with loop closing
    Slam,
    /// mapping without loop closing
    Odometry,
    /// mapping until the first loop closure, then tracking against the frozen map
    LocalizationOnly,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Slam => "slam",
            RunMode::Odometry => "odometry",
            RunMode::LocalizationOnly => "localization-only",
        })
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slam" => Ok(RunMode::Slam),
            "odometry" => Ok(RunMode::Odometry),
            "localization-only" => Ok(RunMode::LocalizationOnly),
            _ => Err(Error::invalid(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub mode: RunMode,
    /// Length of the initialization window from the first frame, s.
    pub init_window: f64,
    /// Frames between keyframes.
    pub keyframe_interval: usize,
    /// A keyframe is also inserted when fewer map points than this are tracked.
    pub min_tracked_points: usize,
    /// Keyframes optimized by local BA.
    pub local_window: usize,
    /// Recent keyframes whose points form the local map, besides covisible ones.
    pub map_window: usize,
    /// Shared points making two keyframes covisible for the local map.
    pub covisibility_threshold: usize,
    pub local_ba_iterations: usize,
    /// Run a full BA once the sequence ends.
    pub full_ba: bool,
    pub full_ba_iterations: usize,
    /// Full BA iterations right after initialization.
    pub init_ba_iterations: usize,
    /// Full BA iterations after each loop closure.
    pub loop_ba_iterations: usize,
    pub loop_min_shared: usize,
    /// s
    pub loop_min_time_gap: f64,
    pub initializer: InitializerConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Slam,
            init_window: 15.0,
            keyframe_interval: 5,
            min_tracked_points: 30,
            local_window: DEFAULT_LOCAL_WINDOW,
            map_window: DEFAULT_LOCAL_WINDOW,
            covisibility_threshold: 15,
            local_ba_iterations: 10,
            full_ba: false,
            full_ba_iterations: 100,
            init_ba_iterations: 20,
            loop_ba_iterations: 20,
            loop_min_shared: 20,
            loop_min_time_gap: 10.0,
            initializer: InitializerConfig::default(),
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_window > 0.0) {
            return Err(Error::invalid("init_window must be positive"));
        }
        if self.keyframe_interval == 0 || self.local_window < 2 || self.map_window == 0 {
            return Err(Error::invalid(
                "keyframe_interval, map_window must be ≥ 1 and local_window ≥ 2",
            ));
        }
        if !(self.loop_min_time_gap >= 0.0) {
            return Err(Error::invalid("loop_min_time_gap must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopClosure {
    pub query_keyframe: usize,
    pub matched_keyframe: usize,
    /// s
    pub timestamp: f64,
    /// duplicated points used for the alignment
    pub matched_points: usize,
    /// m, translation of the query keyframe's correction
    pub correction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingLoss {
    /// s
    pub timestamp: f64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub mode: RunMode,
    pub initialization: InitializationResult,
    /// Final keyframe states, oldest first.
    pub keyframes: Vec<NavState>,
    /// Every tracked frame as estimated when it was the newest.
    pub frames: Vec<NavState>,
    pub loops: Vec<LoopClosure>,
    pub tracking_lost: Option<TrackingLoss>,
    /// Time the map was frozen in localization-only mode.
    pub frozen_at: Option<f64>,
    pub full_ba: Option<SolveReport>,
    pub landmarks: usize,
}

impl RunResult {
    /// The trajectory to evaluate: the keyframes, followed in localization-only
    /// mode by the frames tracked against the frozen map at keyframe spacing.
    pub fn trajectory(&self, keyframe_interval: usize) -> Vec<StampedPose> {
        let mut out: Vec<StampedPose> = self.keyframes.iter().map(StampedPose::from).collect();
        if let Some(t0) = self.frozen_at {
            let after = self.frames.iter().filter(|s| s.timestamp > t0);
            out.extend(after.step_by(keyframe_interval.max(1)).map(StampedPose::from));
        }
        out
    }
}

/// Keyframes that must observe both instances of a duplicate before it
/// takes part in loop detection and alignment.
pub const LOOP_MIN_OBSERVERS: usize = 3;
const LOOP_ALIGNMENT_ROUNDS: usize = 5;
const LOOP_INLIER_FACTOR: f64 = 2.5;
/// Information pinning the non-pose states during the loop pose refinement.
const PINNED_INFORMATION: f64 = 1e12;

/// Instance bookkeeping on top of the keyframe graph.
struct Map {
    graph: KeyframeGraph,
    /// instance id → feature id
    feature_of: BTreeMap<usize, usize>,
    /// feature id → instance ids, oldest first
    instances: BTreeMap<usize, Vec<usize>>,
    /// instance id → keyframe id whose correction moves it
    anchor: BTreeMap<usize, usize>,
    next_instance: usize,
    /// Observations of features with no instance yet, per keyframe id.
    pending: BTreeMap<usize, Vec<Observation>>,
    /// (older keyframe id, newer keyframe id, relative pose)
    loop_edges: Vec<(usize, usize, RigidPose)>,
    frozen: bool,
}

/// Tracking view of the map: positions keyed by instance and the instance
/// each feature resolves to.
struct LocalMap {
    points: LandmarkMap,
    instance_of: BTreeMap<usize, usize>,
}

impl LocalMap {
    fn resolve(&self, observations: &[Observation]) -> Vec<Observation> {
        observations
            .iter()
            .filter_map(|o| {
                self.instance_of
                    .get(&o.landmark_id)
                    .map(|&i| Observation { landmark_id: i, ..*o })
            })
            .collect()
    }
}

impl Map {
    fn new_instance(&mut self, feature: usize, position: Vector3<f64>, anchor: usize) -> usize {
        let id = self.next_instance;
        self.next_instance += 1;
        self.feature_of.insert(id, feature);
        self.instances.entry(feature).or_default().push(id);
        self.anchor.insert(id, anchor);
        self.graph.landmarks.insert(id, position);
        id
    }

    fn camera_from_world(&self, state: &NavState) -> RigidPose {
        self.graph.t_cb * state.pose().inverse()
    }

    /// Triangulates every pending feature of `keyframes` seen in two or more
    /// of them, moving the used observations into the keyframes.
    fn triangulate_pending(&mut self, keyframes: &[usize]) {
        let mut views: BTreeMap<usize, Vec<(usize, Observation)>> = BTreeMap::new();
        for &kf in keyframes {
            for o in self.pending.get(&kf).into_iter().flatten() {
                views.entry(o.landmark_id).or_default().push((kf, *o));
            }
        }
        for (feature, seen) in views {
            if seen.len() < 2 {
                continue;
            }
            let rays: Vec<(RigidPose, nalgebra::Vector2<f64>)> = seen
                .iter()
                .map(|(kf, o)| {
                    let state = &self.graph.keyframe(*kf).expect("pending keyframe exists").state;
                    (self.camera_from_world(state), o.keypoint)
                })
                .collect();
            let Ok(x) = triangulate(&rays, &self.graph.camera, MIN_PARALLAX) else {
                continue;
            };
            let inst = self.new_instance(feature, x, seen[0].0);
            for (kf, o) in seen {
                if let Some(p) = self.pending.get_mut(&kf) {
                    p.retain(|q| q.landmark_id != feature);
                }
                let k = self.graph.index_of(kf).expect("pending keyframe exists");
                self.graph.keyframes[k]
                    .observations
                    .push(Observation { landmark_id: inst, ..o });
            }
        }
    }

    /// Keyframe indices whose points make up the local map of the newest one.
    fn local_keyframes(&self, map_window: usize, threshold: usize) -> BTreeSet<usize> {
        let n = self.graph.keyframes.len();
        let mut out: BTreeSet<usize> = (n.saturating_sub(map_window)..n).collect();
        if n == 0 {
            return out;
        }
        let observers = self.graph.observers();
        let shared_with = |k: usize| {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for o in &self.graph.keyframes[k].observations {
                for &j in observers.get(&o.landmark_id).into_iter().flatten() {
                    if j != k {
                        *counts.entry(j).or_insert(0) += 1;
                    }
                }
            }
            counts.into_iter().filter(|&(_, c)| c >= threshold).map(|(j, _)| j)
        };
        let first: BTreeSet<usize> = shared_with(n - 1).collect();
        for &k in &first {
            out.extend(shared_with(k));
        }
        out.extend(first);
        out
    }

    fn local_map(&self, cfg: &SystemConfig) -> LocalMap {
        let mut instance_of = BTreeMap::new();
        if self.frozen {
            for (&feature, list) in &self.instances {
                if let Some(&i) = list.iter().find(|i| self.graph.landmarks.contains_key(i)) {
                    instance_of.insert(feature, i);
                }
            }
        } else {
            for k in self.local_keyframes(cfg.map_window, cfg.covisibility_threshold) {
                for o in &self.graph.keyframes[k].observations {
                    let feature = self.feature_of[&o.landmark_id];
                    let e = instance_of.entry(feature).or_insert(o.landmark_id);
                    *e = (*e).min(o.landmark_id);
                }
            }
        }
        let points = instance_of
            .values()
            .filter_map(|i| self.graph.landmarks.get(i).map(|x| (*i, *x)))
            .collect();
        LocalMap { points, instance_of }
    }

    /// Appends a keyframe, resolving its observations against `local`.
    fn insert_keyframe(
        &mut self,
        state: NavState,
        raw: &[Observation],
        local: &LocalMap,
        cfg: &SystemConfig,
    ) -> Result<usize> {
        let (mapped, unmapped): (Vec<_>, Vec<_>) =
            raw.iter().partition(|o| local.instance_of.contains_key(&o.landmark_id));
        let id = self.graph.insert_keyframe(state, local.resolve(&mapped))?;
        self.pending.insert(id, unmapped);
        let n = self.graph.keyframes.len();
        let recent: Vec<usize> = self.graph.keyframes[n.saturating_sub(cfg.map_window)..]
            .iter()
            .map(|k| k.id)
            .collect();
        self.triangulate_pending(&recent);
        let oldest = recent[0];
        self.pending.retain(|&kf, _| kf >= oldest);
        Ok(id)
    }

    /// Removes redundant keyframes of the local window (never the newest) and
    /// the points no keyframe observes any more.
    fn cull(&mut self) -> Result<()> {
        let n = self.graph.keyframes.len();
        let candidates: Vec<usize> = self.graph.keyframes[self.graph.local_start()..n.saturating_sub(1)]
            .iter()
            .map(|k| k.id)
            .collect();
        for id in self.graph.cull(&candidates)? {
            self.pending.remove(&id);
        }
        self.graph.prune_landmarks();
        let alive = &self.graph.landmarks;
        self.feature_of.retain(|i, _| alive.contains_key(i));
        self.anchor.retain(|i, _| alive.contains_key(i));
        for list in self.instances.values_mut() {
            list.retain(|i| alive.contains_key(i));
        }
        self.instances.retain(|_, l| !l.is_empty());
        Ok(())
    }

    /// (duplicate, original) pairs: a feature's newer instances against its
    /// oldest one.
    fn duplicates(&self) -> Vec<(usize, usize)> {
        self.instances
            .values()
            .filter(|l| l.len() > 1)
            .flat_map(|l| l[1..].iter().map(move |&d| (d, l[0])))
            .collect()
    }

    /// Duplicate pairs whose two instances are both seen by at least
    /// [`LOOP_MIN_OBSERVERS`] keyframes, and so are well triangulated.
    fn reliable_duplicates(&self) -> Vec<(usize, usize)> {
        let observers = self.graph.observers();
        let seen = |i: &usize| observers.get(i).map_or(0, Vec::len) >= LOOP_MIN_OBSERVERS;
        self.duplicates()
            .into_iter()
            .filter(|(d, o)| seen(d) && seen(o))
            .collect()
    }

    /// Keyframe id observing the most originals reliably duplicated by
    /// `query`, among keyframes at least `min_gap` older, with the count.
    fn detect_loop(&self, query: usize, min_gap: f64) -> Option<(usize, usize)> {
        let q = self.graph.keyframe(query)?;
        let reliable: BTreeMap<usize, usize> = self.reliable_duplicates().into_iter().collect();
        let originals: BTreeSet<usize> = q
            .observations
            .iter()
            .filter_map(|o| reliable.get(&o.landmark_id).copied())
            .collect();
        self.graph
            .keyframes
            .iter()
            .filter(|k| k.state.timestamp <= q.state.timestamp - min_gap)
            .map(|k| {
                let shared = k
                    .observations
                    .iter()
                    .filter(|o| originals.contains(&o.landmark_id))
                    .count();
                (k.id, shared)
            })
            .max_by_key(|&(id, shared)| (shared, std::cmp::Reverse(id)))
    }

    /// Rigid alignment of duplicates onto originals, repeated on the pairs
    /// within [`LOOP_INLIER_FACTOR`] times the median residual.
    fn align_duplicates(&self, pairs: &[(usize, usize)]) -> Result<(RigidPose, usize)> {
        let current: Vec<Vector3<f64>> = pairs.iter().map(|(d, _)| self.graph.landmarks[d]).collect();
        let reference: Vec<Vector3<f64>> = pairs.iter().map(|(_, o)| self.graph.landmarks[o]).collect();
        let mut inliers: Vec<usize> = (0..pairs.len()).collect();
        let mut t = RigidPose::identity();
        for _ in 0..LOOP_ALIGNMENT_ROUNDS {
            let c: Vec<_> = inliers.iter().map(|&i| current[i]).collect();
            let r: Vec<_> = inliers.iter().map(|&i| reference[i]).collect();
            t = rigid_alignment(&c, &r)?;
            let residuals: Vec<f64> = current
                .iter()
                .zip(&reference)
                .map(|(c, r)| (t.transform_point(c) - r).norm())
                .collect();
            let mut sorted: Vec<f64> = inliers.iter().map(|&i| residuals[i]).collect();
            sorted.sort_by(f64::total_cmp);
            let limit = LOOP_INLIER_FACTOR * sorted[sorted.len() / 2];
            let next: Vec<usize> = (0..pairs.len()).filter(|&i| residuals[i] <= limit).collect();
            if next == inliers || next.len() < 3 {
                break;
            }
            inliers = next;
        }
        Ok((t, inliers.len()))
    }

    /// Re-estimates the pose of keyframe `k` from its observations of
    /// duplicated points, reprojected through their originals, starting from
    /// `guess`. Velocity and biases are pinned by a stiff prior.
    fn refine_query_pose(&self, k: usize, pairs: &[(usize, usize)], guess: RigidPose) -> Result<RigidPose> {
        let original: BTreeMap<usize, usize> = pairs.iter().copied().collect();
        let g = &self.graph;
        let mut state = g.keyframes[k].state;
        state.rotation = guess.rotation;
        state.position = guess.translation;
        let mut p = Problem::new(g.camera, g.t_cb, g.gravity, g.noise);
        let s = p.add_state(state, StateFreedom::Full);
        for o in &g.keyframes[k].observations {
            if let Some(orig) = original.get(&o.landmark_id) {
                let l = p.add_landmark(g.landmarks[orig], false);
                p.add_projection(s, l, *o);
            }
        }
        let mut info = Matrix15::zeros();
        for i in [idx::VEL, idx::BG, idx::BA] {
            for d in i..i + 3 {
                info[(d, d)] = PINNED_INFORMATION;
            }
        }
        p.add_prior(s, MarginalPrior::new(state, info)?);
        p.solve(&SolverOptions::default())?;
        Ok(p.states[s].pose())
    }

    /// Aligns duplicated points onto their originals, corrects the pose graph
    /// and fuses the duplicates.
    fn close_loop(&mut self, query: usize, matched: usize) -> Result<LoopClosure> {
        let (correction, inliers) = self.align_duplicates(&self.reliable_duplicates())?;
        let pairs = self.duplicates();

        let poses: Vec<RigidPose> = self.graph.keyframes.iter().map(|k| k.state.pose()).collect();
        let iq = self.graph.index_of(query).expect("query keyframe exists");
        let im = self.graph.index_of(matched).expect("matched keyframe exists");
        let corrected_query = self.refine_query_pose(iq, &pairs, correction * poses[iq])?;
        self.loop_edges
            .push((matched, query, poses[im].inverse() * corrected_query));
        let info = Matrix6::identity();
        let sequential = odometry_edges(&poses, info);
        let loops: Vec<PoseGraphEdge> = self
            .loop_edges
            .iter()
            .filter_map(|&(a, b, rel)| {
                Some(PoseGraphEdge {
                    from: self.graph.index_of(a)?,
                    to: self.graph.index_of(b)?,
                    relative: rel,
                    information: info,
                })
            })
            .collect();
        let optimized = pose_graph_optimize(&poses, &sequential, &loops, 0, 20)?;

        let states: Vec<NavState> = self.graph.keyframes.iter().map(|k| k.state).collect();
        let rotations: Vec<Rotation> = optimized.iter().map(|p| p.rotation).collect();
        let states = correct_velocities_after_loop(&states, &rotations)?;
        let deltas: BTreeMap<usize, RigidPose> = self
            .graph
            .keyframes
            .iter()
            .zip(&optimized)
            .map(|(k, new)| (k.id, *new * k.state.pose().inverse()))
            .collect();
        for ((kf, mut s), new) in self.graph.keyframes.iter_mut().zip(states).zip(&optimized) {
            s.rotation = new.rotation;
            s.position = new.translation;
            kf.state = s;
        }
        let observers = self.graph.observers();
        for (inst, x) in self.graph.landmarks.iter_mut() {
            let anchor = self
                .anchor
                .get(inst)
                .copied()
                .filter(|a| deltas.contains_key(a))
                .or_else(|| {
                    observers
                        .get(inst)
                        .and_then(|v| v.first())
                        .map(|&k| self.graph.keyframes[k].id)
                });
            if let Some(d) = anchor.and_then(|a| deltas.get(&a)) {
                *x = d.transform_point(x);
            }
        }

        let fused: BTreeMap<usize, usize> = pairs.iter().copied().collect();
        for kf in &mut self.graph.keyframes {
            for o in &mut kf.observations {
                if let Some(&orig) = fused.get(&o.landmark_id) {
                    o.landmark_id = orig;
                }
            }
        }
        for (d, _) in &pairs {
            self.graph.landmarks.remove(d);
            self.feature_of.remove(d);
            self.anchor.remove(d);
        }
        for list in self.instances.values_mut() {
            list.truncate(1);
        }
        Ok(LoopClosure {
            query_keyframe: query,
            matched_keyframe: matched,
            timestamp: self.graph.keyframes[iq].state.timestamp,
            matched_points: inliers,
            correction: correction.translation.norm(),
        })
    }
}

/// Camera-frame visual poses of every `interval`-th frame in the first
/// `window` seconds.
pub fn initialization_keyframes(data: &SequenceData, window: f64, interval: usize) -> Result<Vec<KeyframeVisualPose>> {
    if data.visual_poses.is_empty() {
        return Err(Error::InsufficientData(
            "the sequence has no visual keyframe poses".into(),
        ));
    }
    let t0 = data.visual_poses[0].timestamp;
    Ok(data
        .visual_poses
        .iter()
        .filter(|v| v.timestamp - t0 <= window + 1e-9)
        .step_by(interval)
        .copied()
        .collect())
}

/// Initial metric keyframe states in a gravity-aligned world frame.
fn metric_states(input: &InitializationInput, init: &InitializationResult) -> Result<Vec<NavState>> {
    let r_wi = gravity_rotation(&init.gravity_w)?;
    let r_iw = r_wi.transpose();
    let r_cb = input.t_cb.rotation;
    let p_cb = input.t_cb.translation;
    Ok(input
        .keyframes
        .iter()
        .zip(&init.velocities)
        .map(|(kf, v)| {
            let r_wb = kf.rotation * r_cb;
            let p_wb = init.scale * kf.position + kf.rotation * p_cb;
            NavState {
                rotation: r_iw * r_wb,
                position: r_iw * p_wb,
                velocity: r_iw * *v,
                bias: init.bias(),
                timestamp: kf.timestamp,
            }
        })
        .collect())
}

/// Runs the whole pipeline over a sequence.
///
/// A tracking loss ends the run early; the result then holds everything
/// estimated up to that point and [`RunResult::tracking_lost`] says when.
pub fn run(data: &SequenceData, cfg: &SystemConfig) -> Result<RunResult> {
    cfg.validate()?;
    let calib = data
        .calibration
        .ok_or_else(|| Error::InsufficientData("the sequence has no calibration".into()))?;
    calib.validate()?;
    let kfs = initialization_keyframes(data, cfg.init_window, cfg.keyframe_interval)?;
    let input = InitializationInput::from_imu(kfs, &data.imu, ImuBias::zero(), &calib.noise, calib.t_cb)?;
    let init = run_full_initialization(&input, &cfg.initializer)?;
    let gravity = Vector3::new(0.0, 0.0, -calib.noise.gravity_magnitude);

    let mut graph = KeyframeGraph::new(calib.camera, calib.t_cb, gravity, calib.noise);
    graph.local_window = cfg.local_window;
    graph.imu = data.imu.clone();
    let mut map = Map {
        graph,
        feature_of: BTreeMap::new(),
        instances: BTreeMap::new(),
        anchor: BTreeMap::new(),
        next_instance: 0,
        pending: BTreeMap::new(),
        loop_edges: Vec::new(),
        frozen: false,
    };
    for (kf, state) in input.keyframes.iter().zip(metric_states(&input, &init)?) {
        let id = map.graph.insert_keyframe(state, Vec::new())?;
        map.pending.insert(id, data.frames[kf.id].observations.clone());
    }
    let all: Vec<usize> = map.graph.keyframes.iter().map(|k| k.id).collect();
    map.triangulate_pending(&all);
    let window: BTreeSet<usize> = all[all.len().saturating_sub(cfg.map_window)..]
        .iter()
        .copied()
        .collect();
    map.pending.retain(|kf, _| window.contains(kf));
    map.graph.full_bundle_adjustment(cfg.init_ba_iterations)?;

    let ctx = TrackingContext::new(calib.camera, calib.t_cb, gravity, calib.noise);
    let mut local = map.local_map(cfg);
    let mut last = map.graph.keyframes.last().expect("initialization keyframes").state;
    let mut prior: Option<MarginalPrior> = None;
    let start = input.keyframes.last().expect("initialization keyframes").id;
    let mut last_keyframe_frame = start;
    let mut frames = Vec::new();
    let mut loops = Vec::new();
    let mut tracking_lost = None;
    let mut frozen_at = None;

    for (f, frame) in data.frames.iter().enumerate().skip(start + 1) {
        let observations = local.resolve(&frame.observations);
        let pre = PreintegratedImu::from_stream(&data.imu, last.timestamp, frame.timestamp, last.bias, &calib.noise)?;
        let guess = NavState {
            timestamp: frame.timestamp,
            ..predict(&last, &pre, &gravity)
        };
        let tracked = match prior {
            Some(p) => optimize_frame_pair_with_prior(&ctx, &last, &p, &guess, &observations, &pre, &local.points)
                .map(|r| (r.current, r.prior, r.used_observations)),
            None => {
                let kf = map.graph.keyframes.last().expect("keyframe").state;
                let pre_kf =
                    PreintegratedImu::from_stream(&data.imu, kf.timestamp, frame.timestamp, kf.bias, &calib.noise)?;
                optimize_frame_to_keyframe(&ctx, &kf, &guess, &observations, &pre_kf, &local.points)
                    .map(|r| (r.state, r.prior(), r.used_observations))
            }
        };
        let (state, next_prior, used) = match tracked {
            Ok(t) => t,
            Err(e @ Error::TrackingLost { .. }) => {
                tracking_lost = Some(TrackingLoss {
                    timestamp: frame.timestamp,
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        frames.push(state);
        last = state;
        prior = Some(next_prior);

        let due = f - last_keyframe_frame >= cfg.keyframe_interval || used < cfg.min_tracked_points;
        if map.frozen || !due {
            continue;
        }
        let id = map.insert_keyframe(state, &frame.observations, &local, cfg)?;
        last_keyframe_frame = f;
        map.graph.local_bundle_adjustment(cfg.local_ba_iterations)?;
        map.cull()?;
        if cfg.mode != RunMode::Odometry {
            if let Some((matched, shared)) = map.detect_loop(id, cfg.loop_min_time_gap) {
                if shared >= cfg.loop_min_shared {
                    loops.push(map.close_loop(id, matched)?);
                    map.graph.full_bundle_adjustment(cfg.loop_ba_iterations)?;
                    if cfg.mode == RunMode::LocalizationOnly {
                        map.frozen = true;
                        frozen_at = Some(frame.timestamp);
                    }
                }
            }
        }
        // any map update invalidates the marginal prior
        prior = None;
        last = map.graph.keyframes.last().expect("keyframe").state;
        local = map.local_map(cfg);
    }

    let full_ba = if cfg.full_ba {
        Some(map.graph.full_bundle_adjustment(cfg.full_ba_iterations)?)
    } else {
        None
    };
    Ok(RunResult {
        mode: cfg.mode,
        initialization: init,
        keyframes: map.graph.keyframes.iter().map(|k| k.state).collect(),
        frames,
        loops,
        tracking_lost,
        frozen_at,
        full_ba,
        landmarks: map.graph.landmarks.len(),
    })
}
