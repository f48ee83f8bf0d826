//! Keyframe map: covisibility, culling, local and full bundle adjustment.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;

use super::camera::{Observation, PinholeCamera};
use super::problem::{Problem, SolveReport, SolverOptions, StateFreedom};
use super::tracking::LandmarkMap;
use crate::error::{Error, Result};
use crate::manifold::RigidPose;
use crate::preintegration::{ImuMeasurement, ImuNoiseModel, PreintegratedImu};
use crate::state::NavState;

/// Default number of keyframes optimized by local BA.
pub const DEFAULT_LOCAL_WINDOW: usize = 10;
/// Largest allowed time between consecutive keyframes of the local window, s.
pub const MAX_LOCAL_GAP: f64 = 0.5;
/// Largest allowed time between any two consecutive keyframes, s.
pub const MAX_GLOBAL_GAP: f64 = 3.0;
/// A keyframe is redundant when this fraction of its points is seen by
/// [`REDUNDANT_OBSERVERS`] other keyframes.
pub const REDUNDANT_FRACTION: f64 = 0.9;
pub const REDUNDANT_OBSERVERS: usize = 3;

#[derive(Clone, Debug)]
pub struct Keyframe {
    pub id: usize,
    pub state: NavState,
    /// Observations of map points; `landmark_id` refers to the graph's map.
    pub observations: Vec<Observation>,
    /// Preintegration from the previous keyframe; `None` for the first.
    pub pre: Option<PreintegratedImu>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CullDecision {
    Keep,
    Discard,
}

/// Keyframes in time order, the landmarks they observe and the IMU stream
/// that links them.
#[derive(Clone, Debug)]
pub struct KeyframeGraph {
    pub keyframes: Vec<Keyframe>,
    pub landmarks: LandmarkMap,
    pub local_window: usize,
    pub camera: PinholeCamera,
    pub t_cb: RigidPose,
    pub gravity: Vector3<f64>,
    pub noise: ImuNoiseModel,
    /// Every IMU sample received so far, used to re-preintegrate after culling.
    pub imu: Vec<ImuMeasurement>,
}

impl KeyframeGraph {
    pub fn new(camera: PinholeCamera, t_cb: RigidPose, gravity: Vector3<f64>, noise: ImuNoiseModel) -> Self {
        Self {
            keyframes: Vec::new(),
            landmarks: LandmarkMap::new(),
            local_window: DEFAULT_LOCAL_WINDOW,
            camera,
            t_cb,
            gravity,
            noise,
            imu: Vec::new(),
        }
    }

    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.keyframes.iter().position(|k| k.id == id)
    }

    pub fn keyframe(&self, id: usize) -> Option<&Keyframe> {
        self.keyframes.iter().find(|k| k.id == id)
    }

    pub fn next_id(&self) -> usize {
        self.keyframes.iter().map(|k| k.id + 1).max().unwrap_or(0)
    }

    /// Appends a keyframe, preintegrating the stored IMU stream from the
    /// previous keyframe at that keyframe's bias.
    pub fn insert_keyframe(&mut self, state: NavState, observations: Vec<Observation>) -> Result<usize> {
        let pre = match self.keyframes.last() {
            Some(prev) => {
                if !(state.timestamp > prev.state.timestamp) {
                    return Err(Error::invalid("keyframes must be inserted in time order"));
                }
                Some(self.preintegrate(&prev.state, state.timestamp)?)
            }
            None => None,
        };
        let id = self.next_id();
        self.keyframes.push(Keyframe {
            id,
            state,
            observations,
            pre,
        });
        Ok(id)
    }

    fn preintegrate(&self, from: &NavState, to: f64) -> Result<PreintegratedImu> {
        PreintegratedImu::from_stream(&self.imu, from.timestamp, to, from.bias, &self.noise)
    }

    /// Keyframe indices observing each landmark.
    pub fn observers(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, kf) in self.keyframes.iter().enumerate() {
            for o in &kf.observations {
                let v = out.entry(o.landmark_id).or_default();
                if v.last() != Some(&k) {
                    v.push(k);
                }
            }
        }
        out
    }

    /// Covisibility weights: number of landmarks shared by each keyframe pair,
    /// keyed by `(smaller id, larger id)`.
    pub fn covisibility(&self) -> BTreeMap<(usize, usize), usize> {
        let mut out = BTreeMap::new();
        for obs in self.observers().values() {
            for (a, &i) in obs.iter().enumerate() {
                for &j in &obs[a + 1..] {
                    let (x, y) = (self.keyframes[i].id, self.keyframes[j].id);
                    *out.entry((x.min(y), x.max(y))).or_insert(0) += 1;
                }
            }
        }
        out
    }

    /// Keyframes sharing at least one landmark with `id`, with the count.
    pub fn covisible(&self, id: usize) -> Vec<(usize, usize)> {
        self.covisibility()
            .into_iter()
            .filter_map(|((a, b), w)| {
                if a == id {
                    Some((b, w))
                } else if b == id {
                    Some((a, w))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Index of the first keyframe of the local window.
    pub fn local_start(&self) -> usize {
        self.keyframes.len().saturating_sub(self.local_window)
    }

    /// Whether culling `id` would be allowed.
    pub fn keyframe_culling_check(&self, id: usize) -> CullDecision {
        let Some(k) = self.index_of(id) else {
            return CullDecision::Keep;
        };
        if k == 0 || k + 1 >= self.keyframes.len() {
            return CullDecision::Keep;
        }
        let kf = &self.keyframes[k];
        if kf.observations.is_empty() {
            return CullDecision::Keep;
        }
        let observers = self.observers();
        let redundant = kf
            .observations
            .iter()
            .filter(|o| observers.get(&o.landmark_id).map_or(0, |v| v.len() - 1) >= REDUNDANT_OBSERVERS)
            .count();
        if (redundant as f64) < REDUNDANT_FRACTION * kf.observations.len() as f64 {
            return CullDecision::Keep;
        }
        let gap = self.keyframes[k + 1].state.timestamp - self.keyframes[k - 1].state.timestamp;
        // the window the gap would fall in after removal
        let in_local = k >= self.local_start().saturating_sub(1);
        let limit = if in_local { MAX_LOCAL_GAP } else { MAX_GLOBAL_GAP };
        if gap > limit {
            return CullDecision::Keep;
        }
        CullDecision::Discard
    }

    /// Removes `id`, re-preintegrating its successor from its predecessor.
    pub fn remove_keyframe(&mut self, id: usize) -> Result<()> {
        let k = self
            .index_of(id)
            .ok_or_else(|| Error::invalid(format!("no keyframe {id}")))?;
        if k + 1 < self.keyframes.len() {
            let pre = match k {
                0 => None,
                _ => Some(self.preintegrate(&self.keyframes[k - 1].state, self.keyframes[k + 1].state.timestamp)?),
            };
            self.keyframes[k + 1].pre = pre;
        }
        self.keyframes.remove(k);
        Ok(())
    }

    /// Evaluates `candidates` in order, each against the graph left by the
    /// previous removals. Returns the ids removed.
    pub fn cull(&mut self, candidates: &[usize]) -> Result<Vec<usize>> {
        let mut removed = Vec::new();
        for &id in candidates {
            if self.keyframe_culling_check(id) == CullDecision::Discard {
                self.remove_keyframe(id)?;
                removed.push(id);
            }
        }
        Ok(removed)
    }

    /// Drops landmarks no keyframe observes.
    pub fn prune_landmarks(&mut self) {
        let seen: BTreeSet<usize> = self
            .keyframes
            .iter()
            .flat_map(|k| k.observations.iter().map(|o| o.landmark_id))
            .collect();
        self.landmarks.retain(|id, _| seen.contains(id));
    }

    /// Builds a problem over the given keyframes (by index) and every
    /// landmark seen twice or more among them.
    fn build_problem(
        &self,
        freedom: &BTreeMap<usize, StateFreedom>,
        inertial_from: usize,
        free_landmarks: &BTreeSet<usize>,
    ) -> (Problem, BTreeMap<usize, usize>, BTreeMap<usize, usize>) {
        let mut p = Problem::new(self.camera, self.t_cb, self.gravity, self.noise);
        let mut state_of = BTreeMap::new();
        for (&k, &f) in freedom {
            state_of.insert(k, p.add_state(self.keyframes[k].state, f));
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &k in freedom.keys() {
            for o in &self.keyframes[k].observations {
                if free_landmarks.contains(&o.landmark_id) {
                    *counts.entry(o.landmark_id).or_insert(0) += 1;
                }
            }
        }
        let mut lm_of = BTreeMap::new();
        for (&id, &n) in &counts {
            if n >= 2 {
                if let Some(x) = self.landmarks.get(&id) {
                    lm_of.insert(id, p.add_landmark(*x, true));
                }
            }
        }
        for (&k, &s) in &state_of {
            for o in &self.keyframes[k].observations {
                if let Some(&l) = lm_of.get(&o.landmark_id) {
                    p.add_projection(s, l, *o);
                }
            }
        }
        for (&k, &s) in &state_of {
            if k <= inertial_from {
                continue;
            }
            let (Some(&prev), Some(pre)) = (state_of.get(&(k - 1)), &self.keyframes[k].pre) else {
                continue;
            };
            p.add_inertial(prev, s, pre.clone());
        }
        (p, state_of, lm_of)
    }

    fn write_back(&mut self, p: &Problem, state_of: &BTreeMap<usize, usize>, lm_of: &BTreeMap<usize, usize>) {
        for (&k, &s) in state_of {
            if p.freedom[s] != StateFreedom::Fixed {
                self.keyframes[k].state = p.states[s];
            }
        }
        for (&id, &l) in lm_of {
            self.landmarks.insert(id, p.landmarks[l]);
        }
    }

    /// Optimizes the last `local_window` keyframes and their landmarks.
    ///
    /// Keyframes outside the window that share landmarks with it, and the
    /// keyframe just before it, contribute residuals but stay fixed. The
    /// window's oldest keyframe is tied to that preceding keyframe by its IMU
    /// term. If the window reaches the first keyframe, its pose is held.
    pub fn local_bundle_adjustment(&mut self, max_iterations: usize) -> Result<SolveReport> {
        if self.keyframes.len() < 2 {
            return Ok(SolveReport::default());
        }
        let start = self.local_start();
        let local: BTreeSet<usize> = (start..self.keyframes.len()).collect();
        let free_landmarks: BTreeSet<usize> = local
            .iter()
            .flat_map(|&k| self.keyframes[k].observations.iter().map(|o| o.landmark_id))
            .collect();
        let mut freedom = BTreeMap::new();
        for &k in &local {
            freedom.insert(k, StateFreedom::Full);
        }
        if start == 0 {
            freedom.insert(0, StateFreedom::VelocityBias);
        } else {
            freedom.insert(start - 1, StateFreedom::Fixed);
            for (k, kf) in self.keyframes[..start - 1].iter().enumerate() {
                if kf.observations.iter().any(|o| free_landmarks.contains(&o.landmark_id)) {
                    freedom.insert(k, StateFreedom::Fixed);
                }
            }
        }
        let inertial_from = start.saturating_sub(1);
        let (mut p, state_of, lm_of) = self.build_problem(&freedom, inertial_from, &free_landmarks);
        let report = p.solve(&SolverOptions::with_max_iterations(max_iterations))?;
        self.write_back(&p, &state_of, &lm_of);
        Ok(report)
    }

    /// Optimizes every keyframe state and landmark; the first keyframe's pose
    /// is held, which also fixes the yaw gauge.
    pub fn full_bundle_adjustment(&mut self, max_iterations: usize) -> Result<SolveReport> {
        if self.keyframes.is_empty() {
            return Ok(SolveReport::default());
        }
        let mut freedom = BTreeMap::new();
        freedom.insert(0, StateFreedom::VelocityBias);
        for k in 1..self.keyframes.len() {
            freedom.insert(k, StateFreedom::Full);
        }
        let all: BTreeSet<usize> = self.landmarks.keys().copied().collect();
        let (mut p, state_of, lm_of) = self.build_problem(&freedom, 0, &all);
        let report = p.solve(&SolverOptions::with_max_iterations(max_iterations))?;
        self.write_back(&p, &state_of, &lm_of);
        Ok(report)
    }

    /// Largest time between consecutive keyframes.
    pub fn max_gap(&self) -> f64 {
        self.keyframes
            .windows(2)
            .map(|w| w[1].state.timestamp - w[0].state.timestamp)
            .fold(0.0, f64::max)
    }
}
