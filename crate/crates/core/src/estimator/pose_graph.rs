//! 6-DoF pose-graph optimization for loop closing.
//!
//! Poses are perturbed like [`NavState`](crate::state::NavState): rotation on
//! the right, translation additively in the world frame. The edge error is the
//! relative transform `T_edge⁻¹ · T_i⁻¹ · T_j`, split into its rotation log and
//! its translation.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, Vector3, Vector6};

use super::problem::solve_spd;
use crate::error::{Error, Result};
use crate::evaluation::align_similarity;
use crate::manifold::{hat, right_jacobian_inv_so3, RigidPose, Rotation};
use crate::state::NavState;

/// Relative-pose constraint `T_from⁻¹ · T_to ≈ relative`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseGraphEdge {
    pub from: usize,
    pub to: usize,
    pub relative: RigidPose,
    /// Ordering `[rotation, translation]`.
    pub information: Matrix6<f64>,
}

impl PoseGraphEdge {
    /// Edge reproducing the current relative pose of `from` and `to`.
    pub fn between(poses: &[RigidPose], from: usize, to: usize, information: Matrix6<f64>) -> Self {
        Self {
            from,
            to,
            relative: poses[from].between(&poses[to]),
            information,
        }
    }
}

/// Sequential edges linking each pose to the next.
pub fn odometry_edges(poses: &[RigidPose], information: Matrix6<f64>) -> Vec<PoseGraphEdge> {
    (1..poses.len())
        .map(|k| PoseGraphEdge::between(poses, k - 1, k, information))
        .collect()
}

type Matrix6x6 = SMatrix<f64, 6, 6>;

/// Error of `edge` and its Jacobians with respect to both poses.
pub fn pose_edge_residual(ti: &RigidPose, tj: &RigidPose, edge: &RigidPose) -> (Vector6<f64>, Matrix6x6, Matrix6x6) {
    let ri = ti.rotation.matrix();
    let rj = tj.rotation.matrix();
    let re_t = edge.rotation.matrix().transpose();
    let e_mat = edge.rotation.transpose() * ti.rotation.transpose() * tj.rotation;
    let e_r = e_mat.log();
    let jr_inv = right_jacobian_inv_so3(&e_r);
    let d = ri.transpose() * (tj.translation - ti.translation);
    let e_t = re_t * (d - edge.translation);

    let mut e = Vector6::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&e_r);
    e.fixed_rows_mut::<3>(3).copy_from(&e_t);
    let mut ji = Matrix6x6::zeros();
    let mut jj = Matrix6x6::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-jr_inv * rj.transpose() * ri));
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);
    ji.fixed_view_mut::<3, 3>(3, 0).copy_from(&(re_t * hat(&d)));
    ji.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-re_t * ri.transpose()));
    jj.fixed_view_mut::<3, 3>(3, 3).copy_from(&(re_t * ri.transpose()));
    (e, ji, jj)
}

fn retract(p: &RigidPose, d: &[f64]) -> RigidPose {
    let phi = Vector3::new(d[0], d[1], d[2]);
    RigidPose::new(
        (p.rotation * Rotation::exp(&phi)).renormalized(),
        p.translation + Vector3::new(d[3], d[4], d[5]),
    )
}

fn cost(poses: &[RigidPose], edges: &[PoseGraphEdge]) -> f64 {
    edges
        .iter()
        .map(|e| {
            let (r, _, _) = pose_edge_residual(&poses[e.from], &poses[e.to], &e.relative);
            (r.transpose() * e.information * r)[0]
        })
        .sum()
}

fn check_connected(n: usize, edges: &[PoseGraphEdge]) -> Result<()> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        if e.from >= n || e.to >= n || e.from == e.to {
            return Err(Error::InvalidInput(format!(
                "edge {} → {} is not between two distinct poses",
                e.from, e.to
            )));
        }
        adj[e.from].push(e.to);
        adj[e.to].push(e.from);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(k) = stack.pop() {
        for &m in &adj[k] {
            if !seen[m] {
                seen[m] = true;
                stack.push(m);
            }
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidInput(format!(
            "pose graph is disconnected: pose {k} is unreachable"
        )));
    }
    Ok(())
}

/// Minimizes `Σ ‖e‖²_Ω` over every pose but `anchor` by Gauss-Newton.
pub fn pose_graph_optimize(
    poses: &[RigidPose],
    sequential: &[PoseGraphEdge],
    loops: &[PoseGraphEdge],
    anchor: usize,
    max_iterations: usize,
) -> Result<Vec<RigidPose>> {
    if loops.is_empty() {
        return Err(Error::InvalidInput("pose graph needs at least one loop edge".into()));
    }
    let n = poses.len();
    if anchor >= n {
        return Err(Error::invalid(format!("anchor {anchor} out of range")));
    }
    let edges: Vec<PoseGraphEdge> = sequential.iter().chain(loops).copied().collect();
    check_connected(n, &edges)?;

    let col = |k: usize| -> Option<usize> {
        match k.cmp(&anchor) {
            std::cmp::Ordering::Less => Some(6 * k),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(6 * (k - 1)),
        }
    };
    let dim = 6 * (n - 1);
    let mut x = poses.to_vec();
    let mut current = cost(&x, &edges);
    for _ in 0..max_iterations {
        let mut h = DMatrix::zeros(dim, dim);
        let mut g = DVector::zeros(dim);
        for e in &edges {
            let (r, ji, jj) = pose_edge_residual(&x[e.from], &x[e.to], &e.relative);
            let blocks = [(e.from, ji), (e.to, jj)];
            for (a, ja) in &blocks {
                let Some(ca) = col(*a) else { continue };
                let jtw = ja.transpose() * e.information;
                let ga = jtw * r;
                for i in 0..6 {
                    g[ca + i] += ga[i];
                }
                for (b, jb) in &blocks {
                    let Some(cb) = col(*b) else { continue };
                    let m = jtw * jb;
                    for i in 0..6 {
                        for j in 0..6 {
                            h[(ca + i, cb + j)] += m[(i, j)];
                        }
                    }
                }
            }
        }
        let dx = solve_spd(h, -g)?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let trial: Vec<RigidPose> = (0..n)
                .map(|k| match col(k) {
                    Some(c) => {
                        let d: Vec<f64> = (0..6).map(|i| dx[c + i] * alpha).collect();
                        retract(&x[k], &d)
                    }
                    None => x[k],
                })
                .collect();
            let c = cost(&trial, &edges);
            if c <= current {
                let decrease = current - c;
                x = trial;
                current = c;
                accepted = decrease > 1e-14 * current.max(1e-300);
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || dx.amax() * alpha < 1e-12 {
            break;
        }
    }
    Ok(x)
}

/// Rigid transform aligning `current` points onto `reference` points, from
/// matched 3D–3D correspondences.
pub fn rigid_alignment(current: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<RigidPose> {
    let a = align_similarity(current, reference, true)?;
    Ok(a.rigid())
}

/// Rotates each velocity by its keyframe's orientation change
/// `R_new · R_oldᵀ`. Biases are left untouched.
pub fn correct_velocities_after_loop(states: &[NavState], corrected: &[Rotation]) -> Result<Vec<NavState>> {
    if states.len() != corrected.len() {
        return Err(Error::invalid("one corrected rotation per state is required"));
    }
    Ok(states
        .iter()
        .zip(corrected)
        .map(|(s, r_new)| {
            let corr: Matrix3<f64> = r_new.matrix() * s.rotation.matrix().transpose();
            NavState {
                velocity: corr * s.velocity,
                ..*s
            }
        })
        .collect())
}
