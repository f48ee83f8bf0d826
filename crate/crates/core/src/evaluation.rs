//! Trajectory association, similarity alignment, ATE and RPE.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::manifold::{RigidPose, Rotation};
use crate::state::StampedPose;

/// Default association tolerance, s.
pub const DEFAULT_MAX_DT: f64 = 0.02;
/// Default RPE path-length deltas, m.
pub const DEFAULT_RPE_DELTAS: [f64; 6] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0];

/// Pairs `(index in a, index in b)` of poses whose timestamps differ by at
/// most `max_dt`. Closest pairs are taken first and each pose is used once.
/// The result is ordered by the index in `a`.
pub fn associate(a: &[StampedPose], b: &[StampedPose], max_dt: f64) -> Result<Vec<(usize, usize)>> {
    let mut candidates = Vec::new();
    let mut lo = 0;
    for (i, pa) in a.iter().enumerate() {
        while lo < b.len() && b[lo].timestamp < pa.timestamp - max_dt {
            lo += 1;
        }
        for (j, pb) in b.iter().enumerate().skip(lo) {
            if pb.timestamp > pa.timestamp + max_dt {
                break;
            }
            candidates.push(((pa.timestamp - pb.timestamp).abs(), i, j));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no timestamps of the two trajectories lie within {max_dt} s of each other"
        )));
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Similarity taking estimated positions into the ground-truth frame:
/// `gt ≈ scale · R · est + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentResult {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub scale: f64,
    /// m
    pub rmse_after_alignment: f64,
}

impl AlignmentResult {
    pub fn apply(&self, est: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation.matrix() * est) + self.translation
    }

    /// Size of the estimate relative to ground truth (`1 / scale`).
    pub fn estimate_scale(&self) -> f64 {
        1.0 / self.scale
    }

    /// `|1 − s|·100` with `s` the estimate's scale relative to ground truth.
    pub fn scale_error_percent(&self) -> f64 {
        (1.0 - self.estimate_scale()).abs() * 100.0
    }

    /// The rigid part, for transforming whole poses.
    pub fn rigid(&self) -> RigidPose {
        RigidPose::new(self.rotation, self.translation)
    }
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / p.len() as f64
}

/// Closed-form least-squares similarity (or rigid motion with `fix_scale`)
/// aligning `est` onto `gt`, from the SVD of their cross-covariance.
pub fn align_similarity(est: &[Vector3<f64>], gt: &[Vector3<f64>], fix_scale: bool) -> Result<AlignmentResult> {
    if est.len() != gt.len() {
        return Err(Error::invalid("alignment needs matched point lists"));
    }
    if est.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "{} point pairs, at least 3 needed",
            est.len()
        )));
    }
    let n = est.len() as f64;
    let (mu_e, mu_g) = (centroid(est), centroid(gt));
    let mut cov = Matrix3::zeros();
    let mut spread_e = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let (de, dg) = (e - mu_e, g - mu_g);
        cov += dg * de.transpose();
        spread_e += de * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= n;
    var_e /= n;

    let ev = spread_e.symmetric_eigenvalues();
    let mut sorted = [ev[0], ev[1], ev[2]];
    sorted.sort_by(f64::total_cmp);
    if !(sorted[2] > 0.0) || sorted[1] <= 1e-12 * sorted[2] {
        return Err(Error::RankDeficient(
            "points are coincident or collinear; rotation is undetermined".into(),
        ));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if fix_scale {
        1.0
    } else {
        (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_e
    };
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::RankDeficient(format!("alignment scale {scale} is not positive")));
    }
    let rotation = Rotation::from_matrix_unchecked(r).renormalized();
    let translation = mu_g - scale * (rotation.matrix() * mu_e);
    let mut out = AlignmentResult {
        rotation,
        translation,
        scale,
        rmse_after_alignment: 0.0,
    };
    out.rmse_after_alignment = ate_rmse(est, gt, &out);
    Ok(out)
}

/// RMSE of the aligned estimate against ground truth, m.
pub fn ate_rmse(est: &[Vector3<f64>], gt: &[Vector3<f64>], alignment: &AlignmentResult) -> f64 {
    if est.is_empty() {
        return 0.0;
    }
    let s: f64 = est
        .iter()
        .zip(gt)
        .map(|(e, g)| (alignment.apply(e) - g).norm_squared())
        .sum();
    (s / est.len() as f64).sqrt()
}

/// Translation-error statistics for one path-length delta.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RpeBin {
    /// m
    pub delta: f64,
    pub samples: usize,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RpeCurve {
    pub bins: Vec<RpeBin>,
}

impl RpeCurve {
    pub fn bin(&self, delta: f64) -> Option<&RpeBin> {
        self.bins.iter().find(|b| (b.delta - delta).abs() < 1e-9)
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Relative pose error over ground-truth path-length segments.
///
/// `est[k]` and `gt[k]` must be matched. For every start pose and every
/// delta, the segment ends at the first pose whose ground-truth path length
/// from the start reaches the delta; the error is the translation of
/// `(gt_i⁻¹ gt_j)⁻¹ (est_i⁻¹ est_j)`. Deltas without segments are omitted.
pub fn relative_pose_error(est: &[RigidPose], gt: &[RigidPose], deltas: &[f64]) -> Result<RpeCurve> {
    if est.len() != gt.len() {
        return Err(Error::invalid("relative pose error needs matched trajectories"));
    }
    let mut dist = vec![0.0; gt.len()];
    for k in 1..gt.len() {
        dist[k] = dist[k - 1] + (gt[k].translation - gt[k - 1].translation).norm();
    }
    let mut bins = Vec::new();
    for &delta in deltas {
        let mut errs = Vec::new();
        let mut j = 0;
        for i in 0..gt.len() {
            j = j.max(i);
            while j < gt.len() && dist[j] - dist[i] < delta {
                j += 1;
            }
            if j == gt.len() {
                break;
            }
            let rel_gt = gt[i].between(&gt[j]);
            let rel_est = est[i].between(&est[j]);
            errs.push(rel_gt.between(&rel_est).translation.norm());
        }
        if errs.is_empty() {
            continue;
        }
        errs.sort_by(f64::total_cmp);
        bins.push(RpeBin {
            delta,
            samples: errs.len(),
            median: percentile(&errs, 0.5),
            p5: percentile(&errs, 0.05),
            p95: percentile(&errs, 0.95),
        });
    }
    Ok(RpeCurve { bins })
}

#[derive(Clone, Copy, Debug)]
pub struct EvaluationOptions {
    pub max_dt: f64,
    /// Rigid instead of similarity alignment (ground-truth scale).
    pub fix_scale: bool,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            max_dt: DEFAULT_MAX_DT,
            fix_scale: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvaluationReport {
    pub matched: usize,
    pub alignment: AlignmentResult,
    /// m
    pub ate_rmse: f64,
    pub scale_error_percent: f64,
    pub rpe: RpeCurve,
}

/// Association, alignment, ATE and RPE in one pass. RPE is computed on the
/// aligned estimate.
pub fn evaluate(
    est: &[StampedPose],
    gt: &[StampedPose],
    deltas: &[f64],
    options: &EvaluationOptions,
) -> Result<EvaluationReport> {
    let pairs = associate(est, gt, options.max_dt)?;
    let pe: Vec<_> = pairs.iter().map(|&(i, _)| est[i].pose.translation).collect();
    let pg: Vec<_> = pairs.iter().map(|&(_, j)| gt[j].pose.translation).collect();
    let alignment = align_similarity(&pe, &pg, options.fix_scale)?;
    let ate = ate_rmse(&pe, &pg, &alignment);
    let aligned: Vec<RigidPose> = pairs
        .iter()
        .map(|&(i, _)| {
            let p = est[i].pose;
            RigidPose::new(alignment.rotation * p.rotation, alignment.apply(&p.translation))
        })
        .collect();
    let gt_poses: Vec<RigidPose> = pairs.iter().map(|&(_, j)| gt[j].pose).collect();
    let rpe = relative_pose_error(&aligned, &gt_poses, deltas)?;
    Ok(EvaluationReport {
        matched: pairs.len(),
        scale_error_percent: if options.fix_scale {
            0.0
        } else {
            alignment.scale_error_percent()
        },
        alignment,
        ate_rmse: ate,
        rpe,
    })
}

impl EvaluationReport {
    /// One row per metric or RPE bin statistic: `metric,delta_m,value`.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("# relative pose error uses path-length segments of the ground truth\n");
        s.push_str("metric,delta_m,value\n");
        let _ = writeln!(s, "matched_poses,,{}", self.matched);
        let _ = writeln!(s, "ate_rmse_m,,{:.9}", self.ate_rmse);
        let _ = writeln!(s, "scale_error_percent,,{:.9}", self.scale_error_percent);
        let _ = writeln!(s, "alignment_scale,,{:.9}", self.alignment.estimate_scale());
        for b in &self.rpe.bins {
            let _ = writeln!(s, "rpe_samples,{},{}", b.delta, b.samples);
            let _ = writeln!(s, "rpe_median_m,{},{:.9}", b.delta, b.median);
            let _ = writeln!(s, "rpe_p5_m,{},{:.9}", b.delta, b.p5);
            let _ = writeln!(s, "rpe_p95_m,{},{:.9}", b.delta, b.p95);
        }
        s
    }

    /// Plot data: `delta_m,median_m,p5_m,p95_m`.
    pub fn rpe_plot_csv(&self) -> String {
        let mut s = String::from("delta_m,median_m,p5_m,p95_m\n");
        for b in &self.rpe.bins {
            let _ = writeln!(s, "{},{:.9},{:.9},{:.9}", b.delta, b.median, b.p5, b.p95);
        }
        s
    }

    pub fn write(&self, metrics: &Path, plot: &Path) -> Result<()> {
        std::fs::write(metrics, self.metrics_csv()).map_err(|e| Error::io(metrics, e))?;
        std::fs::write(plot, self.rpe_plot_csv()).map_err(|e| Error::io(plot, e))
    }
}
