//! Multi-view point triangulation.

use nalgebra::{DMatrix, Vector2, Vector3};

use super::camera::{PinholeCamera, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::manifold::RigidPose;

/// Default smallest ray angle accepted for a new point, rad (about 1°).
pub const MIN_PARALLAX: f64 = 0.0175;

/// Linear (DLT) triangulation from views `(T_cw, keypoint)` where `T_cw`
/// maps world points into the camera. Rejects points behind any camera and
/// ray bundles spanning less than `min_parallax`.
pub fn triangulate(
    views: &[(RigidPose, Vector2<f64>)],
    cam: &PinholeCamera,
    min_parallax: f64,
) -> Result<Vector3<f64>> {
    if views.len() < 2 {
        return Err(Error::InsufficientData("triangulation needs two views".into()));
    }
    let mut a = DMatrix::zeros(2 * views.len(), 4);
    for (k, (t_cw, uv)) in views.iter().enumerate() {
        let x = cam.unproject(uv);
        let r = t_cw.rotation.matrix();
        let t = t_cw.translation;
        for (row, coord) in [(2 * k, x.x), (2 * k + 1, x.y)] {
            let axis = row - 2 * k;
            for c in 0..3 {
                a[(row, c)] = coord * r[(2, c)] - r[(axis, c)];
            }
            a[(row, 3)] = coord * t.z - t[axis];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("triangulation SVD failed".into()))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .unwrap();
    let h = v_t.row(imin);
    if h[3].abs() < 1e-12 {
        return Err(Error::InsufficientData("point at infinity".into()));
    }
    let p = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    let mut rays = Vec::with_capacity(views.len());
    for (t_cw, _) in views {
        let pc = t_cw.transform_point(&p);
        if pc.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        let center = t_cw.inverse().translation;
        rays.push((p - center).normalize());
    }
    let mut widest: f64 = 0.0;
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            widest = widest.max(rays[i].dot(&rays[j]).clamp(-1.0, 1.0).acos());
        }
    }
    if widest < min_parallax {
        return Err(Error::InsufficientData(format!(
            "parallax {widest:.4} rad below {min_parallax:.4} rad"
        )));
    }
    Ok(p)
}
