//! SO(3) and rigid-pose utilities.
//!
//! Rotations are stored as 3×3 matrices. Perturbations are right-multiplicative
//! throughout the crate: `R ⊕ δφ = R · Exp(δφ)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation vector (axis · angle, radians).
pub type AxisAngle = Vector3<f64>;

/// Angles below this use the Taylor expansion of the exponential map.
pub const SMALL_ANGLE: f64 = 1e-7;

// Below this the trigonometric coefficient ratios lose precision to
// cancellation, so they are evaluated by their series instead.
const SERIES_ANGLE: f64 = 1e-3;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Skew-symmetric matrix with `hat(v) * w == v.cross(&w)`.
#[inline]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] (reads the skew part only).
#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Element of SO(3).
///
/// Serialized as a row-major 3×3 array; deserialization validates the matrix.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[[f64; 3]; 3]", try_from = "[[f64; 3]; 3]")]
pub struct Rotation(Matrix3<f64>);

impl From<Rotation> for [[f64; 3]; 3] {
    fn from(r: Rotation) -> Self {
        let m = r.0;
        [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
    }
}

impl TryFrom<[[f64; 3]; 3]> for Rotation {
    type Error = Error;
    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        Rotation::from_matrix(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Rotation").field(&self.0).finish()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix, checking orthonormality and determinant within 1e-6.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        check_rotation(&m, ORTHONORMAL_TOL)?;
        Ok(Rotation(m))
    }

    /// Wraps a matrix without validation. The caller guarantees it is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation from a (not necessarily normalized) quaternion `w + xi + yj + zk`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Rotation(*q.to_rotation_matrix().matrix())
    }

    /// Unit quaternion `[w, x, y, z]` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&r);
        let (w, x, y, z) = (q.w, q.i, q.j, q.k);
        if w < 0.0 {
            [-w, -x, -y, -z]
        } else {
            [w, x, y, z]
        }
    }

    /// Rotation about a principal axis; used by trajectory models.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::exp(&Vector3::new(0.0, 0.0, yaw))
            * Self::exp(&Vector3::new(0.0, pitch, 0.0))
            * Self::exp(&Vector3::new(roll, 0.0, 0.0))
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Exponential map. Finite input is assumed; see [`exp_so3`] for the checked form.
    pub fn exp(phi: &AxisAngle) -> Self {
        let theta2 = phi.norm_squared();
        let theta = theta2.sqrt();
        let k = hat(phi);
        let k2 = k * k;
        if theta < SMALL_ANGLE {
            return Rotation(Matrix3::identity() + k + 0.5 * k2);
        }
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / theta2;
        Rotation(Matrix3::identity() + a * k + b * k2)
    }

    /// Logarithm map onto the canonical range `‖φ‖ ∈ [0, π]`.
    pub fn log(&self) -> AxisAngle {
        let r = &self.0;
        let v = 0.5 * vee(&(r - r.transpose()));
        let s = v.norm();
        let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let theta = s.atan2(c);

        if theta < SERIES_ANGLE {
            // v = sin(θ)·axis; θ/sin θ ≈ 1 + θ²/6
            return v * (1.0 + theta * theta / 6.0);
        }
        if c > -0.5 {
            return v * (theta / s);
        }

        // Near π: sin θ is small, so read the axis from the symmetric part
        // B = (R + Rᵀ)/2 − cos θ·I = (1 − cos θ)·a·aᵀ using its largest diagonal.
        let b = 0.5 * (r + r.transpose()) - Matrix3::identity() * c;
        let one_minus_c = 1.0 - c;
        let k = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap_or(0);
        let ak = (b[(k, k)] / one_minus_c).max(0.0).sqrt();
        let mut axis = b.column(k) / (one_minus_c * ak);
        // at exactly π both signs are valid; keep the positive largest component
        if axis.dot(&v) < -4.0 * f64::EPSILON {
            axis = -axis;
        }
        let axis = axis.normalize();
        axis * theta
    }

    /// Projects back onto SO(3) with one Newton step of the polar decomposition.
    pub fn renormalized(&self) -> Self {
        let r = self.0;
        Rotation(0.5 * r * (3.0 * Matrix3::identity() - r.transpose() * r))
    }

    /// Frobenius distance to another rotation.
    pub fn distance(&self, other: &Rotation) -> f64 {
        (self.0 - other.0).norm()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        check_rotation(&self.0, tol).is_ok()
    }
}

fn check_rotation(m: &Matrix3<f64>, tol: f64) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("rotation has non-finite entries"));
    }
    let ortho = (m * m.transpose() - Matrix3::identity()).norm();
    if ortho > tol {
        return Err(Error::invalid(format!(
            "matrix is not orthonormal (‖RRᵀ − I‖ = {ortho:.3e})"
        )));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::invalid(format!("rotation determinant is {det}")));
    }
    Ok(())
}

impl Mul for Rotation {
    type Output = Rotation;
    #[inline]
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    #[inline]
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    #[inline]
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    #[inline]
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    #[inline]
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Checked exponential map.
pub fn exp_so3(phi: &AxisAngle) -> Result<Rotation> {
    if phi.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("exp_so3: non-finite rotation vector"));
    }
    Ok(Rotation::exp(phi))
}

/// Checked logarithm map: rejects matrices farther than 1e-6 from SO(3).
pub fn log_so3(r: &Matrix3<f64>) -> Result<AxisAngle> {
    check_rotation(r, ORTHONORMAL_TOL)?;
    Ok(Rotation(*r).log())
}

fn jacobian_coefficients(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta < SERIES_ANGLE {
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    }
}

/// Right Jacobian: `Exp(φ + δ) ≈ Exp(φ) · Exp(Jr(φ) δ)`.
pub fn right_jacobian_so3(phi: &AxisAngle) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * k + k * k / 6.0;
    }
    let (a, b) = jacobian_coefficients(theta);
    Matrix3::identity() - a * k + b * k * k
}

/// Inverse of [`right_jacobian_so3`]: `Log(Exp(φ) · Exp(δ)) ≈ φ + Jr⁻¹(φ) δ`.
pub fn right_jacobian_inv_so3(phi: &AxisAngle) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let c = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + 0.5 * k + c * k * k
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt.matrix() * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * x + self.translation
    }

    /// `self⁻¹ · other`.
    pub fn between(&self, other: &RigidPose) -> RigidPose {
        self.inverse() * *other
    }
}

impl Mul for RigidPose {
    type Output = RigidPose;
    fn mul(self, rhs: RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation.matrix() * rhs.translation + self.translation,
        }
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn series_exp(phi: &Vector3<f64>, terms: usize) -> Matrix3<f64> {
        let k = hat(phi);
        let mut acc = Matrix3::identity();
        let mut term = Matrix3::identity();
        for n in 1..terms {
            term = term * k / n as f64;
            acc += term;
        }
        acc
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(*Rotation::exp(&Vector3::zeros()).matrix(), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_x_maps_y_to_z() {
        let r = Rotation::exp(&Vector3::new(FRAC_PI_2, 0.0, 0.0));
        let y = r * Vector3::y();
        assert!((y - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn exp_matches_series() {
        let phi = Vector3::new(0.1, -0.2, 0.2).normalize() * 0.3;
        let r = Rotation::exp(&phi);
        assert!((r.matrix() - series_exp(&phi, 20)).norm() < 1e-15);
    }

    #[test]
    fn exp_rejects_nan() {
        assert!(exp_so3(&Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn log_identity_and_roundtrips() {
        assert_eq!(Rotation::identity().log(), Vector3::zeros());
        for mag in [1e-9, 0.5, 3.0] {
            let v = Vector3::new(0.3, -0.5, 0.8).normalize() * mag;
            let back = Rotation::exp(&v).log();
            assert!((back - v).norm() < 1e-12 * mag.max(1.0), "{mag}");
        }
    }

    #[test]
    fn log_of_half_turn_about_x() {
        let r = series_exp(&Vector3::new(PI, 0.0, 0.0), 40);
        let phi = log_so3(&r).unwrap();
        assert!((phi - Vector3::new(PI, 0.0, 0.0)).norm() < 1e-12, "{phi}");
    }

    #[test]
    fn log_rejects_non_orthonormal() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-3;
        assert!(log_so3(&m).is_err());
    }

    #[test]
    fn hat_is_cross_product() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        let p = hat(&Vector3::new(0.0, 0.0, -1.0)) * Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(p, Vector3::new(0.0, -1.0, 0.0));
    }

    #[test]
    fn right_jacobian_identity_and_symmetry() {
        assert_eq!(right_jacobian_so3(&Vector3::zeros()), Matrix3::identity());
        let phi = Vector3::new(0.4, -0.1, 0.7);
        let diff = right_jacobian_so3(&phi) - right_jacobian_so3(&-phi).transpose();
        assert!(diff.norm() < 1e-15);
    }

    #[test]
    fn right_jacobian_first_order() {
        let phi = Vector3::new(0.4, -1.1, 0.7);
        let jr = right_jacobian_so3(&phi);
        let e0 = Rotation::exp(&phi);
        for scale in [1e-3, 1e-4] {
            let d = Vector3::new(0.3, 0.5, -0.2) * scale;
            let lhs = Rotation::exp(&(phi + d));
            let rhs = e0 * Rotation::exp(&(jr * d));
            let err = (lhs.matrix() - rhs.matrix()).norm();
            // second-order remainder
            assert!(err < 10.0 * d.norm_squared(), "{err}");
        }
    }

    #[test]
    fn inverse_right_jacobian_is_inverse() {
        for phi in [Vector3::new(1e-9, 0.0, 0.0), Vector3::new(0.4, -1.1, 0.7)] {
            let p = right_jacobian_so3(&phi) * right_jacobian_inv_so3(&phi);
            assert!((p - Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn exp_branches_agree_at_switch() {
        let dir = Vector3::new(0.2, 0.3, -0.9).normalize();
        let below = Rotation::exp(&(dir * (SMALL_ANGLE * (1.0 - 1e-9))));
        let above = Rotation::exp(&(dir * (SMALL_ANGLE * (1.0 + 1e-9))));
        assert!((below.matrix() - above.matrix()).norm() < 1e-12);
    }

    #[test]
    fn quaternion_roundtrip() {
        let r = Rotation::exp(&Vector3::new(0.3, 2.0, -1.0));
        let q = r.to_quaternion();
        assert!(q[0] >= 0.0);
        let back = Rotation::from_quaternion(q[0], q[1], q[2], q[3]);
        assert!(back.distance(&r) < 1e-14);
    }

    #[test]
    fn pose_inverse_composes_to_identity() {
        let t = RigidPose::new(
            Rotation::exp(&Vector3::new(0.1, 0.2, 0.3)),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let id = t * t.inverse();
        assert!(id.rotation.distance(&Rotation::identity()) < 1e-15);
        assert!(id.translation.norm() < 1e-15);
    }

    fn vec_in_ball(max: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.0..max).prop_filter_map("nonzero direction", |(x, y, z, m)| {
            let v = Vector3::new(x, y, z);
            (v.norm() > 1e-3).then(|| v.normalize() * m)
        })
    }

    proptest! {
        #[test]
        fn log_exp_roundtrip(v in vec_in_ball(PI - 1e-6)) {
            let back = Rotation::exp(&v).log();
            prop_assert!((back - v).norm() < 1e-9, "{} vs {}", back, v);
        }

        #[test]
        fn products_stay_on_manifold(a in vec_in_ball(PI), b in vec_in_ball(PI)) {
            let r = Rotation::exp(&a) * Rotation::exp(&b);
            prop_assert!(r.is_valid(1e-9));
        }

        #[test]
        fn hat_matches_cross(v in vec_in_ball(10.0), w in vec_in_ball(10.0)) {
            prop_assert!((hat(&v) * w - v.cross(&w)).norm() < 1e-12);
        }
    }
}
