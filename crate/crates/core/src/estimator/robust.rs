//! Huber kernel applied to squared Mahalanobis norms.

/// 95% chi-square quantile, 2 DoF (reprojection).
pub const CHI2_2: f64 = 5.991;
/// 95% chi-square quantile, 6 DoF (bias random walk).
pub const CHI2_6: f64 = 12.592;
/// 95% chi-square quantile, 9 DoF (preintegrated rotation, velocity, position).
pub const CHI2_9: f64 = 16.919;
/// 95% chi-square quantile, 15 DoF (marginal prior).
pub const CHI2_15: f64 = 24.996;

/// Huber kernel with threshold `delta` on the whitened residual norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Huber {
    pub delta: f64,
}

impl Huber {
    pub fn new(delta: f64) -> Self {
        Self { delta }
    }

    /// Kernel whose threshold is the square root of a chi-square quantile.
    pub fn from_chi2(quantile: f64) -> Self {
        Self::new(quantile.sqrt())
    }

    /// Robust cost for a squared norm `s = rᵀ Ω r`.
    pub fn cost(&self, s: f64) -> f64 {
        let n = s.sqrt();
        if n <= self.delta {
            s
        } else {
            2.0 * self.delta * n - self.delta * self.delta
        }
    }

    /// IRLS weight `ρ'(s)`, in `(0, 1]`.
    pub fn weight(&self, s: f64) -> f64 {
        let n = s.sqrt();
        if n <= self.delta {
            1.0
        } else {
            self.delta / n
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_inside_linear_outside() {
        let h = Huber::from_chi2(CHI2_2);
        assert!((h.delta - 2.447).abs() < 1e-3);
        assert_eq!(h.cost(4.0), 4.0);
        assert_eq!(h.weight(4.0), 1.0);
        // 10 px residual with unit information
        assert!(h.weight(100.0) < 1.0);
        assert!((h.weight(100.0) - h.delta / 10.0).abs() < 1e-15);
        assert!((h.cost(100.0) - (20.0 * h.delta - h.delta * h.delta)).abs() < 1e-12);
    }

    #[test]
    fn continuous_at_threshold() {
        let h = Huber::new(2.0);
        let s = 4.0;
        assert!((h.cost(s - 1e-9) - h.cost(s + 1e-9)).abs() < 1e-8);
        // derivative of the linear branch matches the weight
        let ds = 1e-6;
        let d = (h.cost(9.0 + ds) - h.cost(9.0 - ds)) / (2.0 * ds);
        assert!((d - h.weight(9.0)).abs() < 1e-8);
    }
}
