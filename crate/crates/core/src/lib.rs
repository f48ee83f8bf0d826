//! Visual-inertial state estimation toolkit.
//!
//! - [`manifold`]: SO(3) exponential/logarithm, right Jacobians, rigid poses.
//! - [`preintegration`]: IMU preintegration with bias Jacobians and covariance.
//! - [`initializer`]: gyroscope bias, scale/gravity, accelerometer bias and
//!   velocity initialization from up-to-scale keyframe poses.
//! - [`estimator`]: residual factors, fixed-lag tracking with marginalization,
//!   local/full bundle adjustment, keyframe culling and pose-graph loop closing.
//! - [`simulator`]: deterministic ground-truth trajectories and sensor streams.
//! - [`dataio`]: EuRoC-format streams, calibration and TUM trajectories.
//! - [`evaluation`]: trajectory association, similarity alignment, ATE and RPE.
//! - [`system`]: the sequential tracking / mapping / loop-closing pipeline.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod initializer;
pub mod manifold;
pub mod preintegration;
pub mod simulator;
pub mod state;
pub mod system;

pub use error::{Error, Result};
