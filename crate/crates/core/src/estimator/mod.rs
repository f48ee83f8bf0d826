//! Residual factors and nonlinear least-squares back end.

pub mod camera;
pub mod factors;
pub mod graph;
pub mod pose_graph;
pub mod problem;
pub mod robust;
pub mod tracking;
pub mod triangulation;
