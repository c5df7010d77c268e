//! Fault-tolerant quadrotor flight control laboratory.
//!
//! The crate couples a 6-DOF rigid-body simulator with a cascaded flight
//! controller that keeps a quadrotor airborne after losing one rotor or two
//! opposing rotors. The primary controller is an incremental nonlinear
//! dynamic inversion (INDI) design on a reduced-attitude output; an LQR
//! design over the same failure model serves as the comparison baseline.
//! A stability analyzer predicts which lateral output directions leave the
//! unobserved internal spin dynamics stable.
//!
//! Modules:
//! - [`math`]: rotation integration, low-pass filtering, small eigenproblems
//! - [`vehicle`]: rigid-body model, rotor lag, disturbance inputs
//! - [`sim`]: RK4 propagation, sensor sampling, loss-of-control detection
//! - [`controller`]: outer position loop and INDI inner loops
//! - [`stability`]: trim, internal-dynamics analysis, normal-form transform
//! - [`lqr`]: continuous Riccati solver and the baseline attitude regulator
//! - [`scenario`]: config parsing, scenario runner, CSV traces

pub mod controller;
pub mod lqr;
pub mod math;
pub mod scenario;
pub mod sim;
pub mod stability;
pub mod vehicle;

pub use math::{Mat2, Mat3, Vec3, GRAVITY};
