//! Minimum-fuel 6-DoF powered descent guidance with learned warm starts.
//!
//! The crate has three layers:
//!
//! * a trajectory optimizer: zeroth-order-hold transcription of the rocket
//!   dynamics ([`transcription`]), a conic subproblem assembler and solver
//!   ([`socp`]), and the penalized-trust-region SCP loop ([`ptr`]);
//! * a policy trainer: time-varying LQR sample generation ([`lqr`]), a
//!   from-scratch MLP with minibatch training ([`policy`]), and the guided
//!   policy search orchestration ([`gps`]);
//! * benchmarking: initial-state grids and persistence ([`data`]), plus the
//!   feasibility and warm-start iteration-count reports ([`bench`]).
//!
//! All quantities are in the nondimensional unit system (U_L, U_T, U_M);
//! angles are radians internally, degrees at the file-format boundary.

pub mod bench;
pub mod data;
pub mod error;
pub mod gps;
pub mod lqr;
pub mod policy;
pub mod ptr;
pub mod socp;
pub mod transcription;
pub mod vehicle;

pub use error::{Error, Result};
