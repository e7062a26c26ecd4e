//! Long-term voltage stability simulation of power systems.
//!
//! Three models of the same system are available: the full DAE model
//! ([`dae`]), the quasi steady-state approximation ([`qss`]), and a hybrid
//! runner ([`hybrid`]) that uses QSS while it is trustworthy and falls back
//! to the full model when it is not.

// `!(a < b)` is used on purpose so NaN fails range checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dae;
pub mod devices;
pub mod engine;
pub mod error;
pub mod hybrid;
pub mod model;
pub mod network;
pub mod qss;
pub mod scenario;
pub mod solver;
pub mod stability;
pub mod trace;
