//! Numerical workbench for L2-gain and passivity certification of
//! input-output systems, feedback interconnections, and constructive
//! falsification of robust-stability claims against passive or
//! gain-bounded environments.

pub mod adversary;
pub mod config;
mod error;
pub mod feedback;
pub mod gain;
pub mod linalg;
pub mod passivity;
pub mod signals;
pub mod sprocedure;
pub mod systems;

pub use error::{Error, Result};
