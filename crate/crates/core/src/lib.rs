//! Camera calibration and metric measurement from street-level panoramas.

pub mod error;
pub mod geodesy;
pub mod geometry;
pub mod groundplane;
pub mod io;
pub mod localize;
pub mod optim;
pub mod ransac;
pub mod sfm;
pub mod synth;
pub mod traffic;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
