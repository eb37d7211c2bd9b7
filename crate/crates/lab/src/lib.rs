//! Monte Carlo engine, file formats, experiments and rate fitting on top of
//! `chaoslab-core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod mc;
pub mod rates;
pub mod selftest;
pub mod testfn;

pub use error::{LabError, LabResult};
