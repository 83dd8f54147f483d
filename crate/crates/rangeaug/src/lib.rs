//! File formats, configuration, the experiment runner and the command line
//! for `rangeaug-core`.
//!
//! Formats: binary PPM images, `.ratf` tensor files for datasets, model
//! checkpoints (JSON header line plus raw little-endian parameters), policy
//! JSON and CSV trajectory and sweep logs.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csvlog;
pub mod error;
pub mod policy_file;
pub mod pool;
pub mod ppm;
pub mod runner;
pub mod tensorfile;

pub use error::{Error, Result};
