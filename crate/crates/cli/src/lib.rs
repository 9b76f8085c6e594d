//! Subcommands of the `pass` binary: calibrate control limits, run
//! simulation grids, monitor a recorded stream and summarize results.

pub mod calibrate;
pub mod config;
pub mod report;
pub mod simulate;
pub mod stream;

pub use config::{preset, RunConfig};
