//! Command-line harness around the `phlink` library: configuration files,
//! end-to-end simulation and detection runs, parameter fits, bit error rate
//! sweeps and plot data.
//!
//! Exit codes of the binary: 0 success, 1 I/O failure, 2 invalid input or
//! configuration, 3 synchronization failure, 4 unidentifiable fit,
//! 5 fit did not converge.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, CliResult};
