//! Library surface of the CLI so integration tests can drive the
//! subcommands in-process.

pub mod arch;
pub mod cond_trace;
pub mod config;
pub mod datasets;
pub mod norm_probe;
pub mod train;
pub mod verify;
