//! Command-line front end: configuration, subcommands and exit codes.

pub mod commands;
pub mod config;

use config::ConfigError;
use dllrnn_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit status for an error: 1 usage/config, 2 data, 3 numerical failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Contract(_) => EXIT_USAGE,
                Error::NonFiniteGradient(_) | Error::Numerical(_) => EXIT_NUMERICAL,
                Error::Dimension(_)
                | Error::Degenerate(_)
                | Error::Empty(_)
                | Error::Geometry(_)
                | Error::Latency { .. }
                | Error::Parse { .. }
                | Error::Io { .. } => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}
