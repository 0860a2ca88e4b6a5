//! Command-line front end: configuration, run orchestration and artifacts.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;

use sidflow_core::Error;

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) => 2,
        Error::Domain(_) | Error::Consistency { .. } | Error::Dimension { .. } | Error::Unsupported(_) | Error::Contract(_) => 3,
        Error::Divergence { .. } => 4,
        Error::Io(_) => 5,
    }
}
