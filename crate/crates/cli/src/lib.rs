//! Library surface of the command-line tool, so integration tests can drive
//! the subcommands in-process.

pub mod commands;
pub mod config;

use swin1d_core::error::Error;

/// Exit-code contract: 0 success, 2 usage/config, 3 I/O, 4 numerical
/// failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Contract(_) | Error::Parse { .. } | Error::Dim { .. } => 2,
        Error::Io { .. } | Error::Container(_) => 3,
        Error::Numeric(_) | Error::NonFinite(_) => 4,
    }
}
