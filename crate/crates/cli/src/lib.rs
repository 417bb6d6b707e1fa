//! Config-driven experiment harness: train, prune, compact, evaluate and
//! report, each writing into the run's output directory.

pub mod commands;
pub mod config;
pub mod data;
pub mod manifest;
pub mod metrics;
pub mod report;

use dsc_core::Error;

/// Process exit status for an error: 1 configuration, 2 data, 3 failed
/// equivalence check.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::Input(_) => 2,
        Error::Compaction(_) => 3,
        _ => 1,
    }
}
