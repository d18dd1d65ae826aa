//! The `dasr` harness: run configuration, benchmark reports and the
//! subcommands behind the binary, exposed as a library for testing.

use std::fmt;
use std::path::Path;

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;

pub use commands::{
    bench_cmd, build_dataset_cmd, evaluate_cmd, evaluate_images, load_benchmark, super_resolve_cmd, train_cb_cmd,
    train_dim_cmd, DatasetSummary, Models, SrArtifacts, TimingReport,
};
pub use config::{Mode, RunConfig};
pub use report::{BenchmarkReport, ReportRow, SplitReport, SplitSide};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_MISSING: u8 = 3;
pub const EXIT_MISMATCH: u8 = 4;

/// A command failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_MISSING,
            message: message.into(),
        }
    }

    pub fn mismatch(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_MISMATCH,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, e: impl fmt::Display) -> Self {
        Failure::input(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<dasr_core::Error> for Failure {
    fn from(e: dasr_core::Error) -> Self {
        let code = match e {
            dasr_core::Error::Numeric(_) => EXIT_FAILURE,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Builds the global worker pool, capped by `DASR_THREADS` when set.
pub fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("DASR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::input(format!("DASR_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::input(format!("thread pool: {e}")))
}
