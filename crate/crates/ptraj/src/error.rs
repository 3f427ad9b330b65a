//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;
use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the pipeline.
///
/// Variants are grouped so the CLI can map them onto stable exit codes:
/// configuration problems exit 2, data/model format problems exit 3, and
/// internal numerical failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad or inconsistent configuration (unknown key, out-of-range value,
    /// missing required key, malformed config syntax).
    #[error("config error: {0}")]
    Config(String),

    /// Input data that cannot be parsed or is internally inconsistent
    /// (malformed dataset file, grid mismatch between files, bad raw log).
    #[error("data error: {0}")]
    Data(String),

    /// Model file problems: bad magic, manifest/payload mismatch, wrong
    /// model tag for the requested operation.
    #[error("model file error: {0}")]
    ModelFile(String),

    /// Numerical failure inside an algorithm (non-finite loss, integrator
    /// failure, infeasible transport problem).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// No route between two cells in the routing graph.
    #[error("no path from cell {from} to cell {to}")]
    NoPath { from: u32, to: u32 },

    /// I/O wrapper that keeps the offending path visible.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw `io::Error`.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for this error, per the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::ModelFile(_) | Error::Io { .. } => 3,
            Error::Numerical(_) | Error::NoPath { .. } => 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_cli_contract() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Data("x".into()).exit_code(), 3);
        assert_eq!(Error::ModelFile("x".into()).exit_code(), 3);
        assert_eq!(
            Error::io("f", std::io::Error::new(std::io::ErrorKind::NotFound, "gone")).exit_code(),
            3
        );
        assert_eq!(Error::Numerical("x".into()).exit_code(), 4);
        assert_eq!(Error::NoPath { from: 0, to: 1 }.exit_code(), 4);
    }

    #[test]
    fn messages_name_the_failing_path() {
        let err = Error::io("/tmp/nope.txt", std::io::Error::new(std::io::ErrorKind::NotFound, "x"));
        assert!(err.to_string().contains("/tmp/nope.txt"));
    }
}
