//! Benchmark harness and file plumbing around the [`scanreg`] library.
//!
//! The library half of the `scanreg` binary: cloud and pose file I/O
//! ([`io`]), procedural benchmark scenes ([`scene`]), the text
//! configuration format ([`config`]), the multi-worker benchmark runner
//! and its CSV report ([`bench`]), and the component-swap studies
//! ([`ablate`]).

use std::path::PathBuf;

pub mod ablate;
pub mod bench;
pub mod config;
pub mod io;
pub mod scene;

/// Errors of the harness layer.
///
/// Library-level registration errors are wrapped so every failure path
/// maps onto one of the process exit codes: parse and configuration
/// problems exit with 2, registration failures with 3.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Underlying filesystem failure.
    #[error("{path}: {source}")]
    Io {
        /// File being read or written.
        path: PathBuf,
        /// Operating-system error.
        #[source]
        source: std::io::Error,
    },
    /// A file's content could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        /// File being parsed.
        path: PathBuf,
        /// 1-based line of the offending content.
        line: usize,
        /// What went wrong.
        message: String,
    },
    /// A file ended before its declared content.
    #[error("{path}: file truncated at byte offset {offset}")]
    Truncated {
        /// File being parsed.
        path: PathBuf,
        /// Byte offset at which data ran out.
        offset: u64,
    },
    /// A configuration value or combination is invalid.
    #[error("configuration error: {0}")]
    Config(String),
    /// A synthetic scene could not satisfy its specification.
    #[error("scene generation failed: {0}")]
    Generation(String),
    /// The pipeline could not register a pair.
    #[error("registration failed: {0}")]
    Registration(String),
}

impl HarnessError {
    /// The process exit code this error maps to.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Registration(_) => 3,
            _ => 2,
        }
    }
}

impl From<scanreg::Error> for HarnessError {
    fn from(err: scanreg::Error) -> Self {
        match err {
            scanreg::Error::RegistrationFailure { .. } => {
                HarnessError::Registration(err.to_string())
            }
            other => HarnessError::Config(other.to_string()),
        }
    }
}

/// Result alias of the harness layer.
pub type Result<T> = std::result::Result<T, HarnessError>;
