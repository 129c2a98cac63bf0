//! Command implementations behind the `raxelkit` binary.
//!
//! Every command is a plain function writing its report to a caller-supplied
//! writer, so the binary and the tests share one code path. Output files are
//! staged next to their destination and renamed into place.

pub mod commands;
pub mod format;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub use commands::*;
pub use format::FormatError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const DEGENERATE: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("all frames degenerate: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Geometry(#[from] raxelkit::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Format { source, .. } => match source {
                FormatError::Io(_) => exit::IO,
                _ => exit::USAGE,
            },
            CliError::Io { .. } => exit::IO,
            CliError::Degenerate(_) => exit::DEGENERATE,
            CliError::Geometry(e) => geometry_exit_code(e),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        CliError::Format {
            path: path.into(),
            source,
        }
    }
}

fn geometry_exit_code(e: &raxelkit::Error) -> i32 {
    use raxelkit::Error as E;
    match e {
        E::DegenerateGeometry { .. } | E::InsufficientInliers { .. } => exit::DEGENERATE,
        E::Frame { source, .. } => geometry_exit_code(source),
        _ => exit::USAGE,
    }
}
