use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible DSP allocation: {nonzero_stages} compute stages need at least one DSP each, only {dsp_count} available")]
    InfeasibleAllocation { nonzero_stages: usize, dsp_count: u64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("hardware model built for K={model_k}, L={model_l} but the search space has K={space_k}, L={space_l}")]
    MismatchedSpace {
        model_k: usize,
        model_l: usize,
        space_k: usize,
        space_l: usize,
    },

    #[error("search space has {size} architectures, enumeration limit is {limit}")]
    SpaceTooLarge { size: f64, limit: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than by the toolkit
    /// itself failing.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Numerical(_) => false,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
