use std::path::PathBuf;

use thiserror::Error;

use crate::arch::{ArchParams, Violation};

pub type Result<T> = std::result::Result<T, Error>;

/// Error classes, each mapped onto a process exit code by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("search space axis `{0}` is empty")]
    EmptyAxis(&'static str),

    #[error("search space axis `{axis}` must be strictly ascending and duplicate-free")]
    UnorderedAxis { axis: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid architecture {arch}: {}", join_violations(.violations))]
    InvalidArch {
        arch: ArchParams,
        violations: Vec<Violation>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("latency unit mismatch: candidate uses {candidate}, maximum point uses {maxpoint}")]
    UnitMismatch {
        candidate: crate::metrics::LatencyUnit,
        maxpoint: crate::metrics::LatencyUnit,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Failure reading a data input (measurements, token ids).
    #[error("{path}: {source}")]
    DataIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate measurement for {arch} (line {line})")]
    DuplicateArch { arch: ArchParams, line: usize },

    #[error("no metrics for candidate {0}")]
    MissingMetric(ArchParams),

    #[error("surrogate error must be positive, got {value} for {arch}")]
    NonPositiveError { arch: ArchParams, value: f64 },

    #[error("surrogate error must be positive, got {0}")]
    ErrorDomain(f64),

    #[error("maximum point must have positive parameter count and latency")]
    InvalidMaxPoint,

    #[error("no rankable candidates remain after filtering")]
    NoCandidates,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("token id {id} at ({row}, {col}) is outside the vocabulary of size {vocab}")]
    TokenOutOfRange {
        row: usize,
        col: usize,
        id: usize,
        vocab: u32,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Exit code classes: configuration (2), data (3), internal invariant (4).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Internal => 4,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::EmptyAxis(_)
            | Error::UnorderedAxis { .. }
            | Error::InvalidArgument(_)
            | Error::InvalidArch { .. }
            | Error::Config(_)
            | Error::UnitMismatch { .. }
            | Error::Io { .. }
            | Error::InvalidMaxPoint => ErrorClass::Config,
            Error::DataIo { .. }
            | Error::Parse { .. }
            | Error::DuplicateArch { .. }
            | Error::MissingMetric(_)
            | Error::NonPositiveError { .. }
            | Error::ErrorDomain(_)
            | Error::NoCandidates
            | Error::ShapeMismatch(_)
            | Error::TokenOutOfRange { .. } => ErrorClass::Data,
            Error::Invariant(_) => ErrorClass::Internal,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }
}
