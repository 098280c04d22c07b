//! Crate-wide error type.

use std::fmt;
use std::io;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by trace handling, generators, the predictor, and the solvers.
#[derive(Debug)]
pub enum Error {
    /// A mini-slot required by an operation is missing from the trace.
    TraceIncomplete { mini_slot: usize, detail: String },
    /// A cache plan violates capacity or dimension constraints.
    InvalidPlan(String),
    /// An aggregate was requested over an empty collection.
    EmptyInput(&'static str),
    /// A ratio metric was requested with a zero denominator.
    UndefinedMetric(&'static str),
    /// Tensor or matrix dimensions do not agree.
    Shape(String),
    /// Not enough history to build the requested dataset.
    InsufficientData(String),
    /// Training produced a non-finite loss or gradient.
    Divergence { tensor: String },
    /// A user has no request history before the requested mini-slot.
    NoHistory { user: usize },
    /// A genre does not contain enough files for the requested operation.
    ExhaustedGenre { genre: usize, available: usize, needed: usize },
    /// A feature vector has (near-)zero norm and cannot enter a cosine.
    DegenerateFeature { file: u32 },
    /// The exhaustive solver was asked for an instance beyond its guard.
    SizeGuard { variables: usize, limit: usize },
    /// A text artifact (trace, catalog, config, profile) failed to parse.
    Parse { line: usize, message: String },
    /// Invariant violation in a configuration or parameter set.
    InvalidConfig(String),
    /// A policy failed mid-episode; earlier slots completed cleanly.
    EpisodeAborted { slot: usize, source: Box<Error> },
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::TraceIncomplete { mini_slot, detail } => {
                write!(f, "trace incomplete at mini-slot {mini_slot}: {detail}")
            }
            Error::InvalidPlan(msg) => write!(f, "invalid cache plan: {msg}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::UndefinedMetric(what) => write!(f, "undefined metric: {what}"),
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            Error::Divergence { tensor } => {
                write!(f, "non-finite loss or gradient in tensor `{tensor}`")
            }
            Error::NoHistory { user } => write!(f, "user {user} has no request history"),
            Error::ExhaustedGenre { genre, available, needed } => write!(
                f,
                "genre {genre} has {available} candidate files, needs {needed}"
            ),
            Error::DegenerateFeature { file } => {
                write!(f, "file {file} has a zero-norm feature vector")
            }
            Error::SizeGuard { variables, limit } => write!(
                f,
                "instance has {variables} binary variables, exhaustive guard is {limit}"
            ),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::EpisodeAborted { slot, source } => {
                write!(f, "episode aborted at placement slot {slot}: {source}")
            }
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::EpisodeAborted { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
