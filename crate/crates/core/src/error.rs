use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("ensemble needs at least 2 members, got {got}")]
    EnsembleSize { got: usize },

    #[error("{0} contains a non-finite value")]
    NonFinite(String),

    #[error("ensemble member {member} diverged: {detail}")]
    MemberDiverged { member: usize, detail: String },

    #[error("inertia matrix is numerically singular (|det| = {det:.3e})")]
    SingularInertia { det: f64 },

    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("plot rendering failed: {0}")]
    Plot(String),

    #[error("thread pool setup failed: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, Error>;
