//! Error taxonomy shared by the whole crate.

use thiserror::Error;

/// Everything that can go wrong while building or solving a problem.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The problem description is inconsistent (domain, grid, target, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data is unusable (non-positive density, malformed raster, ...).
    #[error("data error: {0}")]
    Data(String),

    /// The discretization cannot be evaluated (no admissible stencil, ...).
    #[error("scheme error: {0}")]
    Scheme(String),

    /// The algebraic solve failed (singular linear system, ...).
    #[error("solver error: {0}")]
    Solver(String),

    /// File I/O while reading or writing rasters and reports.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
