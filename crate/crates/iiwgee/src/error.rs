//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by model fitting, weight construction, simulation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// The design matrix is rank-deficient; the payload names the offending columns.
    #[error("rank-deficient design: column(s) {columns:?} are collinear")]
    RankDeficient { columns: Vec<usize> },

    /// Monotone likelihood / complete separation: the score stays bounded away
    /// from zero while the coefficient norm diverges.
    #[error("non-identifiable / separation in {model} fit (|coef| = {norm:.3e})")]
    Separation { model: &'static str, norm: f64 },

    /// A fit ran out of iterations without meeting its score tolerance.
    #[error("{model} fit did not converge in {iterations} iterations (score norm {score_norm:.3e})")]
    NotConverged {
        model: &'static str,
        iterations: usize,
        score_norm: f64,
    },

    /// A risk set was empty at an event time, or a probability fell below the
    /// positivity floor, making a weight unbounded.
    #[error("positivity violation: {0}")]
    Positivity(String),

    /// Invalid input data or configuration.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The simulation grid is too coarse for the realized intensity.
    #[error("grid too coarse: lambda*dt = {lambda_dt:.4} > 0.1 at t = {t:.4}; use a smaller grid_dt")]
    GridTooCoarse { lambda_dt: f64, t: f64 },

    /// eta0 calibration could not reach the target dropout proportion.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// Too many Monte Carlo iterations or bootstrap resamples failed.
    #[error("{0}")]
    StudyFailed(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
