//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// The tree is not supercritical, so the index-case age density is improper.
    #[error("subcritical tree: mean downstream degree {mean_k} must exceed 1")]
    Subcritical { mean_k: f64 },

    #[error("degree below reproduction number: E[K] = {mean_k} must exceed R0 = {r0}")]
    DegreeBelowR0 { mean_k: f64, r0: f64 },

    #[error("invalid degree model: {0}")]
    InvalidModel(String),

    /// Quadrature or series evaluation did not reach the requested tolerance.
    #[error("numerical failure in {context}: estimate {estimate:e}, error bound {error_bound:e}")]
    Numerical {
        context: String,
        estimate: f64,
        error_bound: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    /// The objective is not finite at one of the finite-difference probes.
    #[error("degenerate point: {0}")]
    DegeneratePoint(String),

    /// The negative Hessian is not positive definite, so no Wald interval exists.
    #[error("Hessian is not negative definite (largest eigenvalue {max_eigenvalue:e}); use a profile interval")]
    NotNegativeDefinite { max_eigenvalue: f64 },

    #[error("binning error: {0}")]
    Binning(String),

    #[error("empty histogram")]
    EmptyHistogram,

    #[error("invalid data: {0}")]
    Data(String),

    #[error("parse error: {0}")]
    Parse(String),
}
