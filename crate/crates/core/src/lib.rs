//! Estimation of contact-tracing parameters from the number of detectees per
//! index case, for a stochastic SIR process on a rooted random tree.
//!
//! The pieces, bottom-up:
//!
//! * [`kernels`]: closed-form rates and probabilities of the tree model.
//! * [`degree`]: downstream-degree distributions.
//! * [`quadrature`]: integration over ages and series truncation.
//! * [`mixture`]: the detectee-count distribution.
//! * [`inference`]: log-likelihood, maximum-likelihood fits, confidence intervals.
//! * [`selection`]: AIC, chi-square goodness of fit, cumulative comparisons.
//! * [`simulator`]: event-driven SIR with tracing on trees and configuration-model graphs.

pub mod degree;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod mixture;
pub mod quadrature;
pub mod selection;
pub mod simulator;

pub use degree::{DegreeFamily, DegreeModel};
pub use error::{Error, Result};
pub use kernels::{EpidemicParams, GrowthSummary};
pub use inference::{DetecteeHistogram, FitOptions, FitResult, FitStatus};
pub use mixture::{DetecteePmf, TracingMode};
pub use selection::GofReport;
