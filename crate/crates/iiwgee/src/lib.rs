//! Weighted GEEs for irregularly observed longitudinal data with informative
//! dropout.
//!
//! Irregular visit processes are handled by inverse-intensity weighting: a
//! proportional visit-intensity model is fit to the recurrent visit events and
//! each observed visit enters the GEE with weight inversely proportional to
//! its estimated intensity. When dropout can depend on the outcome, those
//! weights are further multiplied by the inverse conditional probability of
//! not yet having dropped out, estimated from a visit-level logistic model.
//! The crate provides:
//!
//! - [`model`]: the panel data model, history features and CSV interchange;
//! - [`intensity`]: the Andersen–Gill-style partial likelihood fit and
//!   Breslow baseline;
//! - [`dropout`]: the visit-level logistic dropout model and the conditional
//!   not-yet-dropped-out probability;
//! - [`weights`]: weight composition, stabilization and percentile trimming;
//! - [`wgee`]: the weighted least squares GEE solver, cluster-robust
//!   covariance and AUC functionals;
//! - [`sim`]: the two scenario generators with deterministic seed splitting;
//! - [`study`]: whole-panel analyses, Monte Carlo studies and the cluster
//!   bootstrap;
//! - [`cli`]: config-driven commands behind the `iiwgee` binary.

pub mod cli;
pub mod dropout;
pub mod error;
pub mod intensity;
pub mod linalg;
pub mod model;
pub mod quad;
pub mod sim;
pub mod study;
pub mod weights;
pub mod wgee;

pub use error::{Error, Result};
