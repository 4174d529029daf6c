//! Multivariate fractional Ornstein–Uhlenbeck volatility model.

pub mod covariance;
pub mod estimator;
pub mod ingest;
mod error;
pub mod kvdoc;
pub mod manifest;
pub mod model;
pub mod montecarlo;
pub mod quadrature;
pub mod optim;
pub mod panel;
pub mod simulator;
pub mod special;
pub mod spillover;

pub use error::{Error, Result};
pub use kvdoc::KvDoc;
pub use model::{coherency, mfgn_cov, validate_params, ModelParams, ValidationReport};
