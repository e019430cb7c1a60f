//! Inverse-probability-of-treatment-weighted effect estimation with
//! partially observed confounders.
//!
//! The crate provides:
//!
//! * a propensity/IPTW core with variance estimators that account for
//!   propensity estimation and, after multiple imputation, for the
//!   within/between split of the coefficient uncertainty ([`iptw`]);
//! * a chained-equations imputation engine ([`mice`]);
//! * the missing-confounder strategies — complete case, missingness
//!   pattern, and three ways of pooling imputations ([`strategies`]);
//! * weighted covariate-balance diagnostics ([`balance`]);
//! * the simulation study generator with its calibration solvers
//!   ([`simgen`]), a replication harness ([`harness`]), and an exact
//!   finite-state oracle for the pooled-estimator counter-example
//!   ([`oracle`]).

pub mod balance;
pub mod error;
pub mod harness;
pub mod iptw;
pub mod mice;
pub mod numstat;
pub mod oracle;
pub mod simgen;
pub mod strategies;

pub use error::{Error, Result};
