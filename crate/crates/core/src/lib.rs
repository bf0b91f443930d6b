//! Value of building-load monitoring for district energy system design.
//!
//! The crate sizes solar, battery and grid-connection capacity for a district
//! of buildings whose electrical loads are uncertain, evaluates designs with a
//! receding-horizon controller, and estimates how much a load-monitoring
//! campaign is worth before the design decision is taken.
//!
//! Module map:
//!
//! - [`loadmodel`]: priors, measurement likelihoods, grid posteriors and
//!   profile construction.
//! - [`scenario`]: joint district scenarios and Fast-Forward reduction.
//! - [`designopt`]: the stochastic sizing LP.
//! - [`simulator`]: receding-horizon operation and ex-post costing.
//! - [`voi`]: prior / pre-posterior legs, EVII, EVPI and diagnostics.
//! - [`config`]: pipeline configuration and run manifests.
//! - [`report`]: run artifacts and plot-data tables.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod designopt;
pub mod error;
pub mod loadmodel;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod simulator;
pub mod stats;
pub mod voi;

pub use error::{Error, Result};
