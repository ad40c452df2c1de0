//! Variable selection and Bayesian inversion for low-cost sensor calibration.
//!
//! The crate fits polynomial generalized linear regressions linking target
//! concentrations `x`, measured interferents `z` and sensor outputs `y`, then
//! picks the interferents that actually matter by trading the expected
//! prediction variance of the calibrated model against its complexity (BIC).
//!
//! Module map:
//!
//! - [`dataset`]: data model, CSV ingestion, train/test splits.
//! - [`synthetic`]: the seven-variable Gaussian benchmark generator.
//! - [`basis`]: normalized polynomial feature vectors and their derivatives.
//! - [`glr`]: least-squares fits, including the shared-Gram fast path.
//! - [`uncertainty`]: bootstrap moments and the variance objective / BIC.
//! - [`selection`]: greedy pruning, the exhaustive interferent sweep, and
//!   outer-bootstrap aggregation (selection frequencies, Pareto front).
//! - [`pme`]: proportional marginal effects under dependent inputs.
//! - [`inversion`]: posterior of the targets given sensor readings.
//! - [`resolution`]: level-k average resolution curves.
//! - [`report`]: SVG rendering of Pareto fronts and PME pie charts.

pub mod artifact;
pub mod basis;
pub mod dataset;
pub mod error;
pub mod glr;
pub mod inversion;
mod linalg;
pub mod pme;
pub mod report;
pub mod resolution;
pub mod rng;
pub mod selection;
pub mod synthetic;
pub mod uncertainty;

pub use error::{Error, Result};
