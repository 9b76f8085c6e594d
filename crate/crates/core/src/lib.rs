//! Adaptive sampling for localized concept drift under a labeling budget.
//!
//! A frozen regression model is monitored on a stream where only `M` labels
//! may be requested per step. Each step splits the budget between
//! residual-weighted exploitation ([`exploit`]) and time-weighted accept-reject
//! exploration over a grid ([`explore`]); the labeled residuals feed one-sided
//! truncated EWMA charts ([`monitor`]). [`simlab`] wires the loop together on
//! benchmark surfaces with injected drift and estimates run lengths.

pub mod baselines;
pub mod benchmarks;
pub mod domain;
pub mod drift;
pub mod error;
pub mod exploit;
pub mod explore;
pub mod monitor;
pub mod predictor;
pub mod rng;
pub mod simlab;

pub use domain::{Dataset, Domain, HyperRect, LabeledSample, Point};
pub use error::{Error, Result};
pub use rng::RandomStream;
