//! Propensity score estimation of an average causal effect with binary
//! treatment and outcome, comparing sequential maximum likelihood, joint
//! Bayesian and cut-feedback (two-stage quasi-Bayesian) analyses.
//!
//! The crate is organised bottom-up:
//!
//! * [`glm`] – logistic-regression likelihood, derivatives and Newton fitting.
//! * [`propensity`] – propensity scores, the treatment-only posterior and quintile strata.
//! * [`outcome`] – stratified outcome models and g-computation of Δ.
//! * [`samplers`] – random-walk Metropolis and the joint log-posteriors.
//! * [`strategies`] – the five estimators A1, A2, B, C and D.
//! * [`sim`] – data generation, replicated analyses and summary metrics.
//!
//! Bootstrap resamples, cut-posterior draws and replicates are independent
//! work items seeded from their index; with the default `parallel` feature
//! they run on rayon, otherwise sequentially, with identical results.

pub mod dataset;
pub mod error;
pub mod exec;
pub mod glm;
pub mod outcome;
pub mod propensity;
pub mod samplers;
pub mod seeds;
pub mod sim;
pub mod stats;
pub mod strategies;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use exec::Parallelism;
pub use strategies::{Strategy, StrategyConfig, StrategyResult};
