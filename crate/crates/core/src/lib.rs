//! Operator-selection learning for interactive description refinement.
//!
//! Selectors vote over the operators that can modify a description, the
//! votes are weighted and aggregated, a bandit picks the operator, and the
//! user's next request turns into a reward that updates the weights. A
//! simulated user and a surrogate description generator close the loop.

pub mod autouser;
pub mod config;
pub mod decision;
pub mod engine;
pub mod env;
pub mod history;
pub mod learning;
pub mod log;
pub mod metrics;
pub mod operators;
pub mod seed;
pub mod selectors;
pub mod stats;
pub mod vote;
