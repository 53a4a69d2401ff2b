//! Data-driven settlement-location recommendations.
//!
//! Per-location gradient-boosted earnings models predict what an individual
//! would earn in every location; recommendations pick the best predicted
//! locations inside the individual's acceptable set. The backtest module
//! replays recommendations over a historical (or synthetic) cohort under
//! partial compliance, and the bias audit measures the selection bias of
//! chooser-only estimates against known potential outcomes.

pub mod backtest;
pub mod biasaudit;
pub mod boosting;
pub mod data;
mod error;
pub mod preferences;
pub mod recommender;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
