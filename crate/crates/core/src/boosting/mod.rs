//! Stochastic gradient-boosted regression trees, CV tuning, and the
//! per-location model set.

mod cv;
mod ensemble;
pub mod linear;
mod location_models;
mod matrix;
mod tree;
mod tune;

pub use cv::{cross_validate, fold_assignment, CvCurve, CvSession};
pub use ensemble::{fit_boosted, BoostParams, BoostedModel, FitReport};
pub use location_models::{
    fit_location_models, linear_baseline_r_squared, model_row, model_schema, training_targets, LocationMeta,
    ModelSet, TrainConfig, LOCATION_FEATURES,
};
pub use matrix::BinnedMatrix;
pub use tree::{fit_tree, Node, RegressionTree, SplitRule, TreeParams, TreeSize};
pub use tune::{fold_seed, tune, tune_cell, CellResult, GridCell, InteractionRule, TuneResult, TuningGrid, TREE_CEILING};
