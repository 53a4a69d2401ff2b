//! Record and dataset types, file formats, and the synthetic generator.

mod dataset;
pub mod io;
mod quantile;
mod schema;
pub mod synthetic;

pub use dataset::{Dataset, ImmigrantRecord, Location, LocationId};
pub use quantile::{cap_outcomes, empirical_quantile, income_quantile_ranks, quantile_ranks};
pub use schema::{CovariateVector, Feature, FeatureKind, Schema, Value, MAX_LEVELS, MISSING_LEVEL};
pub use synthetic::{
    generate_synthetic, synthetic_schema, GeneratorConfig, GroundTruth, SelectionMode, TruthEntry, NOISE_FLOOR_SE,
    V_CONFOUNDED_MIN_GAP,
};
