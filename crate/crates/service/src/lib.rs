//! Command-line pipeline and HTTP service over the geomatch core.

pub mod api;
pub mod cli;
pub mod manifest;
pub mod pipeline;
