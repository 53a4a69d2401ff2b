use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::LocationId;
use crate::error::{Error, Result};
use crate::preferences::Phi;
use crate::recommender::OutcomeMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComplianceMode {
    /// `pi_max` at the lowest income falling linearly to 0 at the highest.
    #[default]
    LinearInQuantile,
    Constant,
}

impl std::fmt::Display for ComplianceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ComplianceMode::LinearInQuantile => "linear-in-quantile",
            ComplianceMode::Constant => "constant",
        })
    }
}

impl std::str::FromStr for ComplianceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-in-quantile" | "linear" => Ok(ComplianceMode::LinearInQuantile),
            "constant" => Ok(ComplianceMode::Constant),
            other => Err(Error::Config(format!("unknown compliance mode `{other}`"))),
        }
    }
}

pub const DEFAULT_SUBGROUPS: [&str; 5] = ["gender", "education", "case_size", "arrival_year", "category"];

fn default_z() -> usize {
    3
}
fn default_runs() -> usize {
    100
}
fn default_min_cell() -> usize {
    10
}
fn default_subgroups() -> Vec<String> {
    DEFAULT_SUBGROUPS.iter().map(|s| s.to_string()).collect()
}
fn default_seed() -> u64 {
    1
}

/// One backtest scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub pi_max: f64,
    #[serde(default)]
    pub compliance_mode: ComplianceMode,
    pub phi: Phi,
    #[serde(default = "default_z")]
    pub z: usize,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub outcome_mode: OutcomeMode,
    #[serde(default)]
    pub excluded_locations: BTreeSet<LocationId>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Subgroup levels with fewer individuals are suppressed.
    #[serde(default = "default_min_cell")]
    pub min_cell: usize,
    #[serde(default = "default_subgroups")]
    pub subgroups: Vec<String>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            pi_max: 0.3,
            compliance_mode: ComplianceMode::default(),
            phi: Phi::Top(10),
            z: default_z(),
            n_runs: default_runs(),
            outcome_mode: OutcomeMode::default(),
            excluded_locations: BTreeSet::new(),
            seed: default_seed(),
            min_cell: default_min_cell(),
            subgroups: default_subgroups(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pi_max) {
            return Err(Error::Config(format!("pi_max must lie in [0, 1], got {}", self.pi_max)));
        }
        self.phi.validate()?;
        if self.z < 1 {
            return Err(Error::Config("z must be at least 1".into()));
        }
        if self.n_runs < 1 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        Ok(())
    }
}
