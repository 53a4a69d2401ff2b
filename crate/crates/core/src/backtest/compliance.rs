use serde::{Deserialize, Serialize};

use super::config::ComplianceMode;
use crate::data::{income_quantile_ranks, Dataset};
use crate::error::{Error, Result};

/// Per-individual probability of following the recommendation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceAssignment {
    pub pi: Vec<f64>,
}

impl ComplianceAssignment {
    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.pi)
    }
}

/// Linear mode sets `pi_i = pi_max (1 - q_i)` with `q_i` the income
/// quantile rank, so the lowest earners are most likely to comply.
pub fn assign_compliance(dataset: &Dataset, pi_max: f64, mode: ComplianceMode) -> Result<ComplianceAssignment> {
    if !(0.0..=1.0).contains(&pi_max) {
        return Err(Error::Config(format!("pi_max must lie in [0, 1], got {pi_max}")));
    }
    let pi = match mode {
        ComplianceMode::Constant => vec![pi_max; dataset.len()],
        ComplianceMode::LinearInQuantile => income_quantile_ranks(dataset).into_iter().map(|q| pi_max * (1.0 - q)).collect(),
    };
    Ok(ComplianceAssignment { pi })
}
