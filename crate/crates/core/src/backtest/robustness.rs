use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::config::{ComplianceMode, SimulationConfig};
use super::run::{simulate, BacktestInputs, SimulationSummary};
use crate::data::{Location, LocationId};
use crate::error::{Error, Result};
use crate::preferences::Phi;
use crate::recommender::OutcomeMode;
use crate::stats;

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pi_max: f64,
    pub phi: Phi,
    pub compliance_mode: ComplianceMode,
    pub outcome_mode: OutcomeMode,
    pub z: usize,
    pub n_runs: usize,
    pub cohort_gain: f64,
    pub cohort_ci_low: f64,
    pub cohort_ci_high: f64,
    pub complier_gain: Option<f64>,
    pub complier_ci_low: Option<f64>,
    pub complier_ci_high: Option<f64>,
    pub complier_fraction: f64,
    pub mean_compliance: f64,
}

impl SweepRow {
    pub fn from_summary(s: &SimulationSummary) -> SweepRow {
        SweepRow {
            pi_max: s.config.pi_max,
            phi: s.config.phi,
            compliance_mode: s.config.compliance_mode,
            outcome_mode: s.config.outcome_mode,
            z: s.config.z,
            n_runs: s.config.n_runs,
            cohort_gain: s.cohort_gain.mean,
            cohort_ci_low: s.cohort_gain.ci_low,
            cohort_ci_high: s.cohort_gain.ci_high,
            complier_gain: s.complier_gain.map(|e| e.mean),
            complier_ci_low: s.complier_gain.map(|e| e.ci_low),
            complier_ci_high: s.complier_gain.map(|e| e.ci_high),
            complier_fraction: s.complier_fraction.mean,
            mean_compliance: s.mean_compliance,
        }
    }
}

/// Every `(pi_max, phi)` combination on top of `base`, pi-major.
pub fn sweep_grid(base: &SimulationConfig, pi_values: &[f64], phi_values: &[Phi]) -> Vec<SimulationConfig> {
    pi_values
        .iter()
        .flat_map(|&pi_max| phi_values.iter().map(move |&phi| SimulationConfig { pi_max, phi, ..base.clone() }))
        .collect()
}

pub fn sweep(inputs: &BacktestInputs<'_>, configs: &[SimulationConfig]) -> Result<Vec<SweepRow>> {
    if configs.is_empty() {
        return Err(Error::Config("sweep needs at least one scenario".into()));
    }
    configs.iter().map(|c| simulate(inputs, c).map(|s| SweepRow::from_summary(&s))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRow {
    pub excluded: LocationId,
    pub cohort_gain: f64,
    pub complier_gain: Option<f64>,
}

/// Gains with each modeled location dropped in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub baseline_cohort_gain: f64,
    pub rows: Vec<LooRow>,
    pub mean: f64,
    /// Normal 95% interval for the across-exclusion mean.
    pub mean_ci_low: f64,
    pub mean_ci_high: f64,
    /// Reported interval: the range of the per-exclusion gains, which
    /// contains each of them by construction.
    pub interval_low: f64,
    pub interval_high: f64,
}

pub fn leave_one_out(inputs: &BacktestInputs<'_>, base: &SimulationConfig) -> Result<LooReport> {
    let candidates: Vec<LocationId> =
        inputs.matrix.locations.iter().copied().filter(|l| !base.excluded_locations.contains(l)).collect();
    if candidates.len() < 2 {
        return Err(Error::Config("leave-one-out needs at least 2 locations".into()));
    }
    let baseline = simulate(inputs, base)?.cohort_gain.mean;
    let mut rows = Vec::with_capacity(candidates.len());
    for loc in candidates {
        let mut config = base.clone();
        config.excluded_locations.insert(loc);
        let s = simulate(inputs, &config)?;
        rows.push(LooRow { excluded: loc, cohort_gain: s.cohort_gain.mean, complier_gain: s.complier_gain.map(|e| e.mean) });
    }
    let gains: Vec<f64> = rows.iter().map(|r| r.cohort_gain).collect();
    let (mean_ci_low, mean_ci_high) = stats::mean_ci95(&gains);
    Ok(LooReport {
        baseline_cohort_gain: baseline,
        mean: stats::mean(&gains),
        mean_ci_low,
        mean_ci_high,
        interval_low: gains.iter().cloned().fold(f64::INFINITY, f64::min),
        interval_high: gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        rows,
    })
}

/// Location subsets removed from consideration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SubsetRule {
    /// Population at or above the threshold.
    Large { min_population: u64 },
    /// Large and growing at least `min_growth` per year.
    LargeAndGrowing { min_population: u64, min_growth: f64 },
    /// Population below the threshold.
    Small { max_population: u64 },
}

impl SubsetRule {
    pub fn excludes(&self, l: &Location) -> bool {
        match *self {
            SubsetRule::Large { min_population } => l.population >= min_population,
            SubsetRule::LargeAndGrowing { min_population, min_growth } => {
                l.population >= min_population && l.growth_rate >= min_growth
            }
            SubsetRule::Small { max_population } => l.population < max_population,
        }
    }

    pub fn excluded(&self, locations: &[Location]) -> BTreeSet<LocationId> {
        locations.iter().filter(|l| self.excludes(l)).map(|l| l.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub rule: SubsetRule,
    pub excluded: BTreeSet<LocationId>,
    pub summary: SimulationSummary,
}

pub fn subset_removal(inputs: &BacktestInputs<'_>, base: &SimulationConfig, rule: SubsetRule) -> Result<SubsetReport> {
    let excluded = rule.excluded(&inputs.cohort.locations);
    if inputs.matrix.locations.iter().all(|l| excluded.contains(l) || base.excluded_locations.contains(l)) {
        return Err(Error::Config(format!("rule {rule:?} excludes every modeled location")));
    }
    let mut config = base.clone();
    config.excluded_locations.extend(excluded.iter().copied());
    Ok(SubsetReport { rule, excluded, summary: simulate(inputs, &config)? })
}
