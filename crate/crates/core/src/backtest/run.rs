use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::compliance::{assign_compliance, ComplianceAssignment};
use super::config::SimulationConfig;
use crate::data::{Dataset, LocationId};
use crate::error::{Error, Result};
use crate::preferences::{acceptable_set, Phi, PreferenceRanking};
use crate::recommender::{recommend, PredictionMatrix};
use crate::seed;
use crate::stats::{self, KahanSum};

/// Per-individual draw streams within a run.
const COMPLIANCE_DRAW: u64 = 0;
const CHOICE_DRAW: u64 = 1;
const TIE_BREAK_STREAM: u64 = 2;

/// The cohort, its prediction matrix, and its preference rankings, aligned
/// row by row.
#[derive(Debug, Clone, Copy)]
pub struct BacktestInputs<'a> {
    pub cohort: &'a Dataset,
    pub matrix: &'a PredictionMatrix,
    pub rankings: &'a [PreferenceRanking],
}

impl BacktestInputs<'_> {
    pub fn validate(&self) -> Result<()> {
        let n = self.cohort.len();
        if self.matrix.n() != n || self.rankings.len() != n {
            return Err(Error::Data(format!(
                "cohort has {n} records but the matrix has {} rows and {} rankings",
                self.matrix.n(),
                self.rankings.len()
            )));
        }
        if let Some((r, id)) = self.cohort.records.iter().zip(&self.matrix.ids).find(|(r, id)| r.id != **id) {
            return Err(Error::Data(format!("matrix row for id {id} is aligned with record {}", r.id)));
        }
        Ok(())
    }
}

/// Everything about a scenario that does not change between runs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub compliance: ComplianceAssignment,
    /// Acceptable set after exclusions, restricted to modeled locations.
    /// `None` when the actual location is unmodeled.
    pub sets: Vec<Option<Vec<LocationId>>>,
    /// Individuals skipped because their landing location has no model.
    pub skipped: usize,
    /// Individuals whose acceptable set was emptied by exclusions.
    pub emptied: usize,
}

pub fn prepare(inputs: &BacktestInputs<'_>, config: &SimulationConfig) -> Result<Scenario> {
    config.validate()?;
    inputs.validate()?;
    if inputs.matrix.mode() != config.outcome_mode {
        return Err(Error::Config(format!(
            "scenario asks for {} outcomes but the matrix holds {}",
            config.outcome_mode,
            inputs.matrix.mode()
        )));
    }
    if let Some(unknown) = config.excluded_locations.iter().find(|l| inputs.cohort.location(**l).is_none()) {
        return Err(Error::Config(format!("excluded location {unknown} does not exist")));
    }
    if inputs.matrix.locations.iter().all(|l| config.excluded_locations.contains(l)) {
        return Err(Error::Config("exclusions remove every modeled location".into()));
    }
    let compliance = assign_compliance(inputs.cohort, config.pi_max, config.compliance_mode)?;
    let (mut skipped, mut emptied) = (0, 0);
    let mut sets = Vec::with_capacity(inputs.cohort.len());
    for (r, ranking) in inputs.cohort.records.iter().zip(inputs.rankings) {
        if inputs.matrix.column(r.landing).is_none() {
            skipped += 1;
            sets.push(None);
            continue;
        }
        let base = match config.phi {
            Phi::Unrestricted => inputs.matrix.locations.clone(),
            phi => acceptable_set(ranking, phi)?.locations,
        };
        let set: Vec<LocationId> = base
            .into_iter()
            .filter(|l| !config.excluded_locations.contains(l) && inputs.matrix.column(*l).is_some())
            .collect();
        emptied += set.is_empty() as usize;
        sets.push(Some(set));
    }
    if skipped > 0 {
        log::warn!("{skipped} individuals landed in unmodeled locations and are skipped");
    }
    if emptied > 0 {
        log::warn!("{emptied} individuals have no acceptable location left and are treated as non-compliers");
    }
    Ok(Scenario { compliance, sets, skipped, emptied })
}

/// One Monte Carlo replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub run: usize,
    pub chosen: Vec<LocationId>,
    pub gains: Vec<f64>,
    pub complied: Vec<bool>,
    pub compliers: usize,
    pub total_gain: f64,
}

impl SimulationRun {
    pub fn n(&self) -> usize {
        self.gains.len()
    }

    /// Mean gain over the whole cohort, non-compliers included.
    pub fn cohort_gain(&self) -> f64 {
        self.total_gain / self.n() as f64
    }

    pub fn complier_gain(&self) -> Option<f64> {
        (self.compliers > 0).then(|| self.total_gain / self.compliers as f64)
    }

    pub fn complier_fraction(&self) -> f64 {
        self.compliers as f64 / self.n() as f64
    }
}

/// Draw compliance, recommendations and uptake for every individual.
///
/// Draws are keyed by `(run seed, individual id)`, so the same individual
/// sees the same uniforms under every scenario that shares a root seed.
pub fn simulate_run(inputs: &BacktestInputs<'_>, scenario: &Scenario, config: &SimulationConfig, run: usize) -> SimulationRun {
    let run_seed = seed::derive(config.seed, run as u64);
    let n = inputs.cohort.len();
    let mut chosen = Vec::with_capacity(n);
    let mut gains = Vec::with_capacity(n);
    let mut complied = Vec::with_capacity(n);
    let mut total = KahanSum::default();
    for (i, r) in inputs.cohort.records.iter().enumerate() {
        let stay = |chosen: &mut Vec<LocationId>, gains: &mut Vec<f64>, complied: &mut Vec<bool>| {
            chosen.push(r.landing);
            gains.push(0.0);
            complied.push(false);
        };
        let Some(set) = &scenario.sets[i] else {
            stay(&mut chosen, &mut gains, &mut complied);
            continue;
        };
        // a draw exactly equal to pi counts as non-compliance
        let u = seed::unit(seed::derive2(run_seed, r.id, COMPLIANCE_DRAW));
        if !(u < scenario.compliance.pi[i]) || set.is_empty() {
            stay(&mut chosen, &mut gains, &mut complied);
            continue;
        }
        let row = inputs.matrix.row(i);
        let mut rng = seed::rng(seed::derive2(run_seed, r.id, TIE_BREAK_STREAM));
        let rec = recommend(row, set, config.z, &mut rng);
        let z_prime = rec.locations.len();
        let pick = ((seed::unit(seed::derive2(run_seed, r.id, CHOICE_DRAW)) * z_prime as f64) as usize).min(z_prime - 1);
        let actual = row.value(r.landing).expect("actual location is modeled");
        let gain = rec.values[pick] - actual;
        chosen.push(rec.locations[pick]);
        gains.push(gain);
        complied.push(true);
        total.add(gain);
    }
    let compliers = complied.iter().filter(|&&c| c).count();
    SimulationRun { run, chosen, gains, complied, compliers, total_gain: total.value() }
}

/// Mean over runs with a normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Estimate {
        let (ci_low, ci_high) = stats::mean_ci95(values);
        Estimate { mean: stats::mean(values), sd: stats::sample_sd(values), ci_low, ci_high }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub run: usize,
    pub cohort_gain: f64,
    pub complier_gain: Option<f64>,
    pub complier_fraction: f64,
    pub compliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub location: LocationId,
    pub before: usize,
    /// Mean over runs.
    pub after: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub feature: String,
    pub level: String,
    pub n: usize,
    /// Absent when the level has fewer than `min_cell` individuals.
    pub mean_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub config: SimulationConfig,
    pub n: usize,
    pub mean_compliance: f64,
    pub cohort_gain: Estimate,
    /// Over runs with at least one complier.
    pub complier_gain: Option<Estimate>,
    pub complier_fraction: Estimate,
    pub skipped: usize,
    pub emptied_sets: usize,
    pub location_shift: Vec<ShiftRow>,
    pub subgroups: Vec<SubgroupRow>,
    pub runs: Vec<RunTrace>,
    /// Mean gain per individual across runs, in cohort order.
    #[serde(skip)]
    pub individual_gains: Vec<f64>,
}

/// Run every replication of a scenario.
pub fn simulate_runs(inputs: &BacktestInputs<'_>, config: &SimulationConfig) -> Result<(Scenario, Vec<SimulationRun>)> {
    let scenario = prepare(inputs, config)?;
    let one = |run: usize| simulate_run(inputs, &scenario, config, run);
    #[cfg(feature = "parallel")]
    let runs = {
        use rayon::prelude::*;
        (0..config.n_runs).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs = (0..config.n_runs).map(one).collect();
    Ok((scenario, runs))
}

pub fn simulate(inputs: &BacktestInputs<'_>, config: &SimulationConfig) -> Result<SimulationSummary> {
    let (scenario, runs) = simulate_runs(inputs, config)?;
    summarize(inputs, config, &scenario, &runs)
}

/// Average a set of runs into a summary.
pub fn summarize(
    inputs: &BacktestInputs<'_>,
    config: &SimulationConfig,
    scenario: &Scenario,
    runs: &[SimulationRun],
) -> Result<SimulationSummary> {
    let cohort = inputs.cohort;
    let n = cohort.len();
    let cohort_gains: Vec<f64> = runs.iter().map(SimulationRun::cohort_gain).collect();
    let complier_gains: Vec<f64> = runs.iter().filter_map(SimulationRun::complier_gain).collect();
    let fractions: Vec<f64> = runs.iter().map(SimulationRun::complier_fraction).collect();

    let mut individual = vec![KahanSum::default(); n];
    let mut after: BTreeMap<LocationId, usize> = cohort.locations.iter().map(|l| (l.id, 0)).collect();
    for run in runs {
        for (acc, g) in individual.iter_mut().zip(&run.gains) {
            acc.add(*g);
        }
        for l in &run.chosen {
            *after.entry(*l).or_default() += 1;
        }
    }
    let individual_gains: Vec<f64> = individual.iter().map(|s| s.value() / runs.len() as f64).collect();
    let location_shift = cohort
        .landing_counts()
        .into_iter()
        .map(|(location, before)| {
            let after = after[&location] as f64 / runs.len() as f64;
            ShiftRow { location, before, after, delta: after - before as f64 }
        })
        .collect();

    let mut subgroups = Vec::new();
    for feature in &config.subgroups {
        if feature != "case_size" && cohort.schema.index_of(feature).is_none() {
            log::warn!("subgroup feature `{feature}` is not in the schema; skipped");
            continue;
        }
        subgroups.extend(subgroup_gains(cohort, &individual_gains, feature, config.min_cell)?);
    }

    Ok(SimulationSummary {
        config: config.clone(),
        n,
        mean_compliance: scenario.compliance.mean(),
        cohort_gain: Estimate::of(&cohort_gains),
        complier_gain: (!complier_gains.is_empty()).then(|| Estimate::of(&complier_gains)),
        complier_fraction: Estimate::of(&fractions),
        skipped: scenario.skipped,
        emptied_sets: scenario.emptied,
        location_shift,
        subgroups,
        runs: runs
            .iter()
            .map(|r| RunTrace {
                run: r.run,
                cohort_gain: r.cohort_gain(),
                complier_gain: r.complier_gain(),
                complier_fraction: r.complier_fraction(),
                compliers: r.compliers,
            })
            .collect(),
        individual_gains,
    })
}

/// Mean per-individual gain by level of `feature`; levels with fewer than
/// `min_cell` individuals report no mean.
pub fn subgroup_gains(cohort: &Dataset, gains: &[f64], feature: &str, min_cell: usize) -> Result<Vec<SubgroupRow>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (r, g) in cohort.records.iter().zip(gains) {
        groups.entry(cohort.group_label(r, feature)?).or_default().push(*g);
    }
    Ok(groups
        .into_iter()
        .map(|(level, values)| SubgroupRow {
            feature: feature.to_string(),
            n: values.len(),
            mean_gain: (values.len() >= min_cell).then(|| stats::mean(&values)),
            level,
        })
        .collect())
}
