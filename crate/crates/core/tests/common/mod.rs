#![allow(dead_code)]

use geomatch::boosting::{InteractionRule, TrainConfig, TuningGrid};
use geomatch::data::{generate_synthetic, Dataset, GeneratorConfig, GroundTruth, LocationId, SelectionMode};
use geomatch::preferences::{fit_mnl, rank_dataset, MnlConfig, PreferenceRanking};
use geomatch::recommender::{OutcomeOptions, PredictionMatrix};

pub fn world(n: usize, k: usize, selection: SelectionMode, seed: u64) -> (Dataset, GroundTruth) {
    generate_synthetic(&GeneratorConfig { n, k, selection, seed, ..Default::default() }).unwrap()
}

/// A grid small enough for unit-scale tests.
pub fn tiny_grid() -> TuningGrid {
    TuningGrid {
        interaction_depths: vec![2],
        learning_rates: vec![0.1],
        bag_fractions: vec![0.5],
        initial_max_trees: 40,
        extension_step: 20,
        proximity_threshold: 5,
        interaction_rule: InteractionRule::Depth,
        min_node: 10,
        folds: 3,
    }
}

pub fn tiny_train_config() -> TrainConfig {
    TrainConfig { grid: tiny_grid(), min_rows: 30, ..Default::default() }
}

/// A matrix holding the true potential outcomes, standing in for fitted
/// predictions where model quality is irrelevant.
pub fn truth_matrix(data: &Dataset, truth: &GroundTruth) -> PredictionMatrix {
    PredictionMatrix {
        ids: data.records.iter().map(|r| r.id).collect(),
        locations: data.locations.iter().map(|l| l.id).collect(),
        values: truth.entries.iter().flat_map(|t| t.potential_outcomes.iter().copied()).collect(),
        options: OutcomeOptions::default(),
    }
}

pub fn rankings(data: &Dataset, seed: u64) -> Vec<PreferenceRanking> {
    let mnl = fit_mnl(data, &MnlConfig::default().for_schema(&data.schema)).unwrap();
    rank_dataset(&mnl, data, seed)
}

pub fn ids(v: &[u32]) -> Vec<LocationId> {
    v.iter().map(|&i| LocationId(i)).collect()
}
