//! Browser demo: a small synthetic world fitted in the page, with top-z
//! recommendations and a compliance backtest exposed as JSON strings.

use geomatch::backtest::{simulate, BacktestInputs, SimulationConfig};
use geomatch::boosting::{fit_location_models, InteractionRule, ModelSet, TrainConfig, TuningGrid};
use geomatch::data::{generate_synthetic, Dataset, GeneratorConfig, LocationId};
use geomatch::preferences::{fit_mnl, rank_dataset, MnlConfig, Phi, PreferenceRanking};
use geomatch::recommender::{build_prediction_matrix, recommend, OutcomeOptions, PredictionMatrix};
use geomatch::seed;
use serde_json::json;
use wasm_bindgen::prelude::*;

pub const DEMO_N: usize = 3_000;
pub const DEMO_K: usize = 8;
pub const MAX_RUNS: usize = 50;

/// One fixed tuning cell keeps in-page training to a few seconds.
fn demo_grid() -> TuningGrid {
    TuningGrid {
        interaction_depths: vec![3],
        learning_rates: vec![0.1],
        bag_fractions: vec![0.5],
        initial_max_trees: 150,
        extension_step: 50,
        proximity_threshold: 10,
        interaction_rule: InteractionRule::Depth,
        min_node: 10,
        folds: 3,
    }
}

#[wasm_bindgen]
pub struct Demo {
    seed: u64,
    data: Dataset,
    models: ModelSet,
    matrix: PredictionMatrix,
    rankings: Vec<PreferenceRanking>,
}

impl Demo {
    pub fn build(seed: u64) -> Result<Demo, String> {
        let err = |e: geomatch::Error| e.to_string();
        let (data, _) = generate_synthetic(&GeneratorConfig { n: DEMO_N, k: DEMO_K, seed, ..Default::default() }).map_err(err)?;
        let models = fit_location_models(&data, &TrainConfig { grid: demo_grid(), min_rows: 30, seed, ..Default::default() })
            .map_err(err)?;
        let mnl = fit_mnl(&data, &MnlConfig::default().for_schema(&data.schema)).map_err(err)?;
        let matrix = build_prediction_matrix(&models, &data, &OutcomeOptions::default(), None).map_err(err)?;
        let rankings = rank_dataset(&mnl, &data, seed);
        Ok(Demo { seed, data, models, matrix, rankings })
    }

    pub fn locations(&self) -> String {
        let rows: Vec<_> = self
            .data
            .locations
            .iter()
            .map(|l| {
                json!({
                    "id": l.id, "name": l.name, "population": l.population,
                    "annual_rent": l.annual_rent, "modeled": self.models.model(l.id).is_ok(),
                })
            })
            .collect();
        json!({ "locations": rows, "cv_r_squared": self.models.cv_r_squared() }).to_string()
    }

    /// Profile, actual landing and preference order of cohort member `index`.
    pub fn person(&self, index: usize) -> Result<String, String> {
        let r = self.data.records.get(index).ok_or_else(|| format!("no person {index}"))?;
        Ok(json!({
            "index": index,
            "profile": self.data.schema.covariates_to_json(&r.covariates),
            "landing": r.landing,
            "outcome": r.outcome,
            "preference_order": self.rankings[index].order,
        })
        .to_string())
    }

    /// Top-z recommendations for cohort member `index`, excluding `excluded`.
    pub fn recommend(&self, index: usize, excluded: &[u32], z: usize) -> Result<String, String> {
        if index >= self.data.len() {
            return Err(format!("no person {index}"));
        }
        if z == 0 {
            return Err("z must be at least 1".into());
        }
        let acceptable: Vec<LocationId> =
            self.matrix.locations.iter().copied().filter(|l| !excluded.contains(&l.0)).collect();
        if acceptable.is_empty() {
            return Err("every modeled location is excluded".into());
        }
        let rec = recommend(self.matrix.row(index), &acceptable, z, &mut seed::rng(seed::derive(self.seed, index as u64)));
        let rows: Vec<_> =
            rec.locations.iter().zip(&rec.values).map(|(l, v)| json!({"location_id": l, "predicted_value": v})).collect();
        Ok(json!({ "recommendations": rows, "t": rec.t, "z": rec.z }).to_string())
    }

    /// Backtest with `phi = 0` meaning no preference restriction.
    pub fn simulate(&self, pi_max: f64, phi: usize, z: usize, runs: usize) -> Result<String, String> {
        if runs == 0 || runs > MAX_RUNS {
            return Err(format!("runs must be between 1 and {MAX_RUNS}"));
        }
        let phi = if phi == 0 { Phi::Unrestricted } else { Phi::Top(phi) };
        let config = SimulationConfig { pi_max, phi, z, n_runs: runs, seed: self.seed, ..Default::default() };
        let inputs = BacktestInputs { cohort: &self.data, matrix: &self.matrix, rankings: &self.rankings };
        let s = simulate(&inputs, &config).map_err(|e| e.to_string())?;
        Ok(json!({
            "cohort_gain": s.cohort_gain,
            "complier_gain": s.complier_gain,
            "complier_fraction": s.complier_fraction,
            "location_shift": s.location_shift,
        })
        .to_string())
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Demo, JsError> {
        Demo::build(seed).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = locations)]
    pub fn locations_json(&self) -> String {
        self.locations()
    }

    #[wasm_bindgen(js_name = size)]
    pub fn size(&self) -> usize {
        self.data.len()
    }

    #[wasm_bindgen(js_name = person)]
    pub fn person_json(&self, index: usize) -> Result<String, JsError> {
        self.person(index).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = recommend)]
    pub fn recommend_json(&self, index: usize, excluded: Vec<u32>, z: usize) -> Result<String, JsError> {
        self.recommend(index, &excluded, z).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = simulate)]
    pub fn simulate_json(&self, pi_max: f64, phi: usize, z: usize, runs: usize) -> Result<String, JsError> {
        self.simulate(pi_max, phi, z, runs).map_err(|e| JsError::new(&e))
    }
}
