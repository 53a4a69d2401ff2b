use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ensemble::{fit_boosted, BoostedModel};
use super::linear;
use super::matrix::BinnedMatrix;
use super::tune::{fold_seed, tune, CellResult, TuningGrid};
use crate::data::{cap_outcomes, io, CovariateVector, Dataset, Feature, Location, LocationId, Schema, Value};
use crate::error::{Error, Result};
use crate::seed;

/// Location-level predictors appended to every model row.
pub const LOCATION_FEATURES: [&str; 2] = ["location_population", "location_unemployment"];

/// Schema of model rows: the dataset schema plus location-level predictors.
pub fn model_schema(schema: &Schema) -> Result<Schema> {
    schema.extended(&[Feature::numeric(LOCATION_FEATURES[0], Some("persons")), Feature::numeric(LOCATION_FEATURES[1], Some("fraction"))])
}

/// Model row for covariates evaluated at a given location.
pub fn model_row(x: &CovariateVector, location: &Location) -> Vec<Value> {
    let mut row = x.0.clone();
    row.push(Value::Num(location.population as f64));
    row.push(Value::Num(location.unemployment_rate));
    row
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub grid: TuningGrid,
    /// Locations with fewer training rows are left unmodeled.
    pub min_rows: usize,
    /// Upper quantile at which training outcomes are capped.
    pub outcome_cap_quantile: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { grid: TuningGrid::desk(), min_rows: 50, outcome_cap_quantile: Some(0.99), seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationMeta {
    pub n_rows: usize,
    pub chosen: CellResult,
    pub cells: Vec<CellResult>,
    /// Sum and sum of squares of the (capped) training outcomes.
    pub sum_y: f64,
    pub sum_y2: f64,
}

/// One fitted model per sufficiently populated location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub model_schema: Schema,
    pub schema_fingerprint: String,
    pub models: BTreeMap<LocationId, BoostedModel>,
    pub meta: BTreeMap<LocationId, LocationMeta>,
    /// Locations below `min_rows`, with their row counts.
    pub unmodeled: BTreeMap<LocationId, usize>,
    pub config: TrainConfig,
}

struct LocationFit {
    location: LocationId,
    model: BoostedModel,
    meta: LocationMeta,
}

/// Training targets after truncation at 0 and the configured upper quantile.
pub fn training_targets(train: &Dataset, cap: Option<f64>) -> Vec<f64> {
    cap_outcomes(&train.outcomes(), cap)
}

fn rows_by_location(train: &Dataset) -> BTreeMap<LocationId, Vec<usize>> {
    let mut by_loc: BTreeMap<LocationId, Vec<usize>> = train.locations.iter().map(|l| (l.id, Vec::new())).collect();
    for (i, r) in train.records.iter().enumerate() {
        by_loc.entry(r.landing).or_default().push(i);
    }
    by_loc
}

fn fit_one(
    train: &Dataset,
    schema: &Schema,
    targets: &[f64],
    location: &Location,
    indices: &[usize],
    config: &TrainConfig,
) -> Result<LocationFit> {
    let loc_seed = seed::derive(config.seed, location.id.0 as u64);
    let rows: Vec<Vec<Value>> = indices.iter().map(|&i| model_row(&train.records[i].covariates, location)).collect();
    let y: Vec<f64> = indices.iter().map(|&i| targets[i]).collect();
    let matrix = BinnedMatrix::from_rows(schema, &rows);
    let all: Vec<u32> = (0..rows.len() as u32).collect();
    let tuned = tune(&matrix, &all, &y, &config.grid, loc_seed)?;
    let params = tuned.best_params(&config.grid);
    let (model, _) = fit_boosted(schema, &matrix, &all, &y, &params, location.id, seed::derive(loc_seed, u64::MAX))?;
    let meta = LocationMeta {
        n_rows: rows.len(),
        chosen: tuned.best,
        cells: tuned.cells,
        sum_y: y.iter().sum(),
        sum_y2: y.iter().map(|v| v * v).sum(),
    };
    Ok(LocationFit { location: location.id, model, meta })
}

/// Tune and fit a boosted model for every location with at least
/// `min_rows` training records. Each location uses a seed derived from the
/// root seed and its id, so parallel and serial runs agree exactly.
pub fn fit_location_models(train: &Dataset, config: &TrainConfig) -> Result<ModelSet> {
    config.grid.validate()?;
    let schema = model_schema(&train.schema)?;
    let targets = training_targets(train, config.outcome_cap_quantile);
    let by_loc = rows_by_location(train);
    let mut unmodeled = BTreeMap::new();
    let mut jobs = Vec::new();
    for loc in &train.locations {
        let idx = &by_loc[&loc.id];
        if idx.len() < config.min_rows.max(config.grid.folds) {
            log::warn!("location {} has {} rows; left unmodeled", loc.id, idx.len());
            unmodeled.insert(loc.id, idx.len());
        } else {
            jobs.push((loc, idx.as_slice()));
        }
    }
    if jobs.is_empty() {
        return Err(Error::NoModelableLocations { min_rows: config.min_rows });
    }
    let run = |(loc, idx): &(&Location, &[usize])| fit_one(train, &schema, &targets, loc, idx, config);
    #[cfg(feature = "parallel")]
    let fits: Vec<Result<LocationFit>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fits: Vec<Result<LocationFit>> = jobs.iter().map(run).collect();

    let mut models = BTreeMap::new();
    let mut meta = BTreeMap::new();
    for fit in fits {
        let fit = fit?;
        models.insert(fit.location, fit.model);
        meta.insert(fit.location, fit.meta);
    }
    Ok(ModelSet { schema_fingerprint: schema.fingerprint(), model_schema: schema, models, meta, unmodeled, config: config.clone() })
}

/// Manifest written next to the per-location model files.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelSetManifest {
    model_schema: Schema,
    schema_fingerprint: String,
    model_files: BTreeMap<LocationId, String>,
    meta: BTreeMap<LocationId, LocationMeta>,
    unmodeled: BTreeMap<LocationId, usize>,
    config: TrainConfig,
}

impl ModelSet {
    pub fn locations(&self) -> impl Iterator<Item = LocationId> + '_ {
        self.models.keys().copied()
    }

    pub fn model(&self, location: LocationId) -> Result<&BoostedModel> {
        self.models.get(&location).ok_or(Error::UnmodeledLocation(location))
    }

    /// Predicted outcome for covariates `x` if placed in `location`.
    pub fn predict(&self, x: &CovariateVector, location: &Location) -> Result<f64> {
        Ok(self.model(location.id)?.predict(&model_row(x, location)))
    }

    /// Pooled cross-validated R^2 over all modeled locations.
    pub fn cv_r_squared(&self) -> f64 {
        let sse: f64 = self.meta.values().map(|m| m.chosen.cv_sse).sum();
        1.0 - sse / self.total_sum_of_squares()
    }

    fn total_sum_of_squares(&self) -> f64 {
        let n: f64 = self.meta.values().map(|m| m.n_rows as f64).sum();
        let sum: f64 = self.meta.values().map(|m| m.sum_y).sum();
        let sum2: f64 = self.meta.values().map(|m| m.sum_y2).sum();
        sum2 - sum * sum / n
    }

    /// Rows of the tuning report: `(location, depth, rate, bag, best_trees, cv_rmse)`.
    pub fn tuning_report(&self) -> Vec<(LocationId, &CellResult)> {
        self.meta.iter().flat_map(|(loc, m)| m.cells.iter().map(move |c| (*loc, c))).collect()
    }

    pub fn write_tuning_report(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["location", "depth", "rate", "bag", "best_trees", "cv_rmse", "chosen"])?;
        for (loc, c) in self.tuning_report() {
            let chosen = self.meta[&loc].chosen == *c;
            w.write_record([
                loc.to_string(),
                c.cell.interaction_depth.to_string(),
                c.cell.learning_rate.to_string(),
                c.cell.bag_fraction.to_string(),
                c.best_trees.to_string(),
                c.cv_rmse.to_string(),
                chosen.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Write `modelset.json` plus one `<location>.model.json` per model.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = BTreeMap::new();
        for (loc, model) in &self.models {
            let name = format!("{loc}.model.json");
            io::write_json(&dir.join(&name), model)?;
            files.insert(*loc, name);
        }
        let manifest = ModelSetManifest {
            model_schema: self.model_schema.clone(),
            schema_fingerprint: self.schema_fingerprint.clone(),
            model_files: files,
            meta: self.meta.clone(),
            unmodeled: self.unmodeled.clone(),
            config: self.config.clone(),
        };
        io::write_json(&dir.join("modelset.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<ModelSet> {
        let manifest: ModelSetManifest = io::read_json(&dir.join("modelset.json"))?;
        let mut models = BTreeMap::new();
        for (loc, file) in &manifest.model_files {
            let model: BoostedModel = io::read_json(&dir.join(file))?;
            if model.schema_fingerprint != manifest.schema_fingerprint {
                return Err(Error::Data(format!("model file {file} was trained on a different schema")));
            }
            models.insert(*loc, model);
        }
        Ok(ModelSet {
            model_schema: manifest.model_schema,
            schema_fingerprint: manifest.schema_fingerprint,
            models,
            meta: manifest.meta,
            unmodeled: manifest.unmodeled,
            config: manifest.config,
        })
    }
}

/// CV R^2 of a per-location one-hot OLS baseline, scored on exactly the
/// folds and capped targets used when tuning `models`.
pub fn linear_baseline_r_squared(train: &Dataset, models: &ModelSet) -> Result<f64> {
    let schema = &models.model_schema;
    let targets = training_targets(train, models.config.outcome_cap_quantile);
    let by_loc = rows_by_location(train);
    let mut sse = 0.0;
    for loc_id in models.locations() {
        let loc = train.location(loc_id).ok_or(Error::UnmodeledLocation(loc_id))?;
        let idx = &by_loc[&loc_id];
        let rows: Vec<Vec<Value>> = idx.iter().map(|&i| model_row(&train.records[i].covariates, loc)).collect();
        let y: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        let loc_seed = seed::derive(models.config.seed, loc_id.0 as u64);
        let folds = super::fold_assignment(rows.len(), models.config.grid.folds, fold_seed(loc_seed))?;
        sse += linear::cv_sse(schema, &rows, &y, &folds);
    }
    Ok(1.0 - sse / models.total_sum_of_squares())
}
