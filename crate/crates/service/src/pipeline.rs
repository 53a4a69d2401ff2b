//! Pipeline stages over a manifest directory. Each stage reads only
//! verified upstream artifacts and records what it writes.

use std::path::Path;

use geomatch::boosting::{fit_location_models, model_schema, ModelSet, TrainConfig};
use geomatch::data::io::{
    load_dataset, load_ground_truth, load_locations, load_schema, write_dataset, write_ground_truth, write_json,
    write_locations, LoadWarnings,
};
use geomatch::data::{generate_synthetic, Dataset, GeneratorConfig, GroundTruth, Location};
use geomatch::preferences::{fit_mnl, rank_dataset, MnlConfig, MultinomialLogitModel, PreferenceRanking};
use geomatch::recommender::{build_prediction_matrix, rents_from_locations, OutcomeOptions, PredictionMatrix};
use geomatch::{Error, Result};

use crate::manifest::{role, PipelineManifest};

pub const SCHEMA_FILE: &str = "schema.json";
pub const LOCATIONS_FILE: &str = "locations.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const MODELS_DIR: &str = "models";
pub const TUNING_FILE: &str = "tuning.csv";
pub const PREFERENCES_FILE: &str = "preferences.json";
pub const MATRIX_FILE: &str = "matrix.csv";
pub const MATRIX_SIDECAR_FILE: &str = "matrix.json";

/// Write a synthetic population and its ground truth.
pub fn generate(manifest: &mut PipelineManifest, config: &GeneratorConfig) -> Result<Dataset> {
    let (data, truth) = generate_synthetic(config)?;
    std::fs::create_dir_all(manifest.dir()).map_err(|e| Error::io(manifest.dir(), e))?;
    manifest.root_seed = config.seed;
    write_json(&manifest.artifact_path(SCHEMA_FILE), &data.schema)?;
    write_locations(&manifest.artifact_path(LOCATIONS_FILE), &data.locations)?;
    write_dataset(&manifest.artifact_path(DATASET_FILE), &data)?;
    write_ground_truth(&manifest.artifact_path(TRUTH_FILE), &truth)?;
    manifest.artifacts.clear();
    manifest.record(role::SCHEMA, SCHEMA_FILE, &[])?;
    manifest.record(role::LOCATIONS, LOCATIONS_FILE, &[])?;
    manifest.record(role::DATASET, DATASET_FILE, &[role::SCHEMA, role::LOCATIONS])?;
    manifest.record(role::TRUTH, TRUTH_FILE, &[role::DATASET])?;
    manifest.save()?;
    Ok(data)
}

/// Copy an external schema, location table and dataset into the manifest
/// directory after checking they load together.
pub fn ingest(manifest: &mut PipelineManifest, schema: &Path, locations: &Path, dataset: &Path) -> Result<LoadWarnings> {
    let s = load_schema(schema)?;
    let (_, warnings) = load_dataset(dataset, &s, load_locations(locations)?)?;
    std::fs::create_dir_all(manifest.dir()).map_err(|e| Error::io(manifest.dir(), e))?;
    for (src, name) in [(schema, SCHEMA_FILE), (locations, LOCATIONS_FILE), (dataset, DATASET_FILE)] {
        let dst = manifest.artifact_path(name);
        if src != dst {
            std::fs::copy(src, &dst).map_err(|e| Error::io(src, e))?;
        }
    }
    manifest.artifacts.clear();
    manifest.record(role::SCHEMA, SCHEMA_FILE, &[])?;
    manifest.record(role::LOCATIONS, LOCATIONS_FILE, &[])?;
    manifest.record(role::DATASET, DATASET_FILE, &[role::SCHEMA, role::LOCATIONS])?;
    manifest.save()?;
    Ok(warnings)
}

pub fn load_locations_artifact(manifest: &PipelineManifest) -> Result<Vec<Location>> {
    load_locations(&manifest.verify(role::LOCATIONS)?)
}

pub fn load_schema_artifact(manifest: &PipelineManifest) -> Result<geomatch::data::Schema> {
    load_schema(&manifest.verify(role::SCHEMA)?)
}

pub fn load_dataset_artifact(manifest: &PipelineManifest) -> Result<Dataset> {
    let schema = load_schema_artifact(manifest)?;
    let locations = load_locations_artifact(manifest)?;
    let (data, warnings) = load_dataset(&manifest.verify(role::DATASET)?, &schema, locations)?;
    if warnings.unknown_levels > 0 {
        log::warn!("{} categorical values outside the schema were read as missing", warnings.unknown_levels);
    }
    Ok(data)
}

/// Ground truth aligned to the dataset's record order.
pub fn load_truth_artifact(manifest: &PipelineManifest, data: &Dataset) -> Result<GroundTruth> {
    let truth = load_ground_truth(&manifest.verify(role::TRUTH)?)?.aligned_to(data)?;
    truth.check_consistency(data)?;
    Ok(truth)
}

pub struct TrainOutcome {
    pub models: ModelSet,
    pub mnl: MultinomialLogitModel,
}

/// Fit the per-location models and the preference model.
pub fn train(manifest: &mut PipelineManifest, config: &TrainConfig, mnl_config: &MnlConfig) -> Result<TrainOutcome> {
    let data = load_dataset_artifact(manifest)?;
    let models = fit_location_models(&data, config)?;
    let mnl = fit_mnl(&data, &mnl_config.clone().for_schema(&data.schema))?;
    if !mnl.convergence.converged {
        log::warn!(
            "preference model stopped after {} iterations with gradient norm {:.2e}",
            mnl.convergence.iterations,
            mnl.convergence.gradient_norm
        );
    }
    let dir = manifest.artifact_path(MODELS_DIR);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    models.save(&dir)?;
    models.write_tuning_report(&manifest.artifact_path(TUNING_FILE))?;
    write_json(&manifest.artifact_path(PREFERENCES_FILE), &mnl)?;
    manifest.record(role::MODELSET, MODELS_DIR, &[role::DATASET])?;
    manifest.record(role::TUNING, TUNING_FILE, &[role::MODELSET])?;
    manifest.record(role::PREFERENCES, PREFERENCES_FILE, &[role::DATASET])?;
    manifest.artifacts.remove(role::MATRIX);
    manifest.artifacts.remove(role::MATRIX_SIDECAR);
    manifest.save()?;
    Ok(TrainOutcome { models, mnl })
}

pub fn load_models_artifact(manifest: &PipelineManifest) -> Result<ModelSet> {
    ModelSet::load(&manifest.verify(role::MODELSET)?)
}

pub fn load_preferences_artifact(manifest: &PipelineManifest) -> Result<MultinomialLogitModel> {
    geomatch::data::io::read_json(&manifest.verify(role::PREFERENCES)?)
}

/// Hash identifying the served model version.
pub fn model_hash(manifest: &PipelineManifest) -> Result<String> {
    manifest.verify(role::MODELSET)?;
    Ok(manifest.hash(role::MODELSET).unwrap_or_default().to_string())
}

/// Predict every record at every modeled location.
pub fn predict(manifest: &mut PipelineManifest, options: &OutcomeOptions) -> Result<PredictionMatrix> {
    let data = load_dataset_artifact(manifest)?;
    let models = load_models_artifact(manifest)?;
    let matrix = build_matrix(&models, &data, options)?;
    matrix.save(&manifest.artifact_path(MATRIX_FILE))?;
    manifest.record(role::MATRIX, MATRIX_FILE, &[role::DATASET, role::MODELSET])?;
    manifest.record(role::MATRIX_SIDECAR, MATRIX_SIDECAR_FILE, &[role::MATRIX])?;
    manifest.save()?;
    Ok(matrix)
}

pub fn build_matrix(models: &ModelSet, data: &Dataset, options: &OutcomeOptions) -> Result<PredictionMatrix> {
    let rents = rents_from_locations(&data.locations);
    build_prediction_matrix(models, data, options, Some(&rents))
}

pub fn load_matrix_artifact(manifest: &PipelineManifest) -> Result<PredictionMatrix> {
    manifest.verify(role::MATRIX_SIDECAR)?;
    PredictionMatrix::load(&manifest.verify(role::MATRIX)?)
}

/// Everything a backtest needs, aligned row by row.
pub struct Cohort {
    pub dataset: Dataset,
    pub matrix: PredictionMatrix,
    pub rankings: Vec<PreferenceRanking>,
    pub models: ModelSet,
}

pub fn load_cohort(manifest: &PipelineManifest) -> Result<Cohort> {
    let dataset = load_dataset_artifact(manifest)?;
    let matrix = load_matrix_artifact(manifest)?;
    let mnl = load_preferences_artifact(manifest)?;
    let models = load_models_artifact(manifest)?;
    let rankings = rank_dataset(&mnl, &dataset, manifest.root_seed);
    Ok(Cohort { dataset, matrix, rankings, models })
}

impl Cohort {
    /// The stored matrix when it was built for `options`, else a fresh one.
    pub fn matrix_for(&self, options: &OutcomeOptions) -> Result<std::borrow::Cow<'_, PredictionMatrix>> {
        if self.matrix.options == *options {
            Ok(std::borrow::Cow::Borrowed(&self.matrix))
        } else {
            Ok(std::borrow::Cow::Owned(build_matrix(&self.models, &self.dataset, options)?))
        }
    }
}

/// The client schema must be the one the models were trained on.
pub fn check_model_schema(schema: &geomatch::data::Schema, models: &ModelSet) -> Result<()> {
    if model_schema(schema)?.fingerprint() != models.schema_fingerprint {
        return Err(Error::Data("schema artifact does not match the schema the models were trained on".into()));
    }
    Ok(())
}
