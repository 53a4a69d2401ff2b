mod common;

use geomatch::boosting::*;
use geomatch::data::{LocationId, SelectionMode};
use geomatch::Error;

#[test]
fn fits_one_model_per_populated_location() {
    let (data, _) = common::world(1200, 6, SelectionMode::ObservablesOnly, 5);
    let config = TrainConfig { min_rows: 100, ..common::tiny_train_config() };
    let models = fit_location_models(&data, &config).unwrap();
    let counts = data.landing_counts();
    for (loc, n) in &counts {
        assert_eq!(models.models.contains_key(loc), *n >= 100, "location {loc} with {n} rows");
        assert_eq!(models.unmodeled.contains_key(loc), *n < 100);
    }
    let r2 = models.cv_r_squared();
    assert!(r2 > 0.0 && r2 < 1.0, "{r2}");
    let lin = linear_baseline_r_squared(&data, &models).unwrap();
    assert!(lin < 1.0);
    let imp = models.models.values().next().unwrap().variable_importance();
    assert!((imp.iter().map(|(_, v)| v).sum::<f64>() - 100.0).abs() < 1e-9);
}

#[test]
fn too_few_rows_everywhere_is_an_error() {
    let (data, _) = common::world(100, 4, SelectionMode::ObservablesOnly, 5);
    let config = TrainConfig { min_rows: 1000, ..common::tiny_train_config() };
    assert!(matches!(fit_location_models(&data, &config), Err(Error::NoModelableLocations { min_rows: 1000 })));
}

#[test]
fn each_location_is_fit_independently_of_the_others() {
    let (data, _) = common::world(1500, 4, SelectionMode::ObservablesOnly, 8);
    // without the global outcome cap, a location's fit sees only its own rows
    let config = TrainConfig { outcome_cap_quantile: None, ..common::tiny_train_config() };
    let all = fit_location_models(&data, &config).unwrap();
    assert_eq!(all, fit_location_models(&data, &config).unwrap());
    let only_two = data.filter(|r| r.landing == LocationId(2));
    let single = fit_location_models(&only_two, &config).unwrap();
    assert_eq!(single.models[&LocationId(2)], all.models[&LocationId(2)]);
}

#[test]
fn save_load_round_trip_and_tamper_detection() {
    let (data, _) = common::world(1000, 3, SelectionMode::ObservablesOnly, 2);
    let models = fit_location_models(&data, &common::tiny_train_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    models.save(dir.path()).unwrap();
    let loaded = ModelSet::load(dir.path()).unwrap();
    assert_eq!(loaded, models);
    for r in data.records.iter().take(50) {
        for loc in &data.locations {
            assert_eq!(loaded.predict(&r.covariates, loc).unwrap(), models.predict(&r.covariates, loc).unwrap());
        }
    }
    models.write_tuning_report(&dir.path().join("tuning.csv")).unwrap();
    let report = std::fs::read_to_string(dir.path().join("tuning.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + models.models.len() * common::tiny_grid().cells().len());

    let file = dir.path().join("1.model.json");
    let text = std::fs::read_to_string(&file).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["schema_fingerprint"] = serde_json::Value::String("0000".into());
    std::fs::write(&file, serde_json::to_string(&json).unwrap()).unwrap();
    assert!(ModelSet::load(dir.path()).is_err());
}

#[test]
fn location_features_are_substituted_per_column() {
    let (data, _) = common::world(600, 3, SelectionMode::ObservablesOnly, 4);
    let row = model_row(&data.records[0].covariates, &data.locations[1]);
    assert_eq!(row.len(), data.schema.len() + LOCATION_FEATURES.len());
    assert_eq!(row[data.schema.len()].as_num(), data.locations[1].population as f64);
    assert_eq!(row[data.schema.len() + 1].as_num(), data.locations[1].unemployment_rate);
    let schema = model_schema(&data.schema).unwrap();
    assert_eq!(schema.index_of(LOCATION_FEATURES[0]), Some(data.schema.len()));
}
