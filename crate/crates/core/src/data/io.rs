//! CSV and JSON file formats for datasets, schemas, locations and the
//! synthetic ground-truth sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use super::dataset::{Dataset, ImmigrantRecord, Location, LocationId};
use super::schema::{CovariateVector, Schema};
use super::synthetic::{GroundTruth, TruthEntry};
use crate::error::{Error, Result};

pub const LANDING_COLUMN: &str = "landing";
pub const OUTCOME_COLUMN: &str = "outcome";
pub const ID_COLUMN: &str = "id";
pub const CASE_SIZE_COLUMN: &str = "case_size";
pub const SPOUSE_COLUMN: &str = "spouse_outcome";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadWarnings {
    /// Categorical tokens not in the schema, loaded as the missing level.
    pub unknown_levels: usize,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_schema(path: &Path) -> Result<Schema> {
    read_json(path)
}

pub fn load_locations(path: &Path) -> Result<Vec<Location>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let loc: Location = row?;
        loc.validate()?;
        out.push(loc);
    }
    Ok(out)
}

pub fn write_locations(path: &Path, locations: &[Location]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for loc in locations {
        writer.serialize(loc)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Read a dataset CSV against a schema.
///
/// Required columns are every schema feature plus `landing` and `outcome`;
/// `id`, `case_size` and `spouse_outcome` are optional. Row order is kept.
pub fn load_dataset(path: &Path, schema: &Schema, locations: Vec<Location>) -> Result<(Dataset, LoadWarnings)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema, locations)
}

pub fn read_dataset<R: std::io::Read>(
    input: R,
    schema: &Schema,
    locations: Vec<Location>,
) -> Result<(Dataset, LoadWarnings)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| column(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let feature_cols = schema.features().iter().map(|f| required(&f.name)).collect::<Result<Vec<_>>>()?;
    let landing_col = required(LANDING_COLUMN)?;
    let outcome_col = required(OUTCOME_COLUMN)?;
    let id_col = column(ID_COLUMN);
    let case_col = column(CASE_SIZE_COLUMN);
    let spouse_col = column(SPOUSE_COLUMN);

    let mut warnings = LoadWarnings::default();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        // 1-based data row number, header excluded
        let row_no = i + 1;
        let field = |c: usize| row.get(c).unwrap_or("").trim();
        let parse_err = |c: usize| Error::Parse { row: row_no, column: headers[c].to_string(), token: field(c).to_string() };
        let number = |c: usize| -> Result<f64> {
            field(c).parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| parse_err(c))
        };

        let mut values = Vec::with_capacity(feature_cols.len());
        for (f, &c) in feature_cols.iter().enumerate() {
            let (v, unknown) = schema.parse_token(f, field(c)).map_err(|_| parse_err(c))?;
            warnings.unknown_levels += unknown as usize;
            values.push(v);
        }
        let id = match id_col {
            Some(c) => field(c).parse::<u64>().map_err(|_| parse_err(c))?,
            None => row_no as u64,
        };
        let landing = LocationId(field(landing_col).parse::<u32>().map_err(|_| parse_err(landing_col))?);
        let outcome = number(outcome_col)?;
        let case_size = match case_col {
            Some(c) if !field(c).is_empty() => field(c).parse::<u32>().map_err(|_| parse_err(c))?,
            _ => 1,
        };
        let spouse_outcome = match spouse_col {
            Some(c) if !field(c).is_empty() => Some(number(c)?),
            _ => None,
        };
        records.push(ImmigrantRecord {
            id,
            covariates: CovariateVector(values),
            landing,
            outcome,
            case_size,
            spouse_outcome,
        });
    }
    if warnings.unknown_levels > 0 {
        log::warn!("{} categorical values not in schema were loaded as missing", warnings.unknown_levels);
    }
    let dataset = Dataset::new(schema.clone(), records, locations)?;
    Ok((dataset, warnings))
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(file, dataset)
}

pub fn write_dataset_to<W: std::io::Write>(output: W, dataset: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(dataset.schema.features().iter().map(|f| f.name.clone()));
    header.extend([LANDING_COLUMN, OUTCOME_COLUMN, CASE_SIZE_COLUMN, SPOUSE_COLUMN].map(String::from));
    writer.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![r.id.to_string()];
        row.extend(r.covariates.0.iter().enumerate().map(|(i, &v)| dataset.schema.format_value(i, v)));
        row.push(r.landing.to_string());
        row.push(r.outcome.to_string());
        row.push(r.case_size.to_string());
        row.push(r.spouse_outcome.map(|s| s.to_string()).unwrap_or_default());
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io("<output>", e))
}

/// Ground-truth sidecar: record id -> {potential_outcomes, u, v, noise}.
pub fn write_ground_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let map: BTreeMap<u64, &TruthEntry> = truth.entries.iter().map(|e| (e.id, e)).collect();
    write_json(path, &map)
}

/// Load a ground-truth sidecar, ordered by record id.
pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let map: BTreeMap<u64, TruthEntry> = read_json(path)?;
    Ok(GroundTruth { entries: map.into_iter().map(|(id, e)| TruthEntry { id, ..e }).collect() })
}
