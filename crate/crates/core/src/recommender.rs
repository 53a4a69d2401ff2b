//! The prediction matrix of per-location outcomes and the recommendation
//! function over an individual's acceptable set.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boosting::{model_schema, ModelSet};
use crate::data::{CovariateVector, Dataset, Location, LocationId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeMode {
    #[default]
    Income,
    /// Income less the location's annual rent.
    RentAdjusted,
    /// Principal-applicant plus spouse income, divided by adult count.
    JointPerAdult,
}

impl fmt::Display for OutcomeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutcomeMode::Income => "income",
            OutcomeMode::RentAdjusted => "rent-adjusted",
            OutcomeMode::JointPerAdult => "joint-per-adult",
        })
    }
}

impl FromStr for OutcomeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "income" => Ok(OutcomeMode::Income),
            "rent-adjusted" => Ok(OutcomeMode::RentAdjusted),
            "joint-per-adult" => Ok(OutcomeMode::JointPerAdult),
            other => Err(Error::Config(format!("unknown outcome mode `{other}`"))),
        }
    }
}

/// Default spouse-to-principal earnings ratio for joint mode.
pub const DEFAULT_SPOUSE_RATIO: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeOptions {
    pub mode: OutcomeMode,
    /// Spouse prediction as a fraction of the principal applicant's.
    pub spouse_ratio: f64,
}

impl Default for OutcomeOptions {
    fn default() -> Self {
        OutcomeOptions { mode: OutcomeMode::Income, spouse_ratio: DEFAULT_SPOUSE_RATIO }
    }
}

impl OutcomeOptions {
    pub fn new(mode: OutcomeMode) -> Self {
        OutcomeOptions { mode, ..Default::default() }
    }
}

/// Annual rent per location.
pub type RentTable = BTreeMap<LocationId, f64>;

pub fn rents_from_locations(locations: &[Location]) -> RentTable {
    locations.iter().map(|l| (l.id, l.annual_rent)).collect()
}

/// Value of one cell given the raw income prediction.
fn cell_value(income: f64, options: &OutcomeOptions, case_size: u32, rent: Option<f64>) -> f64 {
    match options.mode {
        OutcomeMode::Income => income,
        OutcomeMode::RentAdjusted => income - rent.expect("rent checked before prediction"),
        OutcomeMode::JointPerAdult => {
            let spouse = if case_size >= 2 { options.spouse_ratio * income } else { 0.0 };
            (income + spouse) / case_size.max(1) as f64
        }
    }
}

/// n individuals by K modeled locations, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    pub ids: Vec<u64>,
    pub locations: Vec<LocationId>,
    pub values: Vec<f64>,
    pub options: OutcomeOptions,
}

/// One individual's predictions.
#[derive(Debug, Clone, Copy)]
pub struct PredictionRow<'a> {
    pub id: u64,
    pub locations: &'a [LocationId],
    pub values: &'a [f64],
}

impl PredictionRow<'_> {
    pub fn value(&self, location: LocationId) -> Option<f64> {
        self.locations.iter().position(|&l| l == location).map(|c| self.values[c])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatrixSidecar {
    options: OutcomeOptions,
    locations: Vec<LocationId>,
    n: usize,
}

impl PredictionMatrix {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn k(&self) -> usize {
        self.locations.len()
    }

    pub fn mode(&self) -> OutcomeMode {
        self.options.mode
    }

    pub fn column(&self, location: LocationId) -> Option<usize> {
        self.locations.binary_search(&location).ok()
    }

    pub fn row(&self, i: usize) -> PredictionRow<'_> {
        let k = self.k();
        PredictionRow { id: self.ids[i], locations: &self.locations, values: &self.values[i * k..(i + 1) * k] }
    }

    pub fn value(&self, i: usize, location: LocationId) -> Option<f64> {
        self.column(location).map(|c| self.values[i * self.k() + c])
    }

    /// Sidecar path for a matrix CSV: `matrix.csv` -> `matrix.json`.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    /// CSV with `individual_id` plus one column per location, and a JSON
    /// sidecar recording the outcome mode.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        let mut header = vec!["individual_id".to_string()];
        header.extend(self.locations.iter().map(|l| l.to_string()));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let row = self.row(i);
            let mut rec = vec![row.id.to_string()];
            rec.extend(row.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(csv_path, e))?;
        let sidecar = MatrixSidecar { options: self.options, locations: self.locations.clone(), n: self.n() };
        crate::data::io::write_json(&Self::sidecar_path(csv_path), &sidecar)
    }

    pub fn load(csv_path: &Path) -> Result<PredictionMatrix> {
        let sidecar: MatrixSidecar = crate::data::io::read_json(&Self::sidecar_path(csv_path))?;
        let mut r = csv::Reader::from_path(csv_path)?;
        let header = r.headers()?.clone();
        let expected: Vec<String> =
            std::iter::once("individual_id".to_string()).chain(sidecar.locations.iter().map(|l| l.to_string())).collect();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Data("matrix header does not match its sidecar".into()));
        }
        let mut ids = Vec::with_capacity(sidecar.n);
        let mut values = Vec::with_capacity(sidecar.n * sidecar.locations.len());
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err = |c: usize| Error::Parse { row: row + 1, column: expected[c].clone(), token: rec[c].to_string() };
            ids.push(rec[0].parse().map_err(|_| parse_err(0))?);
            for c in 1..rec.len() {
                values.push(rec[c].parse::<f64>().map_err(|_| parse_err(c))?);
            }
        }
        if ids.len() != sidecar.n {
            return Err(Error::Data(format!("matrix has {} rows, sidecar says {}", ids.len(), sidecar.n)));
        }
        Ok(PredictionMatrix { ids, locations: sidecar.locations, values, options: sidecar.options })
    }
}

/// Predict one client at every modeled location.
pub fn predict_row(
    models: &ModelSet,
    locations: &[&Location],
    x: &CovariateVector,
    case_size: u32,
    options: &OutcomeOptions,
    rents: Option<&RentTable>,
) -> Vec<f64> {
    locations
        .iter()
        .map(|loc| {
            let income = models.models[&loc.id].predict(&crate::boosting::model_row(x, loc));
            cell_value(income, options, case_size, rents.and_then(|r| r.get(&loc.id).copied()))
        })
        .collect()
}

/// Modeled locations with their attributes, in id order.
pub fn modeled_locations<'a>(models: &ModelSet, locations: &'a [Location]) -> Result<Vec<&'a Location>> {
    models
        .locations()
        .map(|id| locations.iter().find(|l| l.id == id).ok_or_else(|| Error::Data(format!("modeled location {id} is not in the location table"))))
        .collect()
}

/// Check that a rent table covers every modeled location when needed.
pub fn check_rents(models: &ModelSet, mode: OutcomeMode, rents: Option<&RentTable>) -> Result<()> {
    if mode != OutcomeMode::RentAdjusted {
        return Ok(());
    }
    let rents = rents.ok_or_else(|| Error::Config("rent-adjusted mode requires a rent table".into()))?;
    match models.locations().find(|l| !rents.get(l).is_some_and(|r| r.is_finite())) {
        Some(missing) => Err(Error::MissingRent(missing)),
        None => Ok(()),
    }
}

/// Predicted outcome of every client at every modeled location, with each
/// location's own population and unemployment substituted into the row.
pub fn build_prediction_matrix(
    models: &ModelSet,
    clients: &Dataset,
    options: &OutcomeOptions,
    rents: Option<&RentTable>,
) -> Result<PredictionMatrix> {
    if model_schema(&clients.schema)?.fingerprint() != models.schema_fingerprint {
        return Err(Error::Data("client schema does not match the schema the models were trained on".into()));
    }
    check_rents(models, options.mode, rents)?;
    let locs = modeled_locations(models, &clients.locations)?;
    let one = |r: &crate::data::ImmigrantRecord| predict_row(models, &locs, &r.covariates, r.case_size, options, rents);
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        clients.records.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = clients.records.iter().map(one).collect();
    Ok(PredictionMatrix {
        ids: clients.records.iter().map(|r| r.id).collect(),
        locations: locs.iter().map(|l| l.id).collect(),
        values: rows.concat(),
        options: *options,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub id: u64,
    pub locations: Vec<LocationId>,
    pub values: Vec<f64>,
    /// Size of the acceptable set after restricting to modeled locations.
    pub t: usize,
    pub z: usize,
}

/// Top `min(z, t)` locations of the acceptable set by predicted value.
/// Exact ties are ordered uniformly at random; acceptable locations missing
/// from the row are ignored.
pub fn recommend<R: Rng>(row: PredictionRow<'_>, acceptable: &[LocationId], z: usize, rng: &mut R) -> Recommendation {
    let mut cols: Vec<usize> = acceptable.iter().filter_map(|&l| row.locations.iter().position(|&c| c == l)).collect();
    cols.sort_unstable();
    cols.dedup();
    let t = cols.len();
    cols.shuffle(rng);
    cols.sort_by(|&a, &b| row.values[b].total_cmp(&row.values[a]));
    cols.truncate(z.min(t));
    Recommendation {
        id: row.id,
        locations: cols.iter().map(|&c| row.locations[c]).collect(),
        values: cols.iter().map(|&c| row.values[c]).collect(),
        t,
        z,
    }
}

/// Competition rank of `actual` within the row: 1 + number of strictly
/// greater values.
pub fn landing_rank(row: PredictionRow<'_>, actual: LocationId) -> Result<usize> {
    let v = row.value(actual).ok_or(Error::UnmodeledLocation(actual))?;
    Ok(1 + row.values.iter().filter(|&&x| x > v).count())
}

/// One JSON object per line: `{id, locations, values, t, z}`.
pub fn write_recommendations(path: &Path, recommendations: &[Recommendation]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in recommendations {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
