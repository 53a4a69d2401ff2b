//! Selection-bias audit on synthetic data with known potential outcomes.
//!
//! For each location `a` and stratum `x` this computes the mean potential
//! outcome over everyone (`theta`), the mean observed outcome among those
//! who chose `a` (`theta_prime`), the mean potential outcome at `a` among
//! those who did not (`theta_double_prime`), the chooser share `p`, and the
//! bias bound `theta_prime - theta_double_prime`. The non-chooser mean needs
//! counterfactual outcomes, so the audit only runs on synthetic worlds.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boosting::{model_row, ModelSet};
use crate::data::{Dataset, FeatureKind, GroundTruth, LocationId, NOISE_FLOOR_SE};
use crate::error::{Error, Result};
use crate::stats::KahanSum;

/// Cells with fewer choosers or non-choosers are flagged.
pub const MIN_SIDE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellFlag {
    Ok,
    /// Fewer than [`MIN_SIDE`] choosers or non-choosers.
    SmallCell,
    /// Nobody, or everybody, in the stratum chose the location.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub location: LocationId,
    pub stratum: String,
    pub n_choosers: usize,
    pub n_nonchoosers: usize,
    pub theta: f64,
    pub theta_prime: Option<f64>,
    pub theta_double_prime: Option<f64>,
    pub p: f64,
    /// `theta_prime - theta_double_prime`.
    pub bias_bound: Option<f64>,
    /// `theta_prime - theta`.
    pub actual_bias: Option<f64>,
    /// Two-sample standard error of the bias bound.
    pub se: Option<f64>,
    pub flag: CellFlag,
}

impl BiasCell {
    pub fn is_interior(&self) -> bool {
        self.n_choosers > 0 && self.n_nonchoosers > 0
    }

    pub fn noise_floor(&self) -> Option<f64> {
        self.se.map(|se| NOISE_FLOOR_SE * se)
    }

    /// `theta_prime p + theta_double_prime (1 - p) - theta`, for interior cells.
    pub fn identity_residual(&self) -> Option<f64> {
        Some(self.theta_prime? * self.p + self.theta_double_prime? * (1.0 - self.p) - self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub strata_features: Vec<String>,
    pub cells: Vec<BiasCell>,
}

#[derive(Default, Clone)]
struct Moments {
    n: usize,
    sum: KahanSum,
    sum2: KahanSum,
}

impl Moments {
    fn add(&mut self, y: f64) {
        self.n += 1;
        self.sum.add(y);
        self.sum2.add(y * y);
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum.value() / self.n as f64)
    }

    fn var_of_mean(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        let n = self.n as f64;
        let m = self.sum.value() / n;
        Some(((self.sum2.value() - n * m * m) / (n - 1.0)).max(0.0) / n)
    }
}

/// Stratum label of every record, e.g. `education=master`.
pub fn stratum_labels(dataset: &Dataset, features: &[String]) -> Result<Vec<String>> {
    let mut idx = Vec::with_capacity(features.len());
    for f in features {
        let i = dataset.schema.index_of(f).ok_or_else(|| Error::UnknownFeature(f.clone()))?;
        if !matches!(dataset.schema.features()[i].kind, FeatureKind::Categorical { .. }) {
            return Err(Error::InvalidFeature { feature: f.clone(), reason: "strata features must be categorical".into() });
        }
        idx.push(i);
    }
    Ok(dataset
        .records
        .iter()
        .map(|r| {
            let parts: Vec<String> =
                features.iter().zip(&idx).map(|(f, &i)| format!("{f}={}", dataset.schema.format_value(i, r.covariates.0[i]))).collect();
            if parts.is_empty() { "all".to_string() } else { parts.join(",") }
        })
        .collect())
}

fn check_truth(dataset: &Dataset, truth: &GroundTruth) -> Result<()> {
    truth.check_consistency(dataset)?;
    if let Some(t) = truth.entries.iter().find(|t| t.potential_outcomes.len() != dataset.k()) {
        return Err(Error::Data(format!("ground truth for record {} does not cover every location", t.id)));
    }
    Ok(())
}

pub fn audit(dataset: &Dataset, truth: &GroundTruth, strata_features: &[String]) -> Result<BiasReport> {
    check_truth(dataset, truth)?;
    let labels = stratum_labels(dataset, strata_features)?;
    // (location index, stratum) -> (everyone, choosers, non-choosers)
    let mut cells: BTreeMap<(usize, &str), [Moments; 3]> = BTreeMap::new();
    for ((r, t), label) in dataset.records.iter().zip(&truth.entries).zip(&labels) {
        for (a, &y) in t.potential_outcomes.iter().enumerate() {
            let m = cells.entry((a, label.as_str())).or_default();
            m[0].add(y);
            if r.landing.0 as usize == a + 1 {
                m[1].add(r.outcome);
            } else {
                m[2].add(y);
            }
        }
    }
    let cells = cells
        .into_iter()
        .map(|((a, stratum), [all, chose, other])| {
            let theta_prime = chose.mean();
            let theta_double_prime = other.mean();
            let bias_bound = theta_prime.zip(theta_double_prime).map(|(a, b)| a - b);
            let se = chose.var_of_mean().zip(other.var_of_mean()).map(|(a, b)| (a + b).sqrt());
            let flag = if chose.n == 0 || other.n == 0 {
                CellFlag::Boundary
            } else if chose.n < MIN_SIDE || other.n < MIN_SIDE {
                CellFlag::SmallCell
            } else {
                CellFlag::Ok
            };
            let theta = all.mean().expect("every cell has at least one record");
            BiasCell {
                location: dataset.locations[a].id,
                stratum: stratum.to_string(),
                n_choosers: chose.n,
                n_nonchoosers: other.n,
                theta,
                theta_prime,
                theta_double_prime,
                p: chose.n as f64 / all.n as f64,
                bias_bound,
                actual_bias: theta_prime.map(|tp| tp - theta),
                se,
                flag,
            }
        })
        .collect();
    Ok(BiasReport { strata_features: strata_features.to_vec(), cells })
}

/// Mean model prediction against the true mean potential outcome per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBiasCell {
    pub location: LocationId,
    pub stratum: String,
    pub n: usize,
    pub model_mean: f64,
    pub theta: f64,
    /// `model_mean - theta`.
    pub gap: f64,
}

pub fn model_bias_check(
    models: &ModelSet,
    dataset: &Dataset,
    truth: &GroundTruth,
    strata_features: &[String],
) -> Result<Vec<ModelBiasCell>> {
    check_truth(dataset, truth)?;
    let labels = stratum_labels(dataset, strata_features)?;
    let mut cells: BTreeMap<(LocationId, &str), (Moments, Moments)> = BTreeMap::new();
    for loc_id in models.locations() {
        let loc = dataset.location(loc_id).ok_or(Error::UnmodeledLocation(loc_id))?;
        let model = models.model(loc_id)?;
        let a = (loc_id.0 - 1) as usize;
        for ((r, t), label) in dataset.records.iter().zip(&truth.entries).zip(&labels) {
            let c = cells.entry((loc_id, label.as_str())).or_default();
            c.0.add(model.predict(&model_row(&r.covariates, loc)));
            c.1.add(t.potential_outcomes[a]);
        }
    }
    Ok(cells
        .into_iter()
        .map(|((location, stratum), (pred, theta))| {
            let (model_mean, theta) = (pred.mean().unwrap_or(0.0), theta.mean().unwrap_or(0.0));
            ModelBiasCell { location, stratum: stratum.to_string(), n: pred.n, model_mean, theta, gap: model_mean - theta }
        })
        .collect())
}

pub fn write_bias_report(path: &Path, report: &BiasReport) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "a",
        "stratum",
        "n_choosers",
        "n_nonchoosers",
        "theta",
        "theta_prime",
        "theta_double_prime",
        "p",
        "bias_bound",
        "flag",
        "actual_bias",
        "se",
    ])?;
    for c in &report.cells {
        let flag = serde_json::to_value(c.flag)?.as_str().unwrap_or_default().to_string();
        w.write_record([
            c.location.to_string(),
            c.stratum.clone(),
            c.n_choosers.to_string(),
            c.n_nonchoosers.to_string(),
            c.theta.to_string(),
            opt(c.theta_prime),
            opt(c.theta_double_prime),
            c.p.to_string(),
            opt(c.bias_bound),
            flag,
            opt(c.actual_bias),
            opt(c.se),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
