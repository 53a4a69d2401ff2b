use serde::{Deserialize, Serialize};

use crate::data::{CovariateVector, Dataset, FeatureKind, LocationId, Schema, Value};
use crate::error::{Error, Result};

/// Default coarse roster; names missing from a schema are skipped.
pub const DEFAULT_COARSE_FEATURES: [&str; 5] = ["education", "age", "category", "prior_permit", "language"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnlConfig {
    pub features: Vec<String>,
    /// Ridge strength on non-intercept coefficients.
    pub l2: f64,
    /// Convergence threshold on the gradient max-norm.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MnlConfig {
    fn default() -> Self {
        MnlConfig {
            features: DEFAULT_COARSE_FEATURES.iter().map(|s| s.to_string()).collect(),
            l2: 1e-3,
            tolerance: 1e-6,
            max_iterations: 500,
        }
    }
}

impl MnlConfig {
    /// Keep only roster entries present in `schema`.
    pub fn for_schema(mut self, schema: &Schema) -> Self {
        self.features.retain(|f| schema.index_of(f).is_some());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Column {
    Indicator { feature: usize, level: u32 },
    Standardized { feature: usize, mean: f64, sd: f64 },
}

/// One-hot categorical levels plus standardized numerics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseEncoder {
    features: Vec<String>,
    columns: Vec<Column>,
}

impl CoarseEncoder {
    pub fn new(schema: &Schema, features: &[String], rows: &[&CovariateVector]) -> Result<Self> {
        let mut columns = Vec::new();
        for name in features {
            let f = schema.index_of(name).ok_or_else(|| Error::UnknownFeature(name.clone()))?;
            match &schema.features()[f].kind {
                FeatureKind::Categorical { levels } => {
                    columns.extend((0..levels.len() as u32).map(|level| Column::Indicator { feature: f, level }));
                }
                FeatureKind::Numeric { .. } => {
                    let values: Vec<f64> = rows.iter().map(|x| x.0[f].as_num()).collect();
                    let mean = crate::stats::mean(&values);
                    let sd = if values.len() > 1 { crate::stats::sample_sd(&values) } else { 0.0 };
                    columns.push(Column::Standardized { feature: f, mean, sd: if sd > 0.0 { sd } else { 1.0 } });
                }
            }
        }
        Ok(CoarseEncoder { features: features.to_vec(), columns })
    }

    /// Design width including the intercept.
    pub fn width(&self) -> usize {
        1 + self.columns.len()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn encode_into(&self, x: &CovariateVector, out: &mut Vec<f64>) {
        out.push(1.0);
        for c in &self.columns {
            out.push(match *c {
                Column::Indicator { feature, level } => (x.0[feature] == Value::Level(level)) as u8 as f64,
                Column::Standardized { feature, mean, sd } => (x.0[feature].as_num() - mean) / sd,
            });
        }
    }

    pub fn encode(&self, x: &CovariateVector) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        self.encode_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Multinomial logit over landing locations. The first location is the
/// reference with all-zero coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialLogitModel {
    pub locations: Vec<LocationId>,
    /// `(K - 1)` rows of `width` coefficients, intercept first.
    pub coefficients: Vec<Vec<f64>>,
    pub encoder: CoarseEncoder,
    pub l2: f64,
    pub convergence: Convergence,
    /// Locations dropped for having no training landings.
    pub excluded: Vec<LocationId>,
}

impl MultinomialLogitModel {
    pub fn reference(&self) -> LocationId {
        self.locations[0]
    }

    pub fn scores(&self, x: &CovariateVector) -> Vec<f64> {
        scores_of(&self.coefficients, &self.encoder.encode(x))
    }

    /// Softmax probabilities aligned with `locations`.
    pub fn probabilities(&self, x: &CovariateVector) -> Vec<f64> {
        let mut s = self.scores(x);
        softmax_in_place(&mut s);
        s
    }

    /// Euclidean norm of the penalized (non-intercept) coefficients.
    pub fn slope_norm(&self) -> f64 {
        self.coefficients.iter().flat_map(|r| r[1..].iter()).map(|b| b * b).sum::<f64>().sqrt()
    }
}

fn scores_of(beta: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(beta.len() + 1);
    s.push(0.0);
    s.extend(beta.iter().map(|b| b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>()));
    s
}

fn softmax_in_place(s: &mut [f64]) {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in s.iter_mut() {
        *v /= total;
    }
}

struct Problem {
    x: Vec<f64>,
    y: Vec<usize>,
    width: usize,
    classes: usize,
    l2: f64,
}

impl Problem {
    /// Penalized mean negative log-likelihood and its gradient.
    fn evaluate(&self, beta: &[f64], grad: &mut [f64]) -> f64 {
        let (d, m) = (self.width, self.classes - 1);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut nll = 0.0;
        let mut s = vec![0.0; self.classes];
        for (i, &y) in self.y.iter().enumerate() {
            let xi = &self.x[i * d..(i + 1) * d];
            s[0] = 0.0;
            for c in 0..m {
                s[c + 1] = beta[c * d..(c + 1) * d].iter().zip(xi).map(|(b, x)| b * x).sum();
            }
            let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            nll += lse - s[y];
            for c in 0..m {
                let r = (s[c + 1] - lse).exp() - (y == c + 1) as u8 as f64;
                for (g, x) in grad[c * d..(c + 1) * d].iter_mut().zip(xi) {
                    *g += r * x;
                }
            }
        }
        let n = self.y.len() as f64;
        let mut penalty = 0.0;
        for c in 0..m {
            for j in 0..d {
                let k = c * d + j;
                grad[k] /= n;
                if j > 0 {
                    grad[k] += self.l2 * beta[k];
                    penalty += beta[k] * beta[k];
                }
            }
        }
        nll / n + 0.5 * self.l2 * penalty
    }
}

const NONMONOTONE_MEMORY: usize = 10;

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fit the preference model on every record's landing.
///
/// Minimizes the mean negative log-likelihood plus `l2 / 2` times the squared
/// norm of the non-intercept coefficients, by gradient descent with
/// Barzilai-Borwein steps and nonmonotone Armijo backtracking. Intercepts
/// start at the log share ratios, so an intercept-only model is already
/// optimal.
pub fn fit_mnl(train: &Dataset, config: &MnlConfig) -> Result<MultinomialLogitModel> {
    if !(config.l2 >= 0.0) || !(config.tolerance > 0.0) {
        return Err(Error::Config("mnl l2 must be >= 0 and tolerance > 0".into()));
    }
    let counts = train.landing_counts();
    let mut locations = Vec::new();
    let mut excluded = Vec::new();
    for loc in &train.locations {
        if counts.get(&loc.id).copied().unwrap_or(0) > 0 {
            locations.push(loc.id);
        } else {
            log::warn!("location {} has no training landings; excluded from the preference model", loc.id);
            excluded.push(loc.id);
        }
    }
    if locations.len() < 2 {
        return Err(Error::Config("preference model needs landings in at least 2 locations".into()));
    }
    let rows: Vec<&CovariateVector> = train.records.iter().map(|r| &r.covariates).collect();
    let encoder = CoarseEncoder::new(&train.schema, &config.features, &rows)?;
    let width = encoder.width();
    let mut x = Vec::with_capacity(rows.len() * width);
    for r in &rows {
        encoder.encode_into(r, &mut x);
    }
    let class_of = |id: LocationId| locations.iter().position(|&l| l == id).expect("landing has a class");
    let y: Vec<usize> = train.records.iter().map(|r| class_of(r.landing)).collect();
    let problem = Problem { x, y, width, classes: locations.len(), l2: config.l2 };

    let m = locations.len() - 1;
    let mut beta = vec![0.0; m * width];
    let base = counts[&locations[0]] as f64;
    for c in 0..m {
        beta[c * width] = (counts[&locations[c + 1]] as f64 / base).ln();
    }
    let mut grad = vec![0.0; beta.len()];
    let f = problem.evaluate(&beta, &mut grad);
    let mut step = 1.0;
    let mut trial = vec![0.0; beta.len()];
    let mut trial_grad = vec![0.0; beta.len()];
    // nonmonotone acceptance against the worst of the recent objective values
    let mut recent = std::collections::VecDeque::from([f]);
    let mut iterations = 0;
    while max_norm(&grad) >= config.tolerance && iterations < config.max_iterations {
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let mut alpha = step;
        let reference = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let f_new = loop {
            for ((t, b), g) in trial.iter_mut().zip(&beta).zip(&grad) {
                *t = b - alpha * g;
            }
            let f_new = problem.evaluate(&trial, &mut trial_grad);
            if f_new <= reference - 1e-4 * alpha * g2 || alpha < 1e-14 {
                break f_new;
            }
            alpha *= 0.5;
        };
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..beta.len() {
            let s = trial[i] - beta[i];
            let yv = trial_grad[i] - grad[i];
            ss += s * s;
            sy += s * yv;
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { alpha * 2.0 };
        std::mem::swap(&mut beta, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        if recent.len() == NONMONOTONE_MEMORY {
            recent.pop_front();
        }
        recent.push_back(f_new);
        iterations += 1;
    }
    let gradient_norm = max_norm(&grad);
    let converged = gradient_norm < config.tolerance;
    if !converged {
        log::warn!("preference model stopped after {iterations} iterations, gradient norm {gradient_norm:e}");
    }
    Ok(MultinomialLogitModel {
        locations,
        coefficients: beta.chunks(width).map(<[f64]>::to_vec).collect(),
        encoder,
        l2: config.l2,
        convergence: Convergence { iterations, gradient_norm, converged },
        excluded,
    })
}
