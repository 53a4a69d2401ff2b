use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::BinnedMatrix;
use super::tree::{fit_tree_with, RegressionTree, Scratch, TreeParams, TreeSize};
use crate::data::{LocationId, Schema, Value};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub tree_size: TreeSize,
    pub learning_rate: f64,
    /// Share of training rows sampled (without replacement) for each tree.
    pub bag_fraction: f64,
    pub n_trees: usize,
    pub min_node: usize,
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning rate {} outside (0, 1]", self.learning_rate)));
        }
        if !(self.bag_fraction > 0.0 && self.bag_fraction <= 1.0) {
            return Err(Error::Config(format!("bag fraction {} outside (0, 1]", self.bag_fraction)));
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams { size: self.tree_size, min_node: self.min_node }
    }
}

/// Incremental stochastic gradient boosting on squared error.
///
/// Each step samples `ceil(bag_fraction * n)` training rows without
/// replacement, fits a tree to the current residuals on that sample, and
/// adds it with shrinkage `learning_rate`.
pub(crate) struct Booster<'a> {
    matrix: &'a BinnedMatrix,
    rows: Vec<u32>,
    params: BoostParams,
    rng: ChaCha8Rng,
    pub init: f64,
    /// Current prediction per training row (aligned with `rows`).
    fitted: Vec<f64>,
    /// Residuals indexed by matrix row.
    residual: Vec<f64>,
    targets: &'a [f64],
    pub trees: Vec<RegressionTree>,
    scratch: Scratch,
    sample: Vec<u32>,
}

impl<'a> Booster<'a> {
    pub fn new(matrix: &'a BinnedMatrix, rows: Vec<u32>, targets: &'a [f64], params: BoostParams, seed: u64) -> Self {
        let init = rows.iter().map(|&r| targets[r as usize]).sum::<f64>() / rows.len().max(1) as f64;
        let mut residual = vec![0.0; matrix.n_rows()];
        for &r in &rows {
            residual[r as usize] = targets[r as usize] - init;
        }
        Booster {
            matrix,
            fitted: vec![init; rows.len()],
            rows,
            params,
            rng: seed::rng(seed),
            init,
            residual,
            targets,
            trees: Vec::new(),
            scratch: Scratch::default(),
            sample: Vec::new(),
        }
    }

    pub fn step(&mut self) -> &RegressionTree {
        let n = self.rows.len();
        let m = ((self.params.bag_fraction * n as f64).ceil() as usize).clamp(1, n);
        self.sample.clear();
        if m == n {
            self.sample.extend_from_slice(&self.rows);
        } else {
            let picked = index::sample(&mut self.rng, n, m);
            self.sample.extend(picked.iter().map(|i| self.rows[i]));
            self.sample.sort_unstable();
        }
        let tree = fit_tree_with(self.matrix, &self.sample, &self.residual, &self.params.tree_params(), &mut self.scratch);
        let rate = self.params.learning_rate;
        for (pos, &r) in self.rows.iter().enumerate() {
            self.fitted[pos] += rate * tree.predict_binned(self.matrix, r as usize);
            self.residual[r as usize] = self.targets[r as usize] - self.fitted[pos];
        }
        self.trees.push(tree);
        self.trees.last().expect("just pushed")
    }

    pub fn training_rmse(&self) -> f64 {
        let sse: f64 = self.rows.iter().map(|&r| self.residual[r as usize].powi(2)).sum();
        (sse / self.rows.len().max(1) as f64).sqrt()
    }
}

/// A fitted boosted ensemble for one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub location: LocationId,
    /// Training-mean outcome.
    pub init_value: f64,
    pub learning_rate: f64,
    pub params: BoostParams,
    pub feature_names: Vec<String>,
    pub schema_fingerprint: String,
    pub trees: Vec<RegressionTree>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Training RMSE after each boosting iteration.
    pub train_rmse: Vec<f64>,
}

/// Fit a boosted model on `rows` of `matrix`. Pure function of its inputs
/// and `seed`.
pub fn fit_boosted(
    schema: &Schema,
    matrix: &BinnedMatrix,
    rows: &[u32],
    targets: &[f64],
    params: &BoostParams,
    location: LocationId,
    seed: u64,
) -> Result<(BoostedModel, FitReport)> {
    params.validate()?;
    if rows.is_empty() {
        return Err(Error::Data("cannot fit a model without rows".into()));
    }
    let mut booster = Booster::new(matrix, rows.to_vec(), targets, *params, seed);
    let mut train_rmse = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        booster.step();
        train_rmse.push(booster.training_rmse());
    }
    let model = BoostedModel {
        location,
        init_value: booster.init,
        learning_rate: params.learning_rate,
        params: *params,
        feature_names: schema.features().iter().map(|f| f.name.clone()).collect(),
        schema_fingerprint: schema.fingerprint(),
        trees: booster.trees,
    };
    Ok((model, FitReport { train_rmse }))
}

impl BoostedModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Ensemble output before clamping.
    pub fn raw_predict(&self, row: &[Value]) -> f64 {
        self.init_value + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    /// Predicted outcome for a row in the model's feature order, clamped at 0.
    pub fn predict(&self, row: &[Value]) -> f64 {
        self.raw_predict(row).max(0.0)
    }

    /// Predict after checking the row against the model's schema.
    pub fn predict_checked(&self, schema: &Schema, row: &[Value]) -> Result<f64> {
        if schema.fingerprint() != self.schema_fingerprint {
            let feature = schema
                .features()
                .iter()
                .map(|f| f.name.as_str())
                .zip(self.feature_names.iter().map(String::as_str).chain(std::iter::repeat("")))
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.to_string())
                .unwrap_or_else(|| self.feature_names.last().cloned().unwrap_or_default());
            return Err(Error::InvalidFeature { feature, reason: "schema does not match the model".into() });
        }
        schema.validate(&crate::data::CovariateVector(row.to_vec()))?;
        Ok(self.predict(row))
    }

    /// Relative influence of each feature in percent: squared-error reduction
    /// summed over all splits on that feature, normalized to sum to 100.
    /// Features never split on are omitted; a splitless model gives an empty list.
    pub fn variable_importance(&self) -> Vec<(String, f64)> {
        let mut totals = vec![0.0; self.feature_names.len()];
        for tree in &self.trees {
            for (f, gain) in tree.split_gains() {
                totals[f] += gain;
            }
        }
        let grand: f64 = totals.iter().sum();
        if grand <= 0.0 {
            return Vec::new();
        }
        let mut out: Vec<(String, f64)> = totals
            .iter()
            .enumerate()
            .filter(|(_, g)| **g > 0.0)
            .map(|(f, g)| (self.feature_names[f].clone(), 100.0 * g / grand))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}
