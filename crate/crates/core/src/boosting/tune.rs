use serde::{Deserialize, Serialize};

use super::cv::{fold_assignment, CvSession};
use super::ensemble::BoostParams;
use super::matrix::BinnedMatrix;
use super::tree::TreeSize;
use crate::error::{Error, Result};
use crate::seed;

/// Hard cap on the tree count the extension loop may reach.
pub const TREE_CEILING: usize = 10_000;

/// How "interaction depth" values are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionRule {
    #[default]
    Depth,
    MaxSplits,
}

impl InteractionRule {
    pub fn tree_size(self, value: usize) -> TreeSize {
        match self {
            InteractionRule::Depth => TreeSize::Depth(value),
            InteractionRule::MaxSplits => TreeSize::MaxSplits(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub interaction_depths: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub bag_fractions: Vec<f64>,
    pub initial_max_trees: usize,
    pub extension_step: usize,
    /// Extend when the best tree count is within this many trees of the max.
    pub proximity_threshold: usize,
    #[serde(default)]
    pub interaction_rule: InteractionRule,
    pub min_node: usize,
    pub folds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub interaction_depth: usize,
    pub learning_rate: f64,
    pub bag_fraction: f64,
}

impl TuningGrid {
    /// Depth 5-7, rates .1 and .01, bag .5-.8 by .15, 1000 trees extended
    /// by 500 whenever the optimum is within 100 trees of the maximum.
    pub fn full() -> Self {
        TuningGrid {
            interaction_depths: vec![5, 6, 7],
            learning_rates: vec![0.1, 0.01],
            bag_fractions: vec![0.5, 0.65, 0.8],
            initial_max_trees: 1000,
            extension_step: 500,
            proximity_threshold: 100,
            interaction_rule: InteractionRule::Depth,
            min_node: 10,
            folds: 10,
        }
    }

    /// Reduced grid for desk-scale runs: same protocol, fewer cells and trees.
    pub fn desk() -> Self {
        TuningGrid {
            interaction_depths: vec![3, 5],
            learning_rates: vec![0.1],
            bag_fractions: vec![0.5, 0.8],
            initial_max_trees: 200,
            extension_step: 100,
            proximity_threshold: 20,
            interaction_rule: InteractionRule::Depth,
            min_node: 10,
            folds: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.interaction_depths.is_empty() || self.learning_rates.is_empty() || self.bag_fractions.is_empty() {
            return Err(Error::Config("tuning grid has an empty parameter set".into()));
        }
        if self.bag_fractions.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
            return Err(Error::Config("bag fractions must lie in (0, 1]".into()));
        }
        if self.learning_rates.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::Config("learning rates must lie in (0, 1]".into()));
        }
        if self.initial_max_trees == 0 || self.extension_step == 0 {
            return Err(Error::Config("tree counts and extension step must be positive".into()));
        }
        Ok(())
    }

    /// Grid cells in depth, rate, bag order.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &interaction_depth in &self.interaction_depths {
            for &learning_rate in &self.learning_rates {
                for &bag_fraction in &self.bag_fractions {
                    out.push(GridCell { interaction_depth, learning_rate, bag_fraction });
                }
            }
        }
        out
    }

    pub fn params(&self, cell: &GridCell, n_trees: usize) -> BoostParams {
        BoostParams {
            tree_size: self.interaction_rule.tree_size(cell.interaction_depth),
            learning_rate: cell.learning_rate,
            bag_fraction: cell.bag_fraction,
            n_trees,
            min_node: self.min_node,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: GridCell,
    pub best_trees: usize,
    pub cv_rmse: f64,
    /// Pooled held-out squared error at `best_trees`.
    pub cv_sse: f64,
    pub final_max_trees: usize,
    pub extensions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: CellResult,
    pub cells: Vec<CellResult>,
}

impl TuneResult {
    pub fn best_params(&self, grid: &TuningGrid) -> BoostParams {
        grid.params(&self.best.cell, self.best.best_trees)
    }
}

/// Evaluate one grid cell, extending the tree budget while the CV optimum
/// sits within `proximity_threshold` of it.
pub fn tune_cell(
    matrix: &BinnedMatrix,
    rows: &[u32],
    targets: &[f64],
    grid: &TuningGrid,
    cell: &GridCell,
    folds: &[Vec<u32>],
    seed: u64,
) -> Result<CellResult> {
    let params = grid.params(cell, grid.initial_max_trees);
    let mut session = CvSession::new(matrix, rows, targets, &params, folds, seed)?;
    let mut max_trees = grid.initial_max_trees.min(TREE_CEILING);
    let mut extensions = 0;
    session.extend_to(max_trees);
    loop {
        let (best, _) = session.curve().argmin().expect("non-empty curve");
        if max_trees - best <= grid.proximity_threshold && max_trees < TREE_CEILING {
            max_trees = (max_trees + grid.extension_step).min(TREE_CEILING);
            extensions += 1;
            session.extend_to(max_trees);
        } else {
            break;
        }
    }
    let curve = session.curve();
    let (best_trees, cv_rmse) = curve.argmin().expect("non-empty curve");
    Ok(CellResult {
        cell: *cell,
        best_trees,
        cv_rmse,
        cv_sse: curve.sse[best_trees - 1],
        final_max_trees: max_trees,
        extensions,
    })
}

fn better(a: &CellResult, b: &CellResult) -> bool {
    let key = |c: &CellResult| (c.cv_rmse, c.best_trees, c.cell.interaction_depth, c.cell.learning_rate, c.cell.bag_fraction);
    key(a).partial_cmp(&key(b)).is_some_and(|o| o.is_lt())
}

/// Grid search with K-fold CV. Every cell shares the same fold assignment.
/// The winner minimizes CV RMSE; ties go to fewer trees, then lower depth,
/// then lower learning rate.
pub fn tune(matrix: &BinnedMatrix, rows: &[u32], targets: &[f64], grid: &TuningGrid, seed: u64) -> Result<TuneResult> {
    grid.validate()?;
    let folds = fold_assignment(rows.len(), grid.folds, fold_seed(seed))?;
    let mut cells = Vec::new();
    for (i, cell) in grid.cells().iter().enumerate() {
        cells.push(tune_cell(matrix, rows, targets, grid, cell, &folds, seed::derive(seed, i as u64 + 1))?);
    }
    let best = cells.iter().fold(None::<&CellResult>, |acc, c| match acc {
        Some(b) if !better(c, b) => Some(b),
        _ => Some(c),
    });
    let best = best.expect("grid is non-empty").clone();
    Ok(TuneResult { best, cells })
}

/// Seed of the fold assignment used by [`tune`] for a given root seed.
pub fn fold_seed(seed: u64) -> u64 {
    seed::derive(seed, 0)
}
