use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ensemble::{BoostParams, Booster};
use super::matrix::BinnedMatrix;
use crate::error::{Error, Result};
use crate::seed;

/// Cross-validated error after each boosting iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    /// Fold-averaged RMSE; entry `i` is for `i + 1` trees.
    pub rmse: Vec<f64>,
    /// Held-out squared error summed over all folds.
    pub sse: Vec<f64>,
    pub n_rows: usize,
}

impl CvCurve {
    /// `(n_trees, rmse)` at the minimum; the earliest iteration wins ties.
    pub fn argmin(&self) -> Option<(usize, f64)> {
        self.rmse
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &r)| match best {
                Some((_, b)) if b <= r => best,
                _ => Some((i + 1, r)),
            })
    }
}

/// Partition positions `0..n` into `folds` groups by a seeded shuffle.
/// Group sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Config(format!("{n} rows cannot fill {folds} folds")));
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut out = vec![Vec::with_capacity(n / folds + 1); folds];
    for (i, pos) in order.into_iter().enumerate() {
        out[i % folds].push(pos);
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

struct FoldState<'a> {
    booster: Booster<'a>,
    held: Vec<u32>,
    pred: Vec<f64>,
}

/// Cross-validation that can be extended to more trees without refitting:
/// each fold keeps its booster, so the curve prefix never changes.
pub struct CvSession<'a> {
    matrix: &'a BinnedMatrix,
    targets: &'a [f64],
    rate: f64,
    folds: Vec<FoldState<'a>>,
    curve: CvCurve,
}

impl<'a> CvSession<'a> {
    /// `folds` holds positions into `rows`.
    pub fn new(
        matrix: &'a BinnedMatrix,
        rows: &[u32],
        targets: &'a [f64],
        params: &BoostParams,
        folds: &[Vec<u32>],
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        let mut in_fold = vec![usize::MAX; rows.len()];
        for (f, positions) in folds.iter().enumerate() {
            for &p in positions {
                in_fold[p as usize] = f;
            }
        }
        let states = folds
            .iter()
            .enumerate()
            .map(|(f, positions)| {
                let held: Vec<u32> = positions.iter().map(|&p| rows[p as usize]).collect();
                let train: Vec<u32> =
                    rows.iter().zip(&in_fold).filter(|(_, &g)| g != f).map(|(&r, _)| r).collect();
                let booster = Booster::new(matrix, train, targets, *params, seed::derive(seed, f as u64));
                let pred = vec![booster.init; held.len()];
                FoldState { booster, held, pred }
            })
            .collect();
        Ok(CvSession {
            matrix,
            targets,
            rate: params.learning_rate,
            folds: states,
            curve: CvCurve { rmse: Vec::new(), sse: Vec::new(), n_rows: rows.len() },
        })
    }

    pub fn n_trees(&self) -> usize {
        self.curve.rmse.len()
    }

    pub fn extend_to(&mut self, n_trees: usize) {
        while self.curve.rmse.len() < n_trees {
            let mut rmse_sum = 0.0;
            let mut sse_total = 0.0;
            for fold in &mut self.folds {
                let tree = fold.booster.step();
                let mut sse = 0.0;
                for (p, &r) in fold.pred.iter_mut().zip(&fold.held) {
                    *p += self.rate * tree.predict_binned(self.matrix, r as usize);
                    sse += (self.targets[r as usize] - *p).powi(2);
                }
                rmse_sum += (sse / fold.held.len().max(1) as f64).sqrt();
                sse_total += sse;
            }
            self.curve.rmse.push(rmse_sum / self.folds.len() as f64);
            self.curve.sse.push(sse_total);
        }
    }

    pub fn curve(&self) -> &CvCurve {
        &self.curve
    }

    pub fn into_curve(self) -> CvCurve {
        self.curve
    }
}

/// K-fold cross-validation of boosting at fixed parameters, returning the
/// held-out error for every iteration `1..=params.n_trees`.
pub fn cross_validate(
    matrix: &BinnedMatrix,
    rows: &[u32],
    targets: &[f64],
    params: &BoostParams,
    folds: usize,
    seed: u64,
) -> Result<CvCurve> {
    let assignment = fold_assignment(rows.len(), folds, seed::derive(seed, u64::MAX))?;
    let mut session = CvSession::new(matrix, rows, targets, params, &assignment, seed)?;
    session.extend_to(params.n_trees);
    Ok(session.into_curve())
}
