//! One-hot least-squares baseline scored on the same CV folds as boosting.

use nalgebra::{DMatrix, DVector};

use crate::data::{FeatureKind, Schema, Value};

/// Column layout of the one-hot design matrix.
pub struct Design {
    width: usize,
    offsets: Vec<usize>,
    kinds: Vec<Option<usize>>,
    scale: Vec<(f64, f64)>,
}

impl Design {
    /// Intercept, one column per categorical level, standardized numerics.
    pub fn new<R: AsRef<[Value]>>(schema: &Schema, rows: &[R]) -> Self {
        let mut offsets = Vec::new();
        let mut kinds = Vec::new();
        let mut scale = Vec::new();
        let mut width = 1;
        for (f, feature) in schema.features().iter().enumerate() {
            offsets.push(width);
            match &feature.kind {
                FeatureKind::Categorical { levels } => {
                    kinds.push(Some(levels.len()));
                    scale.push((0.0, 1.0));
                    width += levels.len();
                }
                FeatureKind::Numeric { .. } => {
                    let n = rows.len().max(1) as f64;
                    let mean = rows.iter().map(|r| r.as_ref()[f].as_num()).sum::<f64>() / n;
                    let var = rows.iter().map(|r| (r.as_ref()[f].as_num() - mean).powi(2)).sum::<f64>() / n;
                    kinds.push(None);
                    scale.push((mean, if var > 0.0 { var.sqrt() } else { 1.0 }));
                    width += 1;
                }
            }
        }
        Design { width, offsets, kinds, scale }
    }

    pub fn encode<R: AsRef<[Value]>>(&self, rows: &[R]) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(rows.len(), self.width);
        for (i, row) in rows.iter().enumerate() {
            x[(i, 0)] = 1.0;
            for (f, v) in row.as_ref().iter().enumerate() {
                match (self.kinds[f], v) {
                    (Some(_), Value::Level(l)) => x[(i, self.offsets[f] + *l as usize)] = 1.0,
                    _ => {
                        let (m, s) = self.scale[f];
                        x[(i, self.offsets[f])] = (v.as_num() - m) / s;
                    }
                }
            }
        }
        x
    }
}

/// Minimum-norm least-squares fit; rank-deficient designs are fine.
pub fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let y = DVector::from_column_slice(y);
    x.clone().svd(true, true).solve(&y, 1e-9).expect("svd computed with u and v")
}

/// Held-out squared error of OLS summed over the given folds
/// (positions into `rows`/`targets`).
pub fn cv_sse<R: AsRef<[Value]>>(schema: &Schema, rows: &[R], targets: &[f64], folds: &[Vec<u32>]) -> f64 {
    let mut in_fold = vec![usize::MAX; rows.len()];
    for (f, positions) in folds.iter().enumerate() {
        for &p in positions {
            in_fold[p as usize] = f;
        }
    }
    let mut total = 0.0;
    for (f, held) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..rows.len()).filter(|&i| in_fold[i] != f).collect();
        let train_rows: Vec<&[Value]> = train.iter().map(|&i| rows[i].as_ref()).collect();
        let train_y: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
        let design = Design::new(schema, &train_rows);
        let beta = least_squares(&design.encode(&train_rows), &train_y);
        let held_rows: Vec<&[Value]> = held.iter().map(|&i| rows[i as usize].as_ref()).collect();
        let pred = design.encode(&held_rows) * &beta;
        for (k, &i) in held.iter().enumerate() {
            total += (targets[i as usize] - pred[k]).powi(2);
        }
    }
    total
}
