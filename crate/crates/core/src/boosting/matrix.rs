use crate::data::{FeatureKind, Schema, Value};

/// Column-major encoding of a feature table for split finding.
///
/// Numeric columns are mapped to the index of their value among the column's
/// sorted distinct values, so a histogram over codes visits every distinct
/// value in order. Categorical columns keep their level index.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    n_rows: usize,
    columns: Vec<Column>,
}

#[derive(Debug, Clone)]
pub(crate) struct Column {
    pub codes: Vec<u32>,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone)]
pub(crate) enum ColumnKind {
    /// Sorted distinct values.
    Numeric(Vec<f64>),
    Categorical { n_levels: usize },
}

impl Column {
    pub fn n_bins(&self) -> usize {
        match &self.kind {
            ColumnKind::Numeric(values) => values.len(),
            ColumnKind::Categorical { n_levels } => *n_levels,
        }
    }
}

impl BinnedMatrix {
    /// Encode rows whose values follow `schema`'s feature order.
    pub fn from_rows<R: AsRef<[Value]>>(schema: &Schema, rows: &[R]) -> Self {
        let n_rows = rows.len();
        let columns = schema
            .features()
            .iter()
            .enumerate()
            .map(|(f, feature)| match &feature.kind {
                FeatureKind::Categorical { levels } => Column {
                    codes: rows
                        .iter()
                        .map(|r| match r.as_ref()[f] {
                            Value::Level(l) => l,
                            Value::Num(x) => x as u32,
                        })
                        .collect(),
                    kind: ColumnKind::Categorical { n_levels: levels.len() },
                },
                FeatureKind::Numeric { .. } => {
                    let raw: Vec<f64> = rows.iter().map(|r| r.as_ref()[f].as_num()).collect();
                    let mut distinct = raw.clone();
                    distinct.sort_by(f64::total_cmp);
                    distinct.dedup();
                    let codes = raw
                        .iter()
                        .map(|x| distinct.binary_search_by(|d| d.total_cmp(x)).expect("value present") as u32)
                        .collect();
                    Column { codes, kind: ColumnKind::Numeric(distinct) }
                }
            })
            .collect();
        BinnedMatrix { n_rows, columns }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub(crate) fn columns(&self) -> &[Column] {
        &self.columns
    }

    /// Decoded value of one cell.
    pub fn value(&self, row: usize, feature: usize) -> Value {
        let col = &self.columns[feature];
        let code = col.codes[row];
        match &col.kind {
            ColumnKind::Numeric(values) => Value::Num(values[code as usize]),
            ColumnKind::Categorical { .. } => Value::Level(code),
        }
    }

    pub fn row(&self, row: usize) -> Vec<Value> {
        (0..self.columns.len()).map(|f| self.value(row, f)).collect()
    }
}
