//! Least-squares regression trees grown greedily on a [`BinnedMatrix`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::matrix::{BinnedMatrix, ColumnKind};
use crate::data::Value;

/// How tree size is limited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeSize {
    /// Maximum depth (root at depth 0).
    Depth(usize),
    /// Maximum number of internal nodes, grown best-first.
    MaxSplits(usize),
}

impl TreeSize {
    pub fn limit(self) -> usize {
        match self {
            TreeSize::Depth(d) | TreeSize::MaxSplits(d) => d,
        }
    }

    pub fn with_limit(self, limit: usize) -> Self {
        match self {
            TreeSize::Depth(_) => TreeSize::Depth(limit),
            TreeSize::MaxSplits(_) => TreeSize::MaxSplits(limit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub size: TreeSize,
    /// Minimum rows in every leaf.
    pub min_node: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitRule {
    /// Numeric: go left when `value < threshold`.
    Below { threshold: f64 },
    /// Categorical: go left when the level is in the set.
    Levels {
        #[serde(with = "level_mask")]
        left: u64,
    },
}

impl SplitRule {
    fn goes_left(&self, value: Value) -> bool {
        match (self, value) {
            (SplitRule::Below { threshold }, Value::Num(x)) => x < *threshold,
            (SplitRule::Below { threshold }, Value::Level(l)) => (l as f64) < *threshold,
            (SplitRule::Levels { left }, Value::Level(l)) => l < 64 && left & (1u64 << l) != 0,
            (SplitRule::Levels { .. }, Value::Num(_)) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
        n: u32,
    },
    Split {
        feature: u32,
        rule: SplitRule,
        left: u32,
        right: u32,
        /// Reduction in squared error achieved by this split.
        gain: f64,
        n: u32,
    },
}

/// Flattened binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64, n: usize) -> Self {
        RegressionTree { nodes: vec![Node::Leaf { value, n: n as u32 }] }
    }

    pub fn predict(&self, row: &[Value]) -> f64 {
        self.walk(|f| row[f])
    }

    pub(crate) fn predict_binned(&self, matrix: &BinnedMatrix, row: usize) -> f64 {
        self.walk(|f| matrix.value(row, f))
    }

    fn walk(&self, value: impl Fn(usize) -> Value) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, rule, left, right, .. } => {
                    i = if rule.goes_left(value(*feature as usize)) { *left } else { *right } as usize;
                }
            }
        }
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left as usize).max(go(nodes, *right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    /// `(feature, gain)` for every split.
    pub fn split_gains(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, gain, .. } => Some((*feature as usize, *gain)),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    feature: usize,
    rule: SplitRule,
    /// Numeric splits: codes `<= code_cut` go left.
    code_cut: u32,
    gain: f64,
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
    split: Candidate,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on gain, earlier node first on ties
        self.split.gain.total_cmp(&other.split.gain).then(other.node.cmp(&self.node))
    }
}

/// Reusable histogram buffers.
#[derive(Default)]
pub(crate) struct Scratch {
    count: Vec<u32>,
    sum: Vec<f64>,
    pairs: Vec<(u32, f64)>,
    levels: Vec<(f64, u32)>,
    buffer: Vec<u32>,
}

/// Fit a least-squares tree to `targets` (indexed by matrix row) over `rows`.
///
/// Splits are chosen greedily by squared-error reduction. Numeric thresholds
/// sit at midpoints between consecutive distinct values present in the node;
/// categorical splits send a prefix of the levels ordered by mean target
/// left. Growth stops at the size limit, when a child would hold fewer than
/// `min_node` rows, or when no split reduces the error. Leaves predict the
/// mean target.
pub fn fit_tree(matrix: &BinnedMatrix, rows: &[u32], targets: &[f64], params: &TreeParams) -> RegressionTree {
    fit_tree_with(matrix, rows, targets, params, &mut Scratch::default())
}

pub(crate) fn fit_tree_with(
    matrix: &BinnedMatrix,
    rows: &[u32],
    targets: &[f64],
    params: &TreeParams,
    scratch: &mut Scratch,
) -> RegressionTree {
    let min_node = params.min_node.max(1);
    let mut idx: Vec<u32> = rows.to_vec();
    let mean_of = |r: &[u32]| r.iter().map(|&i| targets[i as usize]).sum::<f64>() / r.len().max(1) as f64;
    let mut nodes = vec![Node::Leaf { value: mean_of(&idx), n: idx.len() as u32 }];
    let mut heap = BinaryHeap::new();
    let can_split = |depth: usize, splits: usize| match params.size {
        TreeSize::Depth(d) => depth < d,
        TreeSize::MaxSplits(m) => splits < m,
    };
    if can_split(0, 0) {
        if let Some(split) = best_split(matrix, &idx, targets, min_node, scratch) {
            heap.push(Pending { node: 0, start: 0, end: idx.len(), depth: 0, split });
        }
    }
    let mut splits = 0;
    while let Some(p) = heap.pop() {
        if !can_split(p.depth, splits) {
            continue;
        }
        let mid = partition(matrix, &mut idx[p.start..p.end], &p.split, &mut scratch.buffer) + p.start;
        let left_id = nodes.len();
        let right_id = left_id + 1;
        nodes.push(Node::Leaf { value: mean_of(&idx[p.start..mid]), n: (mid - p.start) as u32 });
        nodes.push(Node::Leaf { value: mean_of(&idx[mid..p.end]), n: (p.end - mid) as u32 });
        nodes[p.node] = Node::Split {
            feature: p.split.feature as u32,
            rule: p.split.rule.clone(),
            left: left_id as u32,
            right: right_id as u32,
            gain: p.split.gain,
            n: (p.end - p.start) as u32,
        };
        splits += 1;
        for (node, start, end) in [(left_id, p.start, mid), (right_id, mid, p.end)] {
            if can_split(p.depth + 1, splits) && end - start >= 2 * min_node {
                if let Some(split) = best_split(matrix, &idx[start..end], targets, min_node, scratch) {
                    heap.push(Pending { node, start, end, depth: p.depth + 1, split });
                }
            }
        }
    }
    RegressionTree { nodes }
}

fn partition(matrix: &BinnedMatrix, rows: &mut [u32], split: &Candidate, buffer: &mut Vec<u32>) -> usize {
    let codes = &matrix.columns()[split.feature].codes;
    let left = |r: u32| {
        let c = codes[r as usize];
        match &split.rule {
            SplitRule::Below { .. } => c <= split.code_cut,
            SplitRule::Levels { left } => left & (1u64 << c) != 0,
        }
    };
    buffer.clear();
    let mut n_left = 0;
    for i in 0..rows.len() {
        let r = rows[i];
        if left(r) {
            rows[n_left] = r;
            n_left += 1;
        } else {
            buffer.push(r);
        }
    }
    rows[n_left..].copy_from_slice(buffer);
    n_left
}

fn best_split(
    matrix: &BinnedMatrix,
    rows: &[u32],
    targets: &[f64],
    min_node: usize,
    scratch: &mut Scratch,
) -> Option<Candidate> {
    let n = rows.len();
    if n < 2 * min_node {
        return None;
    }
    let (mut total, mut total_sq) = (0.0, 0.0);
    for &r in rows {
        let t = targets[r as usize];
        total += t;
        total_sq += t * t;
    }
    let parent = total * total / n as f64;
    let min_gain = 1e-12 * total_sq;
    let mut best: Option<Candidate> = None;
    let mut consider = |gain: f64, make: &dyn Fn() -> Candidate| {
        if gain > min_gain && gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(make());
        }
    };

    for (f, col) in matrix.columns().iter().enumerate() {
        let n_bins = col.n_bins();
        if n_bins < 2 {
            continue;
        }
        match &col.kind {
            ColumnKind::Numeric(values) => {
                // (code, count, sum) over non-empty bins in ascending order
                let bins: Vec<(u32, u32, f64)> = if n * 4 < n_bins {
                    scratch.pairs.clear();
                    scratch.pairs.extend(rows.iter().map(|&r| (col.codes[r as usize], targets[r as usize])));
                    scratch.pairs.sort_by_key(|p| p.0);
                    let mut out: Vec<(u32, u32, f64)> = Vec::new();
                    for &(c, t) in &scratch.pairs {
                        match out.last_mut() {
                            Some(last) if last.0 == c => {
                                last.1 += 1;
                                last.2 += t;
                            }
                            _ => out.push((c, 1, t)),
                        }
                    }
                    out
                } else {
                    histogram(&col.codes, rows, targets, n_bins, scratch);
                    (0..n_bins)
                        .filter(|&b| scratch.count[b] > 0)
                        .map(|b| (b as u32, scratch.count[b], scratch.sum[b]))
                        .collect()
                };
                let (mut n_left, mut s_left) = (0usize, 0.0);
                for w in bins.windows(2) {
                    n_left += w[0].1 as usize;
                    s_left += w[0].2;
                    let n_right = n - n_left;
                    if n_left < min_node {
                        continue;
                    }
                    if n_right < min_node {
                        break;
                    }
                    let s_right = total - s_left;
                    let gain = s_left * s_left / n_left as f64 + s_right * s_right / n_right as f64 - parent;
                    let (lo, hi) = (values[w[0].0 as usize], values[w[1].0 as usize]);
                    let cut = w[0].0;
                    consider(gain, &|| Candidate {
                        feature: f,
                        rule: SplitRule::Below { threshold: (lo + hi) / 2.0 },
                        code_cut: cut,
                        gain,
                    });
                }
            }
            ColumnKind::Categorical { .. } => {
                histogram(&col.codes, rows, targets, n_bins, scratch);
                scratch.levels.clear();
                for b in 0..n_bins {
                    if scratch.count[b] > 0 {
                        scratch.levels.push((scratch.sum[b] / scratch.count[b] as f64, b as u32));
                    }
                }
                scratch.levels.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let (mut n_left, mut s_left, mut mask) = (0usize, 0.0, 0u64);
                for j in 0..scratch.levels.len().saturating_sub(1) {
                    let level = scratch.levels[j].1 as usize;
                    n_left += scratch.count[level] as usize;
                    s_left += scratch.sum[level];
                    mask |= 1u64 << level;
                    let n_right = n - n_left;
                    if n_left < min_node || n_right < min_node {
                        continue;
                    }
                    let s_right = total - s_left;
                    let gain = s_left * s_left / n_left as f64 + s_right * s_right / n_right as f64 - parent;
                    let left = mask;
                    consider(gain, &|| Candidate { feature: f, rule: SplitRule::Levels { left }, code_cut: 0, gain });
                }
            }
        }
    }
    best
}

fn histogram(codes: &[u32], rows: &[u32], targets: &[f64], n_bins: usize, scratch: &mut Scratch) {
    scratch.count.clear();
    scratch.count.resize(n_bins, 0);
    scratch.sum.clear();
    scratch.sum.resize(n_bins, 0.0);
    for &r in rows {
        let b = codes[r as usize] as usize;
        scratch.count[b] += 1;
        scratch.sum[b] += targets[r as usize];
    }
}

mod level_mask {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(mask: &u64, s: S) -> Result<S::Ok, S::Error> {
        let levels: Vec<u32> = (0..64).filter(|l| mask & (1u64 << l) != 0).collect();
        levels.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let levels = Vec::<u32>::deserialize(d)?;
        levels.into_iter().try_fold(0u64, |acc, l| {
            if l < 64 {
                Ok(acc | (1u64 << l))
            } else {
                Err(serde::de::Error::custom(format!("level index {l} out of range")))
            }
        })
    }
}
