/// Empirical quantile rank of each value: `(average rank - 0.5) / n`, with
/// 1-based ranks and ties sharing their average rank. Always inside (0, 1).
pub fn quantile_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = (avg - 0.5) / n as f64;
        }
        start = end;
    }
    ranks
}

pub fn income_quantile_ranks(dataset: &super::Dataset) -> Vec<f64> {
    quantile_ranks(&dataset.outcomes())
}

/// Nearest-rank empirical quantile.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Truncate outcomes below at 0 and above at the given quantile.
pub fn cap_outcomes(values: &[f64], upper_quantile: Option<f64>) -> Vec<f64> {
    let cap = match upper_quantile {
        Some(q) if !values.is_empty() => empirical_quantile(values, q),
        _ => f64::INFINITY,
    };
    values.iter().map(|&y| y.clamp(0.0, cap)).collect()
}
