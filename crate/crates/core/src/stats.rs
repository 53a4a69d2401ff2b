//! Small numeric helpers shared by the backtest and audit code.

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    sum(values.iter().copied()) / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (sum(values.iter().map(|v| (v - m).powi(2))) / (values.len() - 1) as f64).sqrt()
}

/// Normal-approximation 95% interval for the mean.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    let half = 1.96 * sample_sd(values) / (values.len().max(1) as f64).sqrt();
    (m - half, m + half)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(values), 2.0);
    }

    #[test]
    fn sd_and_ci() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((sample_sd(&v) - 1.2909944487358056).abs() < 1e-15);
        let (lo, hi) = mean_ci95(&v);
        assert!((lo + hi) / 2.0 - 2.5 < 1e-12);
        assert_eq!(sample_sd(&[5.0]), 0.0);
    }
}
