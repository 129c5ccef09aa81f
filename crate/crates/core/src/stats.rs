use serde::{Deserialize, Serialize};

/// Mean with a normal-approximation 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub count: usize,
}

pub const Z95: f64 = 1.96;

/// `mean ± 1.96·s/√U` with `s` the sample standard deviation. A single value
/// yields a zero-width interval; an empty slice yields `None`.
pub fn mean_ci95(values: &[f64]) -> Option<MeanCi> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Z95 * var.sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanCi { mean, ci_low: mean - half, ci_high: mean + half, count: n })
}
