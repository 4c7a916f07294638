//! Summary statistics for per-task accuracies.

/// z-value of the two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Normal-approximation 95% half-width: `1.96 * s / sqrt(n)`.
pub fn ci95_halfwidth(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    Z95 * sample_std(xs) / (xs.len() as f64).sqrt()
}
