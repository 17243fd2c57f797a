//! Small numeric helpers shared across coders.

/// Quantile of a sample using linear interpolation between order
/// statistics (the "type 7" convention: h = (n-1)p).
///
/// `sorted` must be ascending and nonempty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Median via [`quantile_type7`]; input need not be sorted.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_type7(&sorted, 0.5)
}

/// Interquartile range via [`quantile_type7`]; input need not be sorted.
pub fn iqr(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_type7(&sorted, 0.75) - quantile_type7(&sorted, 0.25)
}

/// log(sum(exp(x))) without overflow. Returns -inf for an empty slice or
/// all -inf inputs.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalize `xs` in place to sum to 1. Returns false (leaving the slice
/// untouched) when the total is zero or non-finite.
pub fn normalize(xs: &mut [f64]) -> bool {
    let total: f64 = xs.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return false;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
    true
}

/// Exponentiate log-weights into a normalized probability vector.
/// All-(-inf) input yields None.
pub fn normalized_from_log(log_w: &[f64]) -> Option<Vec<f64>> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return None;
    }
    Some(log_w.iter().map(|&x| (x - lse).exp()).collect())
}

/// Mean of a slice; NaN when empty.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 when fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}
