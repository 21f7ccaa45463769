//! Small numeric helpers shared across the engine: moments, quantiles, tail means.

/// Arithmetic mean. Returns 0.0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with `ddof` delta degrees of freedom (1 = unbiased).
pub fn variance(xs: &[f64], ddof: usize) -> f64 {
    let n = xs.len();
    if n <= ddof {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - ddof) as f64
}

pub fn std_dev(xs: &[f64], ddof: usize) -> f64 {
    variance(xs, ddof).sqrt()
}

/// Median of an unsorted slice (interpolated for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, 0.5)
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) on an ascending-sorted slice.
///
/// `p` is clamped to [0, 1]. Panics on an empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let p = p.clamp(0.0, 1.0);
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo >= n - 1 {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Quantile of an unsorted slice; sorts a copy.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, p)
}

/// Mean of all values `>= threshold`. Falls back to `threshold` when nothing qualifies
/// (can only happen through floating-point edge cases; the 95% tail is never empty
/// when the threshold itself is drawn from the sample).
pub fn tail_mean_at_or_above(xs: &[f64], threshold: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &x in xs {
        if x >= threshold {
            sum += x;
            count += 1;
        }
    }
    if count == 0 {
        threshold
    } else {
        sum / count as f64
    }
}

/// 95% VaR / CVaR of a loss sample: type-7 quantile plus the mean of the tail at or
/// above it.
pub fn var_cvar_95(losses: &[f64]) -> (f64, f64) {
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let var = quantile_sorted(&sorted, 0.95);
    let cvar = tail_mean_at_or_above(&sorted, var);
    (var, cvar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_interpolates_between_order_statistics() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.95), 95.05, epsilon = 1e-12);
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 100.0);
    }

    #[test]
    fn var_cvar_on_uniform_grid() {
        let losses: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let (var, cvar) = var_cvar_95(&losses);
        assert_abs_diff_eq!(var, 95.05, epsilon = 1e-12);
        // tail at or above 95.05 is {96..100}
        assert_abs_diff_eq!(cvar, 98.0, epsilon = 1e-12);
    }

    #[test]
    fn tail_mean_of_constant_sample_is_the_constant() {
        let xs = vec![3.25; 40];
        let (var, cvar) = var_cvar_95(&xs);
        assert_eq!(var, 3.25);
        assert_eq!(cvar, 3.25);
    }

    #[test]
    fn variance_matches_two_pass_formula() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let m = 3.75;
        let expect = ((1.0f64 - m).powi(2) + (2.0f64 - m).powi(2) + (4.0f64 - m).powi(2) + (8.0f64 - m).powi(2)) / 3.0;
        assert_abs_diff_eq!(variance(&xs, 1), expect, epsilon = 1e-14);
    }
}
