//! Small shared numerics: percentiles, moments, min-max scaling.

use crate::error::{Error, Result};

/// Percentile by linear interpolation between order statistics, the same
/// convention spreadsheets and numpy's default use: rank = p/100 * (n-1),
/// value = lerp between the straddling order statistics.
///
/// `sorted` must be ascending and non-empty; `p` in [0, 100].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    assert!((0.0..=100.0).contains(&p), "percentile {p} out of range");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    if lo >= n - 1 {
        return sorted[n - 1];
    }
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Sorts a copy and takes the percentile. Convenience for small vectors.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in percentile input"));
    percentile_sorted(&v, p)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Excess kurtosis from population central moments: m4/m2^2 - 3.
/// Errors on constant input (m2 = 0).
pub fn excess_kurtosis(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Degenerate(
            "kurtosis needs at least two values".into(),
        ));
    }
    let m = mean(values);
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for x in values {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= values.len() as f64;
    m4 /= values.len() as f64;
    if m2 == 0.0 {
        return Err(Error::Degenerate("kurtosis of constant vector".into()));
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Min-max scales to [0, 1]. Errors on constant input.
pub fn min_max_scale(values: &[f64]) -> Result<Vec<f64>> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in values {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !(hi > lo) {
        return Err(Error::Degenerate(
            "min-max scaling of constant or empty vector".into(),
        ));
    }
    let span = hi - lo;
    Ok(values.iter().map(|&x| (x - lo) / span).collect())
}
