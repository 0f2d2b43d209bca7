//! Small descriptive-statistics helpers shared across the pipeline.
//!
//! Quantiles use linear interpolation between order statistics: for a sorted
//! sample `x[0..n]` and level `p`, the position is `h = (n - 1) p` and the
//! quantile is `x[⌊h⌋] + (h - ⌊h⌋)(x[⌊h⌋ + 1] - x[⌊h⌋])`.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Two-pass sample standard deviation with divisor `n - 1`.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Quantile of an already sorted, non-empty slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted_copy(values), p)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn normal_cdf(z: f64) -> f64 {
    standard_normal().cdf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// Two-sided p-value of a t statistic; `dof = None` uses the normal limit.
pub fn two_sided_p(t: f64, dof: Option<f64>) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let tail = match dof {
        Some(d) if d > 0.0 && d.is_finite() => {
            let dist = StudentsT::new(0.0, 1.0, d).expect("positive dof");
            dist.cdf(-t.abs())
        }
        _ => normal_cdf(-t.abs()),
    };
    (2.0 * tail).min(1.0)
}

/// Two-sided critical value at confidence `level` (e.g. 0.95).
pub fn critical_value(level: f64, dof: Option<f64>) -> f64 {
    let upper = 0.5 + level / 2.0;
    match dof {
        Some(d) if d > 0.0 && d.is_finite() => StudentsT::new(0.0, 1.0, d).expect("positive dof").inverse_cdf(upper),
        _ => normal_quantile(upper),
    }
}
