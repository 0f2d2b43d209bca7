//! Residual distribution checks against a Gaussian reference.
//!
//! Two views are provided: a quantile table comparing empirical quantiles with
//! those of a fitted normal, and the probability-plot correlation between the
//! sorted residuals and normal scores at plotting positions
//! `(i − 3/8) / (n + 1/4)`.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::stats;
use crate::{Error, Result};

/// Probe levels used when none are requested.
pub const DEFAULT_PROBES: [f64; 9] = [0.0001, 0.001, 0.01, 0.10, 0.50, 0.90, 0.99, 0.999, 0.9999];

/// Fewest observations accepted by [`normality_correlation`].
pub const MIN_CORRELATION_N: usize = 10;

const PARALLEL_SORT_MIN: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuantileOptions {
    /// Explicit probe levels; these error instead of being dropped.
    pub probes: Option<Vec<f64>>,
    /// Reference mean; defaults to the sample mean.
    pub mean: Option<f64>,
    /// Reference SD; defaults to the sample SD.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub level: f64,
    pub empirical: f64,
    pub gaussian: f64,
    /// Reference probability mass in the tail beyond the empirical quantile:
    /// `Φ(z)` below the median, `1 − Φ(z)` above it.
    pub tail_mass: f64,
    /// `tail_mass / min(level, 1 − level)`; 1 for a perfect fit.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileComparison {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub rows: Vec<ProbeRow>,
    /// Default probes skipped for lack of data.
    pub dropped: Vec<f64>,
}

/// Observations needed before a probe's empirical quantile is meaningful:
/// at least one expected observation beyond it.
pub fn probe_min_n(level: f64) -> usize {
    let tail = level.min(1.0 - level);
    (1.0 / tail - 1e-9).ceil() as usize
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    if v.len() >= PARALLEL_SORT_MIN {
        v.par_sort_unstable_by(f64::total_cmp);
    } else {
        v.sort_unstable_by(f64::total_cmp);
    }
    v
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteChange {
            series: "residual".into(),
            date: i.to_string(),
        }),
        None => Ok(()),
    }
}

pub fn quantile_compare(residuals: &[f64], options: &QuantileOptions) -> Result<QuantileComparison> {
    check_finite(residuals)?;
    let n = residuals.len();
    if n < 2 && (options.mean.is_none() || options.sd.is_none()) {
        return Err(Error::TooFewObservations {
            needed: 2,
            available: n,
        });
    }
    if n == 0 {
        return Err(Error::TooFewObservations {
            needed: 1,
            available: 0,
        });
    }
    // Moments from the sorted copy so the result ignores input order exactly.
    let xs = sorted(residuals);
    let mean = options.mean.unwrap_or_else(|| stats::mean(&xs));
    let sd = options.sd.unwrap_or_else(|| stats::sample_sd(&xs));
    if !(sd > 0.0) {
        return Err(Error::InvalidConfig(format!("reference SD must be positive, got {sd}")));
    }
    let explicit = options.probes.is_some();
    let mut probes = options.probes.clone().unwrap_or_else(|| DEFAULT_PROBES.to_vec());
    for &p in &probes {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidConfig(format!("probe level {p} outside (0, 1)")));
        }
    }
    probes.sort_by(f64::total_cmp);

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for level in probes {
        let needed = probe_min_n(level);
        if n < needed {
            if explicit {
                return Err(Error::TooFewObservations { needed, available: n });
            }
            log::warn!("dropping probe {level}: {n} residuals, {needed} needed");
            dropped.push(level);
            continue;
        }
        let empirical = stats::quantile_sorted(&xs, level);
        let gaussian = mean + sd * stats::normal_quantile(level);
        let cdf = stats::normal_cdf((empirical - mean) / sd);
        let tail_mass = if level <= 0.5 { cdf } else { 1.0 - cdf };
        rows.push(ProbeRow {
            level,
            empirical,
            gaussian,
            tail_mass,
            ratio: tail_mass / level.min(1.0 - level),
        });
    }
    Ok(QuantileComparison {
        n,
        mean,
        sd,
        rows,
        dropped,
    })
}

/// Normal scores `Φ⁻¹((i − 3/8)/(n + 1/4))`, `i = 1..n`.
pub fn normal_scores(n: usize) -> Vec<f64> {
    let denom = n as f64 + 0.25;
    (1..=n)
        .map(|i| stats::normal_quantile((i as f64 - 0.375) / denom))
        .collect()
}

/// Probability-plot correlation of the residuals with normal scores.
pub fn normality_correlation(residuals: &[f64]) -> Result<f64> {
    check_finite(residuals)?;
    let n = residuals.len();
    if n < MIN_CORRELATION_N {
        return Err(Error::TooFewObservations {
            needed: MIN_CORRELATION_N,
            available: n,
        });
    }
    let xs = sorted(residuals);
    let zs = normal_scores(n);
    let mx = stats::mean(&xs);
    let mz = stats::mean(&zs);
    let (mut sxz, mut sxx, mut szz) = (0.0, 0.0, 0.0);
    for (x, z) in xs.iter().zip(&zs) {
        let (dx, dz) = (x - mx, z - mz);
        sxz += dx * dz;
        sxx += dx * dx;
        szz += dz * dz;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance {
            firm: "all".into(),
            feature: "residual".into(),
        });
    }
    Ok(sxz / (sxx * szz).sqrt())
}

/// `level,empirical,gaussian,tail_mass,ratio` CSV.
pub fn write_comparison_csv<W: Write>(cmp: &QuantileComparison, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "empirical", "gaussian", "tail_mass", "ratio"])?;
    for r in &cmp.rows {
        w.write_record([
            r.level.to_string(),
            r.empirical.to_string(),
            r.gaussian.to_string(),
            r.tail_mass.to_string(),
            r.ratio.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Residuals from a CSV with a `residual` column, or from the last column
/// when there is none.
pub fn read_residuals_csv<R: Read>(src: R) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(src);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::MissingColumn("residual".into()));
    }
    let col = headers
        .iter()
        .position(|h| h.trim() == "residual")
        .unwrap_or(headers.len() - 1);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("").trim();
        let v: f64 = field.parse().map_err(|e| Error::ParseFailure {
            row: i + 2,
            message: format!("{field:?}: {e}"),
        })?;
        out.push(v);
    }
    Ok(out)
}
