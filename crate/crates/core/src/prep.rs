//! Feature preparation: winsorization, per-firm standardization and the
//! polynomial design for each model.
//!
//! The binary resistance flag and the next-day return target are never
//! winsorized or standardized.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::factors::{Factor, FeatureMatrix};
use crate::stats;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WinsorScope {
    PerFirm,
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    pub winsorize_enabled: bool,
    pub lower_pct: f64,
    pub upper_pct: f64,
    pub winsor_scope: WinsorScope,
    pub standardize_enabled: bool,
    pub resistance_exempt: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            winsorize_enabled: true,
            lower_pct: 0.01,
            upper_pct: 0.99,
            winsor_scope: WinsorScope::PerFirm,
            standardize_enabled: true,
            resistance_exempt: true,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lower_pct && self.lower_pct < self.upper_pct && self.upper_pct <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "winsorization limits must satisfy 0 ≤ lower < upper ≤ 1, got ({}, {})",
                self.lower_pct, self.upper_pct
            )));
        }
        Ok(())
    }
}

/// Clipping bounds for [`winsorize`]: the interpolated `lower`/`upper`
/// quantiles delimit the retained interval, and the bounds are the extreme
/// observations that fall inside it. When none does, the observations just
/// outside it are used instead.
pub fn winsor_bounds(values: &[f64], lower: f64, upper: f64) -> (f64, f64) {
    let sorted = stats::sorted_copy(values);
    let q_lo = stats::quantile_sorted(&sorted, lower);
    let q_hi = stats::quantile_sorted(&sorted, upper);
    let lo = sorted[sorted.partition_point(|&v| v < q_lo)];
    let hi = sorted[sorted.partition_point(|&v| v <= q_hi) - 1];
    if lo <= hi {
        return (lo, hi);
    }
    // No observation inside the interval (tiny samples): use the nearest
    // observations just outside it.
    let lo = sorted[sorted.partition_point(|&v| v <= q_lo) - 1];
    let hi = sorted[sorted.partition_point(|&v| v < q_hi)];
    (lo, hi)
}

/// Replace values outside the `[lower, upper]` quantile interval with the
/// last observations inside it. Monotone and idempotent.
pub fn winsorize(values: &[f64], lower: f64, upper: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let (lo, hi) = winsor_bounds(values, lower, upper);
    values.iter().map(|&v| v.clamp(lo, hi)).collect()
}

fn prepared_factors(config: &PrepConfig) -> impl Iterator<Item = Factor> + '_ {
    Factor::ALL
        .into_iter()
        .filter(move |&f| !(f == Factor::Resistance && config.resistance_exempt))
}

/// Winsorize every non-exempt factor column, per firm or pooled.
pub fn winsorize_features(features: &FeatureMatrix, config: &PrepConfig) -> Result<FeatureMatrix> {
    config.validate()?;
    let mut out = features.clone();
    let ranges = features.firm_ranges();
    let factors: Vec<Factor> = prepared_factors(config).collect();
    let clipped: Vec<(Factor, Vec<f64>)> = factors
        .par_iter()
        .map(|&f| {
            let col = features.column(f);
            let values = match config.winsor_scope {
                WinsorScope::Pooled => winsorize(col, config.lower_pct, config.upper_pct),
                WinsorScope::PerFirm => {
                    let mut v = Vec::with_capacity(col.len());
                    for r in &ranges {
                        v.extend(winsorize(&col[r.clone()], config.lower_pct, config.upper_pct));
                    }
                    v
                }
            };
            (f, values)
        })
        .collect();
    for (f, values) in clipped {
        *out.column_mut(f) = values;
    }
    Ok(out)
}

/// Subtract each firm's mean and divide by its sample standard deviation,
/// feature by feature. Resistance is left untouched.
pub fn standardize_by_firm(features: &FeatureMatrix, config: &PrepConfig) -> Result<FeatureMatrix> {
    let mut out = features.clone();
    let ranges = features.firm_ranges();
    for f in prepared_factors(config) {
        let col = out.column_mut(f);
        for (firm, r) in ranges.iter().enumerate() {
            if r.is_empty() {
                continue;
            }
            let slice = &mut col[r.clone()];
            let m = stats::mean(slice);
            let sd = stats::sample_sd(slice);
            let scale = m.abs().max(1.0);
            if !(sd > 1e-14 * scale) {
                return Err(Error::ZeroVariance {
                    firm: features.firms[firm].clone(),
                    feature: f.name().to_string(),
                });
            }
            for v in slice.iter_mut() {
                *v = (*v - m) / sd;
            }
        }
    }
    Ok(out)
}

/// Winsorize (if enabled) then standardize (if enabled).
pub fn prepare(features: &FeatureMatrix, config: &PrepConfig) -> Result<FeatureMatrix> {
    config.validate()?;
    let w = if config.winsorize_enabled {
        winsorize_features(features, config)?
    } else {
        features.clone()
    };
    if config.standardize_enabled {
        standardize_by_firm(&w, config)
    } else {
        Ok(w)
    }
}

/// Regressor terms across all model specifications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Valuation,
    Valuation2,
    Valuation3,
    Trend,
    Trend2,
    Trend3,
    TrendValuation,
    Trend2Valuation,
    TrendValuation2,
    ShortVolatility,
    LongVolatility,
    LongTermTrend,
    Volume,
    Resistance,
}

impl Term {
    /// The nine cubic monomials in valuation and trend, in design order.
    pub const CUBIC: [Term; 9] = [
        Term::Valuation,
        Term::Valuation2,
        Term::Valuation3,
        Term::Trend,
        Term::Trend2,
        Term::Trend3,
        Term::TrendValuation,
        Term::Trend2Valuation,
        Term::TrendValuation2,
    ];

    pub const ALL: [Term; 14] = [
        Term::Valuation,
        Term::Valuation2,
        Term::Valuation3,
        Term::Trend,
        Term::Trend2,
        Term::Trend3,
        Term::TrendValuation,
        Term::Trend2Valuation,
        Term::TrendValuation2,
        Term::ShortVolatility,
        Term::LongVolatility,
        Term::LongTermTrend,
        Term::Volume,
        Term::Resistance,
    ];

    /// Machine key used in CSV files.
    pub fn key(self) -> &'static str {
        match self {
            Term::Valuation => "valuation",
            Term::Valuation2 => "valuation^2",
            Term::Valuation3 => "valuation^3",
            Term::Trend => "trend",
            Term::Trend2 => "trend^2",
            Term::Trend3 => "trend^3",
            Term::TrendValuation => "trend*valuation",
            Term::Trend2Valuation => "trend^2*valuation",
            Term::TrendValuation2 => "trend*valuation^2",
            Term::ShortVolatility => "short_volatility",
            Term::LongVolatility => "long_volatility",
            Term::LongTermTrend => "long_term_trend",
            Term::Volume => "volume",
            Term::Resistance => "resistance",
        }
    }

    /// Row label in the human-readable table.
    pub fn label(self) -> &'static str {
        match self {
            Term::Valuation => "Valuation",
            Term::Valuation2 => "(Valuation)²",
            Term::Valuation3 => "(Valuation)³",
            Term::Trend => "Price Trend",
            Term::Trend2 => "(Price Trend)²",
            Term::Trend3 => "(Price Trend)³",
            Term::TrendValuation => "Price Trend × Valuation",
            Term::Trend2Valuation => "Price Trend² × Valuation",
            Term::TrendValuation2 => "Price Trend × Valuation²",
            Term::ShortVolatility => "Short Term Volatility",
            Term::LongVolatility => "Long Term Volatility",
            Term::LongTermTrend => "Long Term Trend",
            Term::Volume => "Volume",
            Term::Resistance => "Resistance",
        }
    }

    pub fn from_key(key: &str) -> Option<Term> {
        Term::ALL.into_iter().find(|t| t.key() == key)
    }

    /// Powers of (valuation, trend) for the cubic monomials.
    pub fn powers(self) -> Option<(i32, i32)> {
        Some(match self {
            Term::Valuation => (1, 0),
            Term::Valuation2 => (2, 0),
            Term::Valuation3 => (3, 0),
            Term::Trend => (0, 1),
            Term::Trend2 => (0, 2),
            Term::Trend3 => (0, 3),
            Term::TrendValuation => (1, 1),
            Term::Trend2Valuation => (1, 2),
            Term::TrendValuation2 => (2, 1),
            _ => return None,
        })
    }

    /// Value of the term for one observation.
    pub fn evaluate(self, row: &[f64; 7]) -> f64 {
        let v = row[Factor::Valuation.index()];
        let t = row[Factor::Trend.index()];
        match self.powers() {
            Some((pv, pt)) => v.powi(pv) * t.powi(pt),
            None => match self {
                Term::ShortVolatility => row[Factor::ShortVolatility.index()],
                Term::LongVolatility => row[Factor::LongVolatility.index()],
                Term::LongTermTrend => row[Factor::LongTermTrend.index()],
                Term::Volume => row[Factor::Volume.index()],
                Term::Resistance => row[Factor::Resistance.index()],
                _ => unreachable!("cubic terms handled above"),
            },
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Model specifications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    /// Valuation only.
    M1V,
    /// Trend only.
    M1T,
    /// Valuation and trend.
    M2,
    /// Model 2 plus the valuation × trend interaction.
    M2X,
    /// Full cubic in valuation and trend.
    M3,
    /// Model 3 plus volatility, long-term trend, volume and resistance.
    M4,
}

impl ModelId {
    /// The five models of the headline table, in column order.
    pub const TABLE: [ModelId; 5] = [ModelId::M1V, ModelId::M1T, ModelId::M2, ModelId::M3, ModelId::M4];

    pub fn terms(self) -> Vec<Term> {
        match self {
            ModelId::M1V => vec![Term::Valuation],
            ModelId::M1T => vec![Term::Trend],
            ModelId::M2 => vec![Term::Valuation, Term::Trend],
            ModelId::M2X => vec![Term::Valuation, Term::Trend, Term::TrendValuation],
            ModelId::M3 => Term::CUBIC.to_vec(),
            ModelId::M4 => Term::ALL.to_vec(),
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            ModelId::M1V => "1V",
            ModelId::M1T => "1T",
            ModelId::M2 => "2",
            ModelId::M2X => "2X",
            ModelId::M3 => "3",
            ModelId::M4 => "4",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let s = s
            .strip_prefix("model")
            .or_else(|| s.strip_prefix("Model"))
            .unwrap_or(s)
            .trim();
        match s.to_ascii_uppercase().as_str() {
            "1V" => Ok(ModelId::M1V),
            "1T" => Ok(ModelId::M1T),
            "2" => Ok(ModelId::M2),
            "2X" => Ok(ModelId::M2X),
            "3" => Ok(ModelId::M3),
            "4" => Ok(ModelId::M4),
            _ => Err(Error::UnknownModel(s.to_string())),
        }
    }
}

/// Regressor columns for one model, in the model's term order.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub terms: Vec<Term>,
    pub columns: Vec<Vec<f64>>,
}

/// Monomials are formed from the (already standardized) base columns and are
/// not re-standardized.
pub fn polynomial_expand(features: &FeatureMatrix, model: ModelId) -> DesignMatrix {
    let terms = model.terms();
    let n = features.n_rows();
    let columns = terms
        .iter()
        .map(|&term| {
            (0..n)
                .map(|i| {
                    let row: [f64; 7] = std::array::from_fn(|c| features.columns[c][i]);
                    term.evaluate(&row)
                })
                .collect()
        })
        .collect();
    DesignMatrix { terms, columns }
}
