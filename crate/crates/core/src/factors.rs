//! Factor construction from a raw panel.
//!
//! Every factor at `(firm, t)` reads only data dated `≤ t`; the regression
//! target `R_{t+1}` is the single forward-looking column. Windows are counted
//! in trading days (calendar indices).

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::linalg::{self, OnDeficient};
use crate::panel::{self, PanelDataset, RelativeChangeSeries};
use crate::stats;
use crate::{Error, Result};

/// Number of coefficients in the rolling valuation regression: intercept,
/// EPS revision, market return, yield change, GDP revision.
pub const VALUATION_TERMS: usize = 5;

/// `Σ_{k=1..lookback} e^{−k}`; equals 0.58195 for the ten-day lookback.
pub fn ew_normalization(lookback: usize) -> f64 {
    (1..=lookback).map(|k| (-(k as f64)).exp()).sum()
}

/// Normalized exponential weights `e^{−k} / Σ e^{−j}` for `k = 1..lookback`.
pub fn ew_weights(lookback: usize) -> Vec<f64> {
    let norm = ew_normalization(lookback);
    (1..=lookback).map(|k| (-(k as f64)).exp() / norm).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResistanceConfig {
    pub threshold: f64,
    /// Reference high is the max price over `[t − high_from, t − high_to]`.
    pub high_from: usize,
    pub high_to: usize,
    /// Prices over `[t − dip_from, t − dip_to]` must all sit at or below
    /// `threshold · H`.
    pub dip_from: usize,
    pub dip_to: usize,
}

impl Default for ResistanceConfig {
    fn default() -> Self {
        Self {
            threshold: 0.85,
            high_from: 63,
            high_to: 16,
            dip_from: 15,
            dip_to: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub trend_lookback: usize,
    pub vol_short: usize,
    pub vol_long: usize,
    pub ltt_window: usize,
    pub val_window: usize,
    /// Fit the valuation regression over `[t − w + 1, t]` instead of the
    /// strictly prior `[t − w, t − 1]`.
    pub window_includes_t: bool,
    pub significance_alpha: f64,
    /// Apply the significance filter to the intercept as well as the slopes.
    pub filter_intercept: bool,
    /// Day-weighted blend of current- and next-year EPS/GDP forecasts.
    pub blend_forecasts: bool,
    pub resistance: ResistanceConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            trend_lookback: 10,
            vol_short: 10,
            vol_long: 251,
            ltt_window: 251,
            val_window: 189,
            window_includes_t: false,
            significance_alpha: 0.10,
            filter_intercept: true,
            blend_forecasts: false,
            resistance: ResistanceConfig::default(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.resistance;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.trend_lookback == 0 || self.vol_short == 0 || self.vol_long == 0 {
            return bad("lookbacks must be positive");
        }
        if self.ltt_window < 2 {
            return bad("ltt_window must be at least 2");
        }
        if self.val_window <= VALUATION_TERMS {
            return bad("val_window must exceed the number of valuation regressors");
        }
        if !(self.significance_alpha >= 0.0 && self.significance_alpha <= 1.0) {
            return bad("significance_alpha must lie in [0, 1]");
        }
        if !(r.high_from >= r.high_to && r.high_to > r.dip_from && r.dip_from >= r.dip_to && r.dip_to > 0) {
            return bad("resistance windows must satisfy high_from ≥ high_to > dip_from ≥ dip_to > 0");
        }
        if !(r.threshold > 0.0 && r.threshold <= 1.0) {
            return bad("resistance threshold must lie in (0, 1]");
        }
        Ok(())
    }

    /// First calendar index at which every factor window is fully populated.
    /// Returns start at index 1, so a window of `m` returns ending at `t`
    /// needs `t ≥ m`.
    pub fn first_feature_index(&self) -> usize {
        let valuation = if self.window_includes_t {
            self.val_window
        } else {
            self.val_window + 1
        };
        [
            self.trend_lookback + 1,
            self.vol_short + 1,
            self.vol_long + 1,
            self.ltt_window,
            valuation,
            self.resistance.high_from,
            self.trend_lookback,
        ]
        .into_iter()
        .max()
        .unwrap_or(0)
    }

    /// Calendar days per firm without a feature row: the leading lookback
    /// plus the final day, which has no next-day return.
    pub fn burn_in_days(&self) -> usize {
        self.first_feature_index() + 1
    }
}

/// Rolling valuation-regression output for one `(firm, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationCoefficients {
    pub firm: usize,
    pub t: usize,
    pub window: usize,
    pub alpha: [f64; VALUATION_TERMS],
    pub p_values: [f64; VALUATION_TERMS],
    pub zeroed: [bool; VALUATION_TERMS],
    /// Columns dropped as linearly dependent (e.g. no EPS revisions in the
    /// window). These are always zeroed.
    pub deficient: Vec<usize>,
}

impl ValuationCoefficients {
    /// Coefficients after the significance filter.
    pub fn effective(&self) -> [f64; VALUATION_TERMS] {
        let mut out = self.alpha;
        for (a, &z) in out.iter_mut().zip(&self.zeroed) {
            if z {
                *a = 0.0;
            }
        }
        out
    }
}

/// OLS of `R_s` on `(1, EPS_s, MKT_s, INT_s, GDP_s)` over the valuation
/// window for day `t`, with two-sided t-test p-values on `window − rank`
/// degrees of freedom.
pub fn fit_valuation_window(
    changes: &RelativeChangeSeries,
    firm: usize,
    t: usize,
    config: &FeatureConfig,
) -> Result<ValuationCoefficients> {
    let window = config.val_window;
    let end = if config.window_includes_t { t } else { t.wrapping_sub(1) };
    let available = end.min(changes.stock_return.len());
    if t == 0 || end > changes.stock_return.len() || end < window {
        return Err(Error::InsufficientHistory {
            needed: window,
            available,
        });
    }
    let start = end + 1 - window;
    let cols = [
        changes.eps_change.range(start, end),
        changes.mkt_return.range(start, end),
        changes.int_change.range(start, end),
        changes.gdp_change.range(start, end),
    ];
    let x = DMatrix::from_fn(
        window,
        VALUATION_TERMS,
        |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] },
    );
    let y = DVector::from_column_slice(changes.stock_return.range(start, end));
    let ls = linalg::least_squares(&x, &y, OnDeficient::Drop)?;

    let dof = window - ls.rank();
    let sigma2 = if dof > 0 { ls.rss() / dof as f64 } else { f64::NAN };
    let mut alpha = [0.0; VALUATION_TERMS];
    let mut p_values = [1.0; VALUATION_TERMS];
    let mut zeroed = [true; VALUATION_TERMS];
    for j in 0..VALUATION_TERMS {
        alpha[j] = ls.beta[j];
        if ls.dropped.contains(&j) {
            continue;
        }
        let se = (sigma2 * ls.xtx_inv[(j, j)]).sqrt();
        p_values[j] = if se > 0.0 {
            stats::two_sided_p(alpha[j] / se, Some(dof as f64))
        } else if se == 0.0 && alpha[j] != 0.0 {
            // Exact fit: the coefficient is determined without error.
            0.0
        } else {
            1.0
        };
        let significant = p_values[j] < config.significance_alpha;
        zeroed[j] = !(significant || (j == 0 && !config.filter_intercept));
    }
    Ok(ValuationCoefficients {
        firm,
        t,
        window,
        alpha,
        p_values,
        zeroed,
        deficient: ls.dropped,
    })
}

/// Model value `Val_t = (ᾱ₀ + ᾱ₁ EPS_t + ᾱ₂ MKT_t + ᾱ₃ INT_t + ᾱ₄ GDP_t + 1) · P_{t−1}`
/// where `changes = [EPS_t, MKT_t, INT_t, GDP_t]`.
pub fn project_valuation(coeffs: &ValuationCoefficients, changes: [f64; 4], prev_price: f64) -> f64 {
    let a = coeffs.effective();
    let predicted = a[0] + a[1] * changes[0] + a[2] * changes[1] + a[3] * changes[2] + a[4] * changes[3];
    (predicted + 1.0) * prev_price
}

/// Relative excess value `(Val − P) / Val`; positive when the stock trades
/// below its model value.
pub fn valuation_measure(value: f64, price: f64) -> Result<f64> {
    if !(value.abs() >= 1e-9 * price.abs()) {
        return Err(Error::DegenerateValuation { value, price });
    }
    Ok((value - price) / value)
}

fn require(window: &[f64], needed: usize) -> Result<()> {
    if window.len() < needed {
        Err(Error::InsufficientHistory {
            needed,
            available: window.len(),
        })
    } else {
        Ok(())
    }
}

/// Today's return minus the normalized exponentially weighted mean of the
/// previous `lookback` returns. `returns` ends at `t`; only the last
/// `lookback + 1` values are used.
pub fn trend(returns: &[f64], lookback: usize) -> Result<f64> {
    require(returns, lookback + 1)?;
    let n = returns.len();
    let today = returns[n - 1];
    let weights = ew_weights(lookback);
    let smoothed: f64 = weights.iter().enumerate().map(|(k, w)| w * returns[n - 2 - k]).sum();
    Ok(today - smoothed)
}

/// Standard deviation of the last `x + 1` returns with divisor `x`.
pub fn volatility(returns: &[f64], x: usize) -> Result<f64> {
    require(returns, x + 1)?;
    let w = &returns[returns.len() - x - 1..];
    let m = stats::mean(w);
    let ss: f64 = w.iter().map(|r| (r - m) * (r - m)).sum();
    Ok((ss / x as f64).sqrt())
}

/// OLS slope of the last `window` returns against the day index, scaled by
/// `window` to annual units.
pub fn long_term_trend(returns: &[f64], window: usize) -> Result<f64> {
    require(returns, window.max(2))?;
    let w = &returns[returns.len() - window..];
    let n = window as f64;
    let k_mean = (n + 1.0) / 2.0;
    let r_mean = stats::mean(w);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, r) in w.iter().enumerate() {
        let dk = (i + 1) as f64 - k_mean;
        sxy += dk * (r - r_mean);
        sxx += dk * dk;
    }
    Ok(sxy / sxx * n)
}

/// 1 when the price dipped to at most `threshold · H` over the dip window
/// and now sits within `[threshold · H, H]`, where `H` is the high over the
/// reference window. `prices` ends at `t`.
pub fn resistance_flag(prices: &[f64], cfg: &ResistanceConfig) -> Result<f64> {
    require(prices, cfg.high_from + 1)?;
    let t = prices.len() - 1;
    let high = prices[t - cfg.high_from..=t - cfg.high_to]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let floor = cfg.threshold * high;
    let dipped = prices[t - cfg.dip_from..=t - cfg.dip_to].iter().all(|&p| p <= floor);
    let now = prices[t];
    Ok(if dipped && floor <= now && now <= high {
        1.0
    } else {
        0.0
    })
}

/// Normalized exponentially weighted mean of the last `lookback` relative
/// turnover changes; `turnover` ends at `t`.
pub fn volume_trend(turnover: &[f64], lookback: usize) -> Result<f64> {
    require(turnover, lookback + 1)?;
    let n = turnover.len();
    let base = n - lookback - 1;
    if let Some(i) = turnover[base..].iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositiveTurnover { index: base + i });
    }
    let weights = ew_weights(lookback);
    Ok((1..=lookback)
        .map(|k| {
            let now = turnover[n - k];
            let before = turnover[n - k - 1];
            weights[k - 1] * (now - before) / before
        })
        .sum())
}

/// Factor columns, in output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Factor {
    Valuation,
    Trend,
    ShortVolatility,
    LongVolatility,
    LongTermTrend,
    Volume,
    Resistance,
}

impl Factor {
    pub const ALL: [Factor; 7] = [
        Factor::Valuation,
        Factor::Trend,
        Factor::ShortVolatility,
        Factor::LongVolatility,
        Factor::LongTermTrend,
        Factor::Volume,
        Factor::Resistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Valuation => "valuation",
            Factor::Trend => "trend",
            Factor::ShortVolatility => "short_volatility",
            Factor::LongVolatility => "long_volatility",
            Factor::LongTermTrend => "long_term_trend",
            Factor::Volume => "volume",
            Factor::Resistance => "resistance",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-observation factor values plus the next-day return target. Rows are
/// ordered firm-major, days ascending within each firm.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub firms: Vec<String>,
    pub dates: Vec<String>,
    /// Firm index of each row.
    pub firm: Vec<usize>,
    /// Calendar index (into `dates`) of each row.
    pub day: Vec<usize>,
    pub columns: [Vec<f64>; 7],
    pub target: Vec<f64>,
}

impl FeatureMatrix {
    pub fn empty(firms: Vec<String>, dates: Vec<String>) -> Self {
        Self {
            firms,
            dates,
            firm: Vec::new(),
            day: Vec::new(),
            columns: Default::default(),
            target: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn column(&self, f: Factor) -> &[f64] {
        &self.columns[f.index()]
    }

    pub fn column_mut(&mut self, f: Factor) -> &mut Vec<f64> {
        &mut self.columns[f.index()]
    }

    /// Half-open row range of each firm, in firm order.
    pub fn firm_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = vec![0..0; self.firms.len()];
        let mut start = 0;
        while start < self.firm.len() {
            let f = self.firm[start];
            let mut end = start;
            while end < self.firm.len() && self.firm[end] == f {
                end += 1;
            }
            out[f] = start..end;
            start = end;
        }
        out
    }

    pub fn rows_per_firm(&self) -> Vec<usize> {
        self.firm_ranges().iter().map(|r| r.len()).collect()
    }

    /// Number of days per firm when every firm covers the same days.
    pub fn balanced_days(&self) -> Result<usize> {
        let ranges = self.firm_ranges();
        let first = ranges.first().ok_or(Error::UnbalancedPanel { missing: vec![] })?;
        let days = &self.day[first.clone()];
        let mut missing = Vec::new();
        for (f, r) in ranges.iter().enumerate() {
            if r.start > 0 && self.firm[r.start - 1] > self.firm[r.start] {
                return Err(Error::InvalidConfig("feature rows are not firm-major".into()));
            }
            if &self.day[r.clone()] != days {
                let have: std::collections::HashSet<usize> = self.day[r.clone()].iter().copied().collect();
                for d in days.iter().filter(|d| !have.contains(d)) {
                    missing.push((self.firms[f].clone(), self.dates[*d].clone()));
                }
                if missing.is_empty() {
                    missing.push((self.firms[f].clone(), "<extra or reordered days>".into()));
                }
            }
        }
        if missing.is_empty() {
            Ok(days.len())
        } else {
            Err(Error::UnbalancedPanel { missing })
        }
    }

    fn push_row(&mut self, firm: usize, day: usize, values: [f64; 7], target: f64) {
        self.firm.push(firm);
        self.day.push(day);
        for (c, v) in self.columns.iter_mut().zip(values) {
            c.push(v);
        }
        self.target.push(target);
    }

    /// CSV with `firm,date`, one column per factor, then `target`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["firm", "date"];
        header.extend(Factor::ALL.iter().map(|f| f.name()));
        header.push("target");
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut row = vec![self.firms[self.firm[i]].clone(), self.dates[self.day[i]].clone()];
            row.extend(self.columns.iter().map(|c| c[i].to_string()));
            row.push(self.target[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the layout written by [`FeatureMatrix::write_csv`]. Firms and
    /// dates are re-indexed in sorted order.
    pub fn read_csv<R: Read>(src: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
        let headers = reader.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let c_firm = find("firm")?;
        let c_date = find("date")?;
        let c_factors: Vec<usize> = Factor::ALL.iter().map(|f| find(f.name())).collect::<Result<_>>()?;
        let c_target = find("target")?;

        let mut raw = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = rec.position().map_or(i + 2, |p| p.line() as usize);
            let num = |c: usize| -> Result<f64> {
                let s = rec.get(c).unwrap_or("");
                s.parse().map_err(|_| Error::ParseFailure {
                    row,
                    message: format!("cannot parse `{s}` as a number"),
                })
            };
            let mut values = [0.0; 7];
            for (v, &c) in values.iter_mut().zip(&c_factors) {
                *v = num(c)?;
            }
            raw.push((
                rec.get(c_firm).unwrap_or("").to_string(),
                rec.get(c_date).unwrap_or("").to_string(),
                values,
                num(c_target)?,
            ));
        }
        let mut firms: Vec<String> = raw.iter().map(|r| r.0.clone()).collect();
        firms.sort();
        firms.dedup();
        let mut dates: Vec<String> = raw.iter().map(|r| r.1.clone()).collect();
        dates.sort();
        dates.dedup();
        raw.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        let mut m = Self::empty(firms, dates);
        for (firm, date, values, target) in raw {
            let f = m.firms.binary_search(&firm).expect("firm indexed");
            let d = m.dates.binary_search(&date).expect("date indexed");
            if m.firm.last() == Some(&f) && m.day.last() == Some(&d) {
                return Err(Error::DuplicateRecord { firm, date });
            }
            m.push_row(f, d, values, target);
        }
        Ok(m)
    }
}

struct FirmFeatures {
    days: Vec<usize>,
    values: Vec<[f64; 7]>,
    target: Vec<f64>,
}

fn firm_features(
    dataset: &PanelDataset,
    firm: usize,
    changes: &RelativeChangeSeries,
    config: &FeatureConfig,
) -> Result<FirmFeatures> {
    let series = dataset.firm(firm);
    let prices = &series.adj_close;
    let turnover = &series.turnover;
    let returns = changes.stock_return.values();
    let n = dataset.n_dates();
    let first = config.first_feature_index();
    let mut out = FirmFeatures {
        days: Vec::new(),
        values: Vec::new(),
        target: Vec::new(),
    };
    if n < 2 {
        return Ok(out);
    }
    for t in first..n - 1 {
        // Returns through day t occupy returns[..t].
        let past = &returns[..t];
        let coeffs = fit_valuation_window(changes, firm, t, config)?;
        let day_changes = [
            changes.eps_change.at(t).unwrap_or_default(),
            changes.mkt_return.at(t).unwrap_or_default(),
            changes.int_change.at(t).unwrap_or_default(),
            changes.gdp_change.at(t).unwrap_or_default(),
        ];
        let value = project_valuation(&coeffs, day_changes, prices[t - 1]);
        let values = [
            valuation_measure(value, prices[t])?,
            trend(past, config.trend_lookback)?,
            volatility(past, config.vol_short)?,
            volatility(past, config.vol_long)?,
            long_term_trend(past, config.ltt_window)?,
            volume_trend(&turnover[..=t], config.trend_lookback)?,
            resistance_flag(&prices[..=t], &config.resistance)?,
        ];
        out.days.push(t);
        out.values.push(values);
        out.target.push(returns[t]);
    }
    Ok(out)
}

/// Build every factor for every `(firm, t)` with complete lookbacks and a
/// next-day return. Firms are processed in parallel; output order is fixed.
pub fn build_features(dataset: &PanelDataset, config: &FeatureConfig) -> Result<FeatureMatrix> {
    config.validate()?;
    let mut matrix = FeatureMatrix::empty(dataset.firms().to_vec(), dataset.dates().to_vec());
    if dataset.n_dates() < 2 {
        return Ok(matrix);
    }
    let macro_changes = panel::macro_changes(dataset, config.blend_forecasts)?;
    let per_firm: Vec<Result<FirmFeatures>> = (0..dataset.n_firms())
        .into_par_iter()
        .map(|f| {
            let changes = panel::relative_changes(dataset, f, &macro_changes, config.blend_forecasts)?;
            firm_features(dataset, f, &changes, config)
        })
        .collect();
    for (f, res) in per_firm.into_iter().enumerate() {
        let ff = res?;
        for ((day, values), target) in ff.days.into_iter().zip(ff.values).zip(ff.target) {
            matrix.push_row(f, day, values, target);
        }
    }
    Ok(matrix)
}
