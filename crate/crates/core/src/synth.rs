//! Synthetic panels with known ground truth, and a dummy-variable oracle for
//! the fixed-effects estimator.
//!
//! Every random draw comes from a ChaCha8 stream keyed by `(seed, firm,
//! stream)`, so firms can be generated in any order or in parallel and the
//! output depends on the configuration alone.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::factors::{ew_weights, Factor, FeatureMatrix};
use crate::panel::{FirmSeries, MacroSeries, PanelDataset};
use crate::prep::{ModelId, Term};
use crate::surface::{self, CubicSurface};
use crate::{Error, Result};

/// Raw price, volume and forecast dynamics. Rates are per trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceProcess {
    /// Idiosyncratic log drift.
    pub drift: f64,
    /// Idiosyncratic log volatility.
    pub volatility: f64,
    pub market_beta: f64,
    pub market_drift: f64,
    pub market_volatility: f64,
    pub initial_price: f64,
    pub turnover_log_mean: f64,
    pub turnover_log_sd: f64,
    /// Daily probability that an EPS or GDP forecast is revised.
    pub revision_prob: f64,
    pub eps_revision_sd: f64,
    pub gdp_revision_sd: f64,
    pub rate_volatility: f64,
    /// Add the response of `feedback_surface` to the lagged standardized
    /// trend to each day's return.
    pub feedback: bool,
}

impl Default for PriceProcess {
    fn default() -> Self {
        Self {
            drift: 0.0002,
            volatility: 0.015,
            market_beta: 1.0,
            market_drift: 0.0003,
            market_volatility: 0.01,
            initial_price: 50.0,
            turnover_log_mean: 20.0,
            turnover_log_sd: 0.35,
            revision_prob: 0.27,
            eps_revision_sd: 0.01,
            gdp_revision_sd: 0.001,
            rate_volatility: 0.01,
            feedback: false,
        }
    }
}

impl PriceProcess {
    /// Prices, turnover and forecasts that never move.
    pub fn constant() -> Self {
        Self {
            drift: 0.0,
            volatility: 0.0,
            market_beta: 0.0,
            market_drift: 0.0,
            market_volatility: 0.0,
            turnover_log_sd: 0.0,
            revision_prob: 0.0,
            rate_volatility: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_firms: usize,
    pub n_days: usize,
    pub seed: u64,
    /// True slopes; terms not listed are zero.
    pub beta: Vec<(Term, f64)>,
    pub firm_effect_sd: f64,
    pub time_effect_sd: f64,
    pub noise_sd: f64,
    /// Share of days flagged by the synthetic resistance indicator.
    pub resistance_rate: f64,
    pub price: PriceProcess,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_firms: 20,
            n_days: 500,
            seed: 1,
            beta: Vec::new(),
            firm_effect_sd: 0.001,
            time_effect_sd: 0.01,
            noise_sd: 0.015,
            resistance_rate: 0.01,
            price: PriceProcess::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_firms == 0 || self.n_days == 0 {
            return bad("n_firms and n_days must be positive".into());
        }
        let p = &self.price;
        let sds = [
            ("firm_effect_sd", self.firm_effect_sd),
            ("time_effect_sd", self.time_effect_sd),
            ("noise_sd", self.noise_sd),
            ("volatility", p.volatility),
            ("market_volatility", p.market_volatility),
            ("turnover_log_sd", p.turnover_log_sd),
            ("eps_revision_sd", p.eps_revision_sd),
            ("gdp_revision_sd", p.gdp_revision_sd),
            ("rate_volatility", p.rate_volatility),
        ];
        for (name, v) in sds {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        for (name, v) in [
            ("revision_prob", p.revision_prob),
            ("resistance_rate", self.resistance_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(p.initial_price > 0.0 && p.initial_price.is_finite()) {
            return bad("initial_price must be positive".into());
        }
        for &(term, b) in &self.beta {
            if !b.is_finite() {
                return bad(format!("beta for {term} is not finite"));
            }
        }
        Ok(())
    }

    pub fn beta_of(&self, term: Term) -> f64 {
        self.beta.iter().filter(|(t, _)| *t == term).map(|(_, b)| b).sum()
    }
}

/// Slopes of the published full cubic model that are significant at 10%,
/// in raw units.
pub fn published_cubic_beta() -> Vec<(Term, f64)> {
    vec![
        (Term::Valuation, 0.615e-3),
        (Term::Valuation2, 0.112e-3),
        (Term::Trend, 0.721e-3),
        (Term::Trend3, -0.090e-3),
        (Term::TrendValuation2, 0.151e-3),
    ]
}

/// Independent random stream for one `(seed, firm, stream)` key.
pub fn stream_rng(seed: u64, firm: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&firm.to_le_bytes());
    key[16..24].copy_from_slice(&0x7061_6e65_6c64_796e_u64.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Key used for draws shared by every firm.
const SHARED: u64 = u64::MAX;

const STREAM_FEATURES: u64 = 1;
const STREAM_EFFECT: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_PRICE: u64 = 4;
const STREAM_TURNOVER: u64 = 5;
const STREAM_FORECAST: u64 = 6;
const STREAM_MARKET: u64 = 7;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Rescale to sample mean 0 and sample SD 1; constant input is left at 0.
fn standardize(values: &mut [f64]) {
    let m = crate::stats::mean(values);
    let sd = crate::stats::sample_sd(values);
    for v in values.iter_mut() {
        *v = if sd > 0.0 { (*v - m) / sd } else { 0.0 };
    }
}

pub fn firm_names(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(3);
    (1..=n).map(|i| format!("F{i:0width$}")).collect()
}

/// Weekday calendar starting on the first business day of 2005.
pub fn business_days(n: usize) -> Vec<String> {
    let mut d = NaiveDate::from_ymd_opt(2005, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d.format("%Y-%m-%d").to_string());
        }
        d += Duration::days(1);
    }
    out
}

/// Effects and slopes used to build a synthetic feature panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: Vec<(Term, f64)>,
    pub firm_effects: Vec<f64>,
    pub time_effects: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub features: FeatureMatrix,
    pub truth: Truth,
}

/// Standardized factors with a target linear in the configured terms plus
/// firm and day effects and Gaussian noise.
pub fn generate_feature_panel(config: &SynthConfig) -> Result<SyntheticPanel> {
    config.validate()?;
    let (n_firms, n_days) = (config.n_firms, config.n_days);
    let mut shared = stream_rng(config.seed, SHARED, STREAM_EFFECT);
    let time_effects: Vec<f64> = normals(&mut shared, n_days)
        .into_iter()
        .map(|z| z * config.time_effect_sd)
        .collect();

    let per_firm: Vec<(f64, [Vec<f64>; 7], Vec<f64>)> = (0..n_firms)
        .into_par_iter()
        .map(|f| {
            let mut rng = stream_rng(config.seed, f as u64, STREAM_FEATURES);
            let mut cols: [Vec<f64>; 7] = Default::default();
            for factor in Factor::ALL {
                let col = &mut cols[factor.index()];
                if factor == Factor::Resistance {
                    *col = (0..n_days)
                        .map(|_| {
                            if rng.random::<f64>() < config.resistance_rate {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                } else {
                    *col = normals(&mut rng, n_days);
                    standardize(col);
                }
            }
            let mut effect_rng = stream_rng(config.seed, f as u64, STREAM_EFFECT);
            let mu = normal(&mut effect_rng) * config.firm_effect_sd;
            let mut noise_rng = stream_rng(config.seed, f as u64, STREAM_NOISE);
            let target = (0..n_days)
                .map(|d| {
                    let row: [f64; 7] = std::array::from_fn(|c| cols[c][d]);
                    let signal: f64 = config.beta.iter().map(|&(t, b)| b * t.evaluate(&row)).sum();
                    signal + mu + time_effects[d] + config.noise_sd * normal(&mut noise_rng)
                })
                .collect();
            (mu, cols, target)
        })
        .collect();

    let mut features = FeatureMatrix::empty(firm_names(n_firms), business_days(n_days));
    let mut firm_effects = Vec::with_capacity(n_firms);
    for (f, (mu, cols, target)) in per_firm.into_iter().enumerate() {
        firm_effects.push(mu);
        features.firm.extend(std::iter::repeat_n(f, n_days));
        features.day.extend(0..n_days);
        for (dst, src) in features.columns.iter_mut().zip(cols) {
            dst.extend(src);
        }
        features.target.extend(target);
    }
    Ok(SyntheticPanel {
        features,
        truth: Truth {
            beta: config.beta.clone(),
            firm_effects,
            time_effects,
        },
    })
}

/// Geometric random-walk prices with lognormal turnover, sparsely revised
/// forecasts and shared macro series.
pub fn generate_raw_panel(config: &SynthConfig) -> Result<PanelDataset> {
    config.validate()?;
    let p = &config.price;
    let n = config.n_days;
    let dates = business_days(n);

    let mut mrng = stream_rng(config.seed, SHARED, STREAM_MARKET);
    let mut market_log = vec![0.0; n];
    let mut spx = vec![1250.0; n];
    let mut ust10y = vec![0.04; n];
    for t in 1..n {
        market_log[t] = p.market_drift + p.market_volatility * normal(&mut mrng);
        spx[t] = spx[t - 1] * market_log[t].exp();
        ust10y[t] = ust10y[t - 1] * (p.rate_volatility * normal(&mut mrng)).exp();
    }
    let mut frng = stream_rng(config.seed, SHARED, STREAM_FORECAST);
    let gdp_fy1 = revised_path(&mut frng, n, 14_000.0, p.revision_prob, p.gdp_revision_sd);
    let gdp_fy2 = revised_path(&mut frng, n, 14_500.0, p.revision_prob, p.gdp_revision_sd);

    let feedback = if p.feedback {
        Some(CubicSurface::from_terms(&published_cubic_beta(), surface::Units::Raw)?)
    } else {
        None
    };
    let weights = ew_weights(10);
    // Approximate SD of the trend variable for unit-scale feedback input.
    let total_sd = (p.volatility.powi(2) + (p.market_beta * p.market_volatility).powi(2)).sqrt();
    let trend_sd = total_sd * (1.0 + weights.iter().map(|w| w * w).sum::<f64>()).sqrt();

    let series: Vec<FirmSeries> = (0..config.n_firms)
        .into_par_iter()
        .map(|f| {
            let key = f as u64;
            let mut prng = stream_rng(config.seed, key, STREAM_PRICE);
            let mut trng = stream_rng(config.seed, key, STREAM_TURNOVER);
            let mut erng = stream_rng(config.seed, key, STREAM_FORECAST);
            let start = p.initial_price * (1.0 + 0.5 * (f % 7) as f64 / 7.0);
            let mut price = vec![start; n];
            let mut returns = vec![0.0; n];
            for t in 1..n {
                let log_r = p.drift + p.market_beta * market_log[t] + p.volatility * normal(&mut prng);
                let mut r = log_r.exp_m1();
                if let Some(s) = &feedback {
                    if t > weights.len() && trend_sd > 0.0 {
                        let lagged = t - 1;
                        let avg: f64 = (1..=weights.len()).map(|k| weights[k - 1] * returns[lagged - k]).sum();
                        let z = ((returns[lagged] - avg) / trend_sd).clamp(-6.0, 6.0);
                        r += surface::evaluate(s, 0.0, z);
                    }
                }
                let r = r.max(-0.5);
                returns[t] = r;
                price[t] = price[t - 1] * (1.0 + r);
            }
            let turnover: Vec<f64> = (0..n)
                .map(|_| (p.turnover_log_mean + p.turnover_log_sd * normal(&mut trng)).exp())
                .collect();
            let eps0 = 1.0 + 4.0 * erng.random::<f64>();
            let eps_fy1 = revised_path(&mut erng, n, eps0, p.revision_prob, p.eps_revision_sd);
            let eps_fy2 = revised_path(&mut erng, n, eps0 * 1.08, p.revision_prob, p.eps_revision_sd);
            let shares_out = 1e8 * (1.0 + 9.0 * erng.random::<f64>());
            FirmSeries {
                mktcap: Some(price.iter().map(|px| px * shares_out).collect()),
                shares: Some(turnover.iter().zip(&price).map(|(v, px)| v / px).collect()),
                adj_close: price,
                turnover,
                eps_fy1,
                eps_fy2: Some(eps_fy2),
            }
        })
        .collect();

    PanelDataset::new(
        firm_names(config.n_firms),
        dates,
        series,
        MacroSeries {
            spx,
            ust10y,
            gdp_fy1,
            gdp_fy2: Some(gdp_fy2),
        },
    )
}

/// Level path that changes by a lognormal factor with probability `prob`
/// each day.
fn revised_path(rng: &mut ChaCha8Rng, n: usize, start: f64, prob: f64, sd: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut level = start;
    for t in 0..n {
        if t > 0 {
            let u: f64 = rng.random();
            let z = normal(rng);
            if u < prob {
                level *= (sd * z).exp();
            }
        }
        out.push(level);
    }
    out
}

/// Largest instance accepted by the dummy-variable oracle.
pub const ORACLE_MAX_FIRMS: usize = 10;
pub const ORACLE_MAX_DAYS: usize = 12;

/// Least squares with explicit indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct LsdvSolution {
    pub slopes: Vec<f64>,
    /// Constant of the dummy design (firm 0, day 0 baseline).
    pub constant: f64,
    /// Indicator coefficients of firms `1..N`, relative to firm 0.
    pub firm_dummies: Vec<f64>,
    /// Indicator coefficients of days `1..T`, relative to day 0.
    pub day_dummies: Vec<f64>,
}

/// Dummy-variable regression on a firm-major balanced panel, solved through
/// the normal equations with partially pivoted Gaussian elimination.
pub fn oracle_lsdv_columns(columns: &[Vec<f64>], y: &[f64], n_firms: usize, n_days: usize) -> Result<LsdvSolution> {
    if n_firms > ORACLE_MAX_FIRMS || n_days > ORACLE_MAX_DAYS {
        return Err(Error::InvalidConfig(format!(
            "oracle limited to {ORACLE_MAX_FIRMS} firms x {ORACLE_MAX_DAYS} days"
        )));
    }
    let n = n_firms * n_days;
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    let k = columns.len();
    let p = k + 1 + (n_firms - 1) + (n_days - 1);
    if n < p {
        return Err(Error::TooFewObservations {
            needed: p,
            available: n,
        });
    }
    let row = |i: usize| -> Vec<f64> {
        let (f, d) = (i / n_days, i % n_days);
        let mut r = Vec::with_capacity(p);
        r.extend(columns.iter().map(|c| c[i]));
        r.push(1.0);
        r.extend((1..n_firms).map(|g| if g == f { 1.0 } else { 0.0 }));
        r.extend((1..n_days).map(|s| if s == d { 1.0 } else { 0.0 }));
        r
    };
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..n {
        let x = row(i);
        for r in 0..p {
            for c in 0..p {
                a[r][c] += x[r] * x[c];
            }
            a[r][p] += x[r] * y[i];
        }
    }
    let scale = (0..p).map(|j| a[j][j].abs()).fold(0.0f64, f64::max).max(1.0);
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= 1e-12 * scale {
            return Err(Error::RankDeficient { column: col });
        }
        a.swap(col, pivot);
        for r in 0..p {
            if r != col {
                let factor = a[r][col] / a[col][col];
                if factor != 0.0 {
                    for c in col..=p {
                        a[r][c] -= factor * a[col][c];
                    }
                }
            }
        }
    }
    let sol: Vec<f64> = (0..p).map(|j| a[j][p] / a[j][j]).collect();
    Ok(LsdvSolution {
        slopes: sol[..k].to_vec(),
        constant: sol[k],
        firm_dummies: sol[k + 1..k + n_firms].to_vec(),
        day_dummies: sol[k + n_firms..].to_vec(),
    })
}

/// Dummy-variable oracle for one model's terms.
pub fn oracle_lsdv(features: &FeatureMatrix, model: ModelId) -> Result<LsdvSolution> {
    let n_days = features.balanced_days()?;
    let design = crate::prep::polynomial_expand(features, model);
    oracle_lsdv_columns(&design.columns, &features.target, features.firms.len(), n_days)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_panel() {
        let cfg = SynthConfig {
            n_firms: 4,
            n_days: 30,
            beta: vec![(Term::Valuation, 0.4)],
            ..Default::default()
        };
        let a = generate_feature_panel(&cfg).unwrap();
        let b = generate_feature_panel(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_feature_panel(&SynthConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.features.target, c.features.target);
    }

    #[test]
    fn features_are_standardized_per_firm() {
        let cfg = SynthConfig {
            n_firms: 3,
            n_days: 50,
            ..Default::default()
        };
        let p = generate_feature_panel(&cfg).unwrap();
        for r in p.features.firm_ranges() {
            let v = &p.features.column(Factor::Valuation)[r];
            assert!(crate::stats::mean(v).abs() < 1e-12);
            assert!((crate::stats::sample_sd(v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn business_calendar_skips_weekends() {
        let d = business_days(6);
        assert_eq!(
            d,
            [
                "2005-01-03",
                "2005-01-04",
                "2005-01-05",
                "2005-01-06",
                "2005-01-07",
                "2005-01-10"
            ]
        );
    }

    #[test]
    fn no_revisions_means_flat_eps() {
        let cfg = SynthConfig {
            n_firms: 2,
            n_days: 40,
            price: PriceProcess {
                revision_prob: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let panel = generate_raw_panel(&cfg).unwrap();
        for f in 0..2 {
            let eps = &panel.firm(f).eps_fy1;
            assert!(eps.iter().all(|e| *e == eps[0]));
        }
    }

    #[test]
    fn revision_rate_near_configured() {
        let mut rng = stream_rng(9, 0, 0);
        let path = revised_path(&mut rng, 20_001, 1.0, 0.27, 0.01);
        let changes = path.windows(2).filter(|w| w[0] != w[1]).count() as f64 / 20_000.0;
        assert!((changes - 0.27).abs() < 0.015, "{changes}");
    }

    #[test]
    fn two_by_two_hand_solution() {
        // y = βx + c + a·1{firm 1} + g·1{day 1}; the within-transformed x is
        // (¼, −¼, −¼, ¼), so β = Σ x̃ỹ / Σ x̃² = x̃ · y.
        let x = vec![1.0, 2.0, 3.0, 5.0];
        let y = vec![2.0, 1.0, 4.0, 9.0];
        let sol = oracle_lsdv_columns(&[x], &y, 2, 2).unwrap();
        let beta = (0.25 * 2.0 - 0.25 * 1.0 - 0.25 * 4.0 + 0.25 * 9.0) / 0.25;
        assert!((sol.slopes[0] - beta).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_large_panels() {
        let y = vec![0.0; 11 * 2];
        assert!(matches!(
            oracle_lsdv_columns(&[], &y, 11, 2),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn oracle_reports_collinearity() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = vec![1.0, 0.0, 2.0, 1.0, 0.0, 3.0];
        assert!(matches!(
            oracle_lsdv_columns(&[x.clone(), x], &y, 2, 3),
            Err(Error::RankDeficient { .. })
        ));
    }
}
