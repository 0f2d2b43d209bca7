//! Flat `key = value` run configuration.
//!
//! Keys mirror the long command line flags; `-` and `_` are interchangeable.
//! Blank lines and lines starting with `#` are ignored. Values given on the
//! command line replace those read from the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use paneldyn::factors::{FeatureConfig, ResistanceConfig};
use paneldyn::fixed_effects::{CovarianceKind, FeOptions, HcDivisor};
use paneldyn::models::ModelOptions;
use paneldyn::prep::{ModelId, PrepConfig, Term, WinsorScope};
use paneldyn::synth::{self, PriceProcess, SynthConfig};
use paneldyn::{Error, Result};

/// Every key accepted in a config file.
pub const KNOWN_KEYS: &[&str] = &[
    // inputs and outputs
    "firms",
    "macro",
    "features",
    "prepared",
    "residuals",
    "residuals_out",
    "from_report",
    "out",
    "threads",
    // features
    "trend_lookback",
    "vol_short",
    "vol_long",
    "ltt_window",
    "val_window",
    "window_includes_t",
    "significance_alpha",
    "filter_intercept",
    "blend_forecasts",
    "resistance_threshold",
    "resistance_high_from",
    "resistance_high_to",
    "resistance_dip_from",
    "resistance_dip_to",
    // prep
    "no_winsorize",
    "winsor_lower",
    "winsor_upper",
    "winsor_scope",
    "no_standardize",
    "standardize_resistance",
    // estimation
    "model",
    "cov",
    "hc_divisor",
    "cluster_small_sample",
    // surface
    "alpha",
    "grid",
    "level",
    "valuation",
    // diagnostics
    "sd",
    "probes",
    // simulation
    "kind",
    "n_firms",
    "n_days",
    "seed",
    "beta",
    "firm_effect_sd",
    "time_effect_sd",
    "noise_sd",
    "resistance_rate",
    "drift",
    "volatility",
    "market_beta",
    "market_drift",
    "market_volatility",
    "initial_price",
    "turnover_log_mean",
    "turnover_log_sd",
    "revision_prob",
    "eps_revision_sd",
    "gdp_revision_sd",
    "rate_volatility",
    "feedback",
];

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ParseFailure {
                row: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let key = normalize_key(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!("unknown key `{key}` on line {}", i + 1)));
            }
            s.values.insert(key, v.trim().to_string());
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize_key(key), value.into());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(key, v.to_string());
        }
    }

    /// Record a switch given on the command line; absent switches leave the
    /// file value alone.
    pub fn set_flag(&mut self, key: &str, on: bool) {
        if on {
            self.set(key, "true");
        }
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("bad value {v:?} for `{key}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.str(key) {
            None => Ok(false),
            Some(v) => parse_bool(v).ok_or_else(|| Error::InvalidConfig(format!("bad boolean {v:?} for `{key}`"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        if self.str(key).is_some() {
            self.flag(key)
        } else {
            Ok(default)
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.str(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::InvalidConfig(format!("`{}` is required", key.replace('_', "-"))))
    }

    pub fn feature_config(&self) -> Result<FeatureConfig> {
        let d = FeatureConfig::default();
        let r = &d.resistance;
        let cfg = FeatureConfig {
            trend_lookback: self.get_or("trend_lookback", d.trend_lookback)?,
            vol_short: self.get_or("vol_short", d.vol_short)?,
            vol_long: self.get_or("vol_long", d.vol_long)?,
            ltt_window: self.get_or("ltt_window", d.ltt_window)?,
            val_window: self.get_or("val_window", d.val_window)?,
            window_includes_t: self.bool_or("window_includes_t", d.window_includes_t)?,
            significance_alpha: self.get_or("significance_alpha", d.significance_alpha)?,
            filter_intercept: self.bool_or("filter_intercept", d.filter_intercept)?,
            blend_forecasts: self.bool_or("blend_forecasts", d.blend_forecasts)?,
            resistance: ResistanceConfig {
                threshold: self.get_or("resistance_threshold", r.threshold)?,
                high_from: self.get_or("resistance_high_from", r.high_from)?,
                high_to: self.get_or("resistance_high_to", r.high_to)?,
                dip_from: self.get_or("resistance_dip_from", r.dip_from)?,
                dip_to: self.get_or("resistance_dip_to", r.dip_to)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn prep_config(&self) -> Result<PrepConfig> {
        let d = PrepConfig::default();
        let scope = match self.str("winsor_scope") {
            None => d.winsor_scope,
            Some("firm") | Some("per_firm") => WinsorScope::PerFirm,
            Some("pooled") => WinsorScope::Pooled,
            Some(v) => {
                return Err(Error::InvalidConfig(format!(
                    "winsor-scope must be firm or pooled, got {v:?}"
                )))
            }
        };
        let cfg = PrepConfig {
            winsorize_enabled: !self.flag("no_winsorize")?,
            lower_pct: self.get_or("winsor_lower", d.lower_pct)?,
            upper_pct: self.get_or("winsor_upper", d.upper_pct)?,
            winsor_scope: scope,
            standardize_enabled: !self.flag("no_standardize")?,
            resistance_exempt: !self.flag("standardize_resistance")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_options(&self) -> Result<ModelOptions> {
        let d = FeOptions::default();
        let covariance = match self.str("cov") {
            None | Some("cluster") => CovarianceKind::Cluster,
            Some("dm3") => CovarianceKind::Dm3,
            Some(v) => return Err(Error::InvalidConfig(format!("cov must be cluster or dm3, got {v:?}"))),
        };
        let hc_divisor = match self.str("hc_divisor") {
            None | Some("plus") => HcDivisor::OnePlus,
            Some("minus") => HcDivisor::OneMinus,
            Some(v) => {
                return Err(Error::InvalidConfig(format!(
                    "hc-divisor must be plus or minus, got {v:?}"
                )))
            }
        };
        Ok(ModelOptions {
            fe: FeOptions {
                covariance,
                hc_divisor,
                cluster_small_sample: self.bool_or("cluster_small_sample", d.cluster_small_sample)?,
            },
        })
    }

    /// Comma-separated model list; the headline five when absent.
    pub fn models(&self) -> Result<Vec<ModelId>> {
        match self.str("model") {
            None => Ok(ModelId::TABLE.to_vec()),
            Some(list) => {
                let mut out: Vec<ModelId> = Vec::new();
                for code in list.split(',').filter(|c| !c.trim().is_empty()) {
                    let m: ModelId = code.parse()?;
                    if !out.contains(&m) {
                        out.push(m);
                    }
                }
                if out.is_empty() {
                    return Err(Error::InvalidConfig("empty model list".into()));
                }
                Ok(out)
            }
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let d = SynthConfig::default();
        let p = PriceProcess::default();
        let cfg = SynthConfig {
            n_firms: self.get_or("n_firms", d.n_firms)?,
            n_days: self.get_or("n_days", d.n_days)?,
            seed: self.get_or("seed", d.seed)?,
            beta: match self.str("beta") {
                None => d.beta,
                Some(spec) => parse_beta(spec)?,
            },
            firm_effect_sd: self.get_or("firm_effect_sd", d.firm_effect_sd)?,
            time_effect_sd: self.get_or("time_effect_sd", d.time_effect_sd)?,
            noise_sd: self.get_or("noise_sd", d.noise_sd)?,
            resistance_rate: self.get_or("resistance_rate", d.resistance_rate)?,
            price: PriceProcess {
                drift: self.get_or("drift", p.drift)?,
                volatility: self.get_or("volatility", p.volatility)?,
                market_beta: self.get_or("market_beta", p.market_beta)?,
                market_drift: self.get_or("market_drift", p.market_drift)?,
                market_volatility: self.get_or("market_volatility", p.market_volatility)?,
                initial_price: self.get_or("initial_price", p.initial_price)?,
                turnover_log_mean: self.get_or("turnover_log_mean", p.turnover_log_mean)?,
                turnover_log_sd: self.get_or("turnover_log_sd", p.turnover_log_sd)?,
                revision_prob: self.get_or("revision_prob", p.revision_prob)?,
                eps_revision_sd: self.get_or("eps_revision_sd", p.eps_revision_sd)?,
                gdp_revision_sd: self.get_or("gdp_revision_sd", p.gdp_revision_sd)?,
                rate_volatility: self.get_or("rate_volatility", p.rate_volatility)?,
                feedback: self.bool_or("feedback", p.feedback)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

/// `published`, or `;`-separated `term:value` pairs such as
/// `valuation:0.0006;trend^3:-0.00009`.
pub fn parse_beta(spec: &str) -> Result<Vec<(Term, f64)>> {
    let spec = spec.trim();
    if spec == "published" {
        return Ok(synth::published_cubic_beta());
    }
    let mut out = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::InvalidConfig(format!("expected term:value in beta, got {part:?}"));
        let (k, v) = part.rsplit_once(':').ok_or_else(bad)?;
        let term =
            Term::from_key(k.trim()).ok_or_else(|| Error::InvalidConfig(format!("unknown term `{}`", k.trim())))?;
        out.push((term, v.trim().parse().map_err(|_| bad())?));
    }
    Ok(out)
}
