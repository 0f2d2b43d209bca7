//! Balanced firm × day panel: ingestion, canonical CSV emission, relative
//! changes and per-firm descriptive statistics.
//!
//! Two delimited files feed a panel. The firm file has one row per
//! `(firm, date)` with columns `date,ticker,adj_close,turnover,eps_fy1` and
//! optional `eps_fy2`, `mktcap`, `shares`. The macro file is keyed by date with
//! `date,spx,ust10y,gdp_fy1` and optional `gdp_fy2`. Dates are opaque labels
//! ordered lexicographically, so ISO dates sort chronologically.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use crate::stats;
use crate::{Error, Result};

/// Column names used to locate fields in the input files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub date: String,
    pub ticker: String,
    pub adj_close: String,
    pub turnover: String,
    pub eps_fy1: String,
    pub eps_fy2: String,
    pub mktcap: String,
    pub shares: String,
    pub spx: String,
    pub ust10y: String,
    pub gdp_fy1: String,
    pub gdp_fy2: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            date: "date".into(),
            ticker: "ticker".into(),
            adj_close: "adj_close".into(),
            turnover: "turnover".into(),
            eps_fy1: "eps_fy1".into(),
            eps_fy2: "eps_fy2".into(),
            mktcap: "mktcap".into(),
            shares: "shares".into(),
            spx: "spx".into(),
            ust10y: "ust10y".into(),
            gdp_fy1: "gdp_fy1".into(),
            gdp_fy2: "gdp_fy2".into(),
        }
    }
}

/// Daily records of one firm, aligned with the panel calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmSeries {
    pub adj_close: Vec<f64>,
    pub turnover: Vec<f64>,
    pub eps_fy1: Vec<f64>,
    pub eps_fy2: Option<Vec<f64>>,
    pub mktcap: Option<Vec<f64>>,
    pub shares: Option<Vec<f64>>,
}

/// Series shared by all firms, aligned with the panel calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroSeries {
    pub spx: Vec<f64>,
    pub ust10y: Vec<f64>,
    pub gdp_fy1: Vec<f64>,
    pub gdp_fy2: Option<Vec<f64>>,
}

/// A balanced panel. Immutable once built; every constructor validates.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    firms: Vec<String>,
    dates: Vec<String>,
    series: Vec<FirmSeries>,
    macro_series: MacroSeries,
}

impl PanelDataset {
    /// Assemble a panel from pre-aligned series. Firms are re-sorted by id.
    pub fn new(
        firms: Vec<String>,
        dates: Vec<String>,
        series: Vec<FirmSeries>,
        macro_series: MacroSeries,
    ) -> Result<Self> {
        if firms.len() != series.len() {
            return Err(Error::DimensionMismatch {
                expected: firms.len(),
                actual: series.len(),
            });
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "calendar not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        let n = dates.len();
        let check_len = |len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected: n,
                    actual: len,
                })
            }
        };
        check_len(macro_series.spx.len())?;
        check_len(macro_series.ust10y.len())?;
        check_len(macro_series.gdp_fy1.len())?;
        if let Some(g) = &macro_series.gdp_fy2 {
            check_len(g.len())?;
        }

        let mut paired: Vec<(String, FirmSeries)> = firms.into_iter().zip(series).collect();
        paired.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = paired.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateRecord {
                firm: w[0].0.clone(),
                date: dates.first().cloned().unwrap_or_default(),
            });
        }
        for (firm, s) in &paired {
            check_len(s.adj_close.len())?;
            check_len(s.turnover.len())?;
            check_len(s.eps_fy1.len())?;
            for opt in [&s.eps_fy2, &s.mktcap, &s.shares].into_iter().flatten() {
                check_len(opt.len())?;
            }
            for (t, (&p, &v)) in s.adj_close.iter().zip(&s.turnover).enumerate() {
                if !(p > 0.0) || !p.is_finite() {
                    return Err(Error::NonPositivePrice {
                        firm: firm.clone(),
                        date: dates[t].clone(),
                        value: p,
                    });
                }
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::NegativeTurnover {
                        firm: firm.clone(),
                        date: dates[t].clone(),
                        value: v,
                    });
                }
            }
        }
        let (firms, series) = paired.into_iter().unzip();
        Ok(Self {
            firms,
            dates,
            series,
            macro_series,
        })
    }

    pub fn firms(&self) -> &[String] {
        &self.firms
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn n_firms(&self) -> usize {
        self.firms.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_records(&self) -> usize {
        self.n_firms() * self.n_dates()
    }

    pub fn firm(&self, index: usize) -> &FirmSeries {
        &self.series[index]
    }

    pub fn macro_series(&self) -> &MacroSeries {
        &self.macro_series
    }

    /// Keep only the first `n_dates` calendar days.
    pub fn truncated(&self, n_dates: usize) -> Self {
        let n = n_dates.min(self.n_dates());
        let cut = |v: &Vec<f64>| v[..n].to_vec();
        let cut_opt = |v: &Option<Vec<f64>>| v.as_ref().map(cut);
        Self {
            firms: self.firms.clone(),
            dates: self.dates[..n].to_vec(),
            series: self
                .series
                .iter()
                .map(|s| FirmSeries {
                    adj_close: cut(&s.adj_close),
                    turnover: cut(&s.turnover),
                    eps_fy1: cut(&s.eps_fy1),
                    eps_fy2: cut_opt(&s.eps_fy2),
                    mktcap: cut_opt(&s.mktcap),
                    shares: cut_opt(&s.shares),
                })
                .collect(),
            macro_series: MacroSeries {
                spx: cut(&self.macro_series.spx),
                ust10y: cut(&self.macro_series.ust10y),
                gdp_fy1: cut(&self.macro_series.gdp_fy1),
                gdp_fy2: cut_opt(&self.macro_series.gdp_fy2),
            },
        }
    }

    /// Write the panel in the canonical two-file layout read by [`load_panel`].
    pub fn write_csv<W1: Write, W2: Write>(&self, firms_out: W1, macro_out: W2) -> Result<()> {
        let first = self.series.first();
        let has_eps2 = first.is_some_and(|s| s.eps_fy2.is_some());
        let has_cap = first.is_some_and(|s| s.mktcap.is_some());
        let has_shares = first.is_some_and(|s| s.shares.is_some());

        let mut w = csv::Writer::from_writer(firms_out);
        let mut header = vec!["date", "ticker", "adj_close", "turnover", "eps_fy1"];
        if has_eps2 {
            header.push("eps_fy2");
        }
        if has_cap {
            header.push("mktcap");
        }
        if has_shares {
            header.push("shares");
        }
        w.write_record(&header)?;
        for (firm, s) in self.firms.iter().zip(&self.series) {
            for (t, date) in self.dates.iter().enumerate() {
                let mut row = vec![
                    date.clone(),
                    firm.clone(),
                    s.adj_close[t].to_string(),
                    s.turnover[t].to_string(),
                    s.eps_fy1[t].to_string(),
                ];
                for v in [&s.eps_fy2, &s.mktcap, &s.shares].into_iter().flatten() {
                    row.push(v[t].to_string());
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;

        let m = &self.macro_series;
        let mut w = csv::Writer::from_writer(macro_out);
        let mut header = vec!["date", "spx", "ust10y", "gdp_fy1"];
        if m.gdp_fy2.is_some() {
            header.push("gdp_fy2");
        }
        w.write_record(&header)?;
        for (t, date) in self.dates.iter().enumerate() {
            let mut row = vec![
                date.clone(),
                m.spx[t].to_string(),
                m.ust10y[t].to_string(),
                m.gdp_fy1[t].to_string(),
            ];
            if let Some(g) = &m.gdp_fy2 {
                row.push(g[t].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Header {
    index: HashMap<String, usize>,
}

impl Header {
    fn new(record: &csv::StringRecord) -> Self {
        let index = record
            .iter()
            .enumerate()
            .map(|(i, name)| (name.trim().to_string(), i))
            .collect();
        Self { index }
    }

    fn required(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

fn field(record: &csv::StringRecord, col: usize, row: usize) -> Result<&str> {
    record.get(col).map(str::trim).ok_or_else(|| Error::ParseFailure {
        row,
        message: format!("missing field {col}"),
    })
}

fn number(record: &csv::StringRecord, col: usize, row: usize, name: &str) -> Result<f64> {
    let raw = field(record, col, row)?;
    let value: f64 = raw.parse().map_err(|_| Error::ParseFailure {
        row,
        message: format!("column `{name}`: cannot parse `{raw}` as a number"),
    })?;
    if !value.is_finite() {
        return Err(Error::ParseFailure {
            row,
            message: format!("column `{name}`: non-finite value `{raw}`"),
        });
    }
    Ok(value)
}

fn line_of(record: &csv::StringRecord, fallback: usize) -> usize {
    record.position().map_or(fallback, |p| p.line() as usize)
}

#[derive(Clone, Copy)]
struct FirmRow {
    adj_close: f64,
    turnover: f64,
    eps_fy1: f64,
    eps_fy2: Option<f64>,
    mktcap: Option<f64>,
    shares: Option<f64>,
}

/// Parse and validate a balanced panel from the firm and macro CSV streams.
pub fn load_panel<R1: Read, R2: Read>(firms_src: R1, macro_src: R2, schema: &ColumnMap) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(firms_src);
    let header = Header::new(reader.headers()?);
    let c_date = header.required(&schema.date)?;
    let c_ticker = header.required(&schema.ticker)?;
    let c_close = header.required(&schema.adj_close)?;
    let c_turn = header.required(&schema.turnover)?;
    let c_eps1 = header.required(&schema.eps_fy1)?;
    let c_eps2 = header.optional(&schema.eps_fy2);
    let c_cap = header.optional(&schema.mktcap);
    let c_shares = header.optional(&schema.shares);

    let mut by_firm: BTreeMap<String, BTreeMap<String, FirmRow>> = BTreeMap::new();
    let mut calendar = BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = line_of(&rec, i + 2);
        let date = field(&rec, c_date, row)?.to_string();
        let ticker = field(&rec, c_ticker, row)?.to_string();
        if date.is_empty() || ticker.is_empty() {
            return Err(Error::ParseFailure {
                row,
                message: "empty date or ticker".into(),
            });
        }
        let opt = |c: Option<usize>, name: &str| c.map(|c| number(&rec, c, row, name)).transpose();
        let parsed = FirmRow {
            adj_close: number(&rec, c_close, row, &schema.adj_close)?,
            turnover: number(&rec, c_turn, row, &schema.turnover)?,
            eps_fy1: number(&rec, c_eps1, row, &schema.eps_fy1)?,
            eps_fy2: opt(c_eps2, &schema.eps_fy2)?,
            mktcap: opt(c_cap, &schema.mktcap)?,
            shares: opt(c_shares, &schema.shares)?,
        };
        if parsed.adj_close <= 0.0 {
            return Err(Error::NonPositivePrice {
                firm: ticker,
                date,
                value: parsed.adj_close,
            });
        }
        calendar.insert(date.clone());
        let firm = by_firm.entry(ticker.clone()).or_default();
        if firm.insert(date.clone(), parsed).is_some() {
            return Err(Error::DuplicateRecord { firm: ticker, date });
        }
    }
    let dates: Vec<String> = calendar.into_iter().collect();

    let mut missing = Vec::new();
    for (firm, rows) in &by_firm {
        for d in &dates {
            if !rows.contains_key(d) {
                missing.push((firm.clone(), d.clone()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnbalancedPanel { missing });
    }

    let mut firms = Vec::with_capacity(by_firm.len());
    let mut series = Vec::with_capacity(by_firm.len());
    for (firm, rows) in by_firm {
        let rows: Vec<FirmRow> = rows.into_values().collect();
        let collect = |f: fn(&FirmRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let collect_opt = |f: fn(&FirmRow) -> Option<f64>| rows.iter().map(f).collect::<Option<Vec<_>>>();
        series.push(FirmSeries {
            adj_close: collect(|r| r.adj_close),
            turnover: collect(|r| r.turnover),
            eps_fy1: collect(|r| r.eps_fy1),
            eps_fy2: collect_opt(|r| r.eps_fy2),
            mktcap: collect_opt(|r| r.mktcap),
            shares: collect_opt(|r| r.shares),
        });
        firms.push(firm);
    }

    let macro_series = load_macro(macro_src, schema, &dates)?;
    PanelDataset::new(firms, dates, series, macro_series)
}

fn load_macro<R: Read>(src: R, schema: &ColumnMap, dates: &[String]) -> Result<MacroSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
    let header = Header::new(reader.headers()?);
    let c_date = header.required(&schema.date)?;
    let c_spx = header.required(&schema.spx)?;
    let c_yield = header.required(&schema.ust10y)?;
    let c_gdp1 = header.required(&schema.gdp_fy1)?;
    let c_gdp2 = header.optional(&schema.gdp_fy2);

    let mut rows: HashMap<String, (f64, f64, f64, Option<f64>)> = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = line_of(&rec, i + 2);
        let date = field(&rec, c_date, row)?.to_string();
        let values = (
            number(&rec, c_spx, row, &schema.spx)?,
            number(&rec, c_yield, row, &schema.ust10y)?,
            number(&rec, c_gdp1, row, &schema.gdp_fy1)?,
            c_gdp2.map(|c| number(&rec, c, row, &schema.gdp_fy2)).transpose()?,
        );
        if rows.insert(date.clone(), values).is_some() {
            return Err(Error::DuplicateRecord {
                firm: "<macro>".into(),
                date,
            });
        }
    }
    let mut out = MacroSeries {
        spx: Vec::with_capacity(dates.len()),
        ust10y: Vec::with_capacity(dates.len()),
        gdp_fy1: Vec::with_capacity(dates.len()),
        gdp_fy2: c_gdp2.map(|_| Vec::with_capacity(dates.len())),
    };
    for d in dates {
        let (spx, y, g1, g2) = rows.get(d).ok_or_else(|| Error::MissingMacroDate(d.clone()))?;
        out.spx.push(*spx);
        out.ust10y.push(*y);
        out.gdp_fy1.push(*g1);
        if let (Some(v), Some(g2)) = (out.gdp_fy2.as_mut(), g2) {
            v.push(*g2);
        }
    }
    Ok(out)
}

/// Day-over-day relative changes of a daily series. Index `t` (for `t ≥ 1`)
/// holds `(x_t − x_{t−1}) / x_{t−1}`; the first date has no value.
#[derive(Debug, Clone, PartialEq)]
pub struct Changes(Vec<f64>);

impl Changes {
    /// Relative changes of `levels`, failing on the first non-finite value.
    pub fn from_levels(levels: &[f64], series: &str, dates: &[String]) -> Result<Self> {
        let mut out = Vec::with_capacity(levels.len().saturating_sub(1));
        for t in 1..levels.len() {
            let c = (levels[t] - levels[t - 1]) / levels[t - 1];
            if !c.is_finite() {
                return Err(Error::NonFiniteChange {
                    series: series.to_string(),
                    date: dates.get(t).cloned().unwrap_or_else(|| t.to_string()),
                });
            }
            out.push(c);
        }
        Ok(Self(out))
    }

    /// Value at calendar index `t`; `None` for `t = 0` or past the end.
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(1).and_then(|i| self.0.get(i).copied())
    }

    /// Values at calendar indices `start..=end` (requires `start ≥ 1`).
    pub fn range(&self, start: usize, end: usize) -> &[f64] {
        &self.0[start - 1..end]
    }

    /// Number of defined values (calendar length − 1).
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Relative-change inputs of the valuation regression for one firm.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeChangeSeries {
    pub eps_change: Changes,
    pub mkt_return: Changes,
    pub int_change: Changes,
    pub gdp_change: Changes,
    pub stock_return: Changes,
}

/// Per-firm stock returns `R_{i,t} = (P_t − P_{t−1}) / P_{t−1}`.
pub fn compute_returns(dataset: &PanelDataset) -> Vec<Changes> {
    dataset
        .series
        .iter()
        .zip(&dataset.firms)
        .map(|(s, firm)| {
            Changes::from_levels(&s.adj_close, firm, &dataset.dates).expect("prices are validated positive")
        })
        .collect()
}

/// Weight of the current-year forecast on each day: `(252 − d) / 252`, where
/// `d` counts trading days since the first date of the same calendar year
/// (the first four characters of the date label).
pub fn forecast_weights(dates: &[String]) -> Vec<f64> {
    let mut out = Vec::with_capacity(dates.len());
    let mut year: Option<&str> = None;
    let mut d = 0usize;
    for date in dates {
        let y = date.get(..4).unwrap_or(date);
        if year != Some(y) {
            year = Some(y);
            d = 0;
        }
        out.push((252.0 - d as f64).max(0.0) / 252.0);
        d += 1;
    }
    out
}

fn blend(current: &[f64], next: &[f64], weights: &[f64]) -> Vec<f64> {
    current
        .iter()
        .zip(next)
        .zip(weights)
        .map(|((c, n), w)| w * c + (1.0 - w) * n)
        .collect()
}

/// Macro relative changes shared by every firm.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroChanges {
    pub mkt_return: Changes,
    pub int_change: Changes,
    pub gdp_change: Changes,
}

pub fn macro_changes(dataset: &PanelDataset, blend_forecasts: bool) -> Result<MacroChanges> {
    let m = &dataset.macro_series;
    let dates = &dataset.dates;
    let gdp = if blend_forecasts {
        let next = m
            .gdp_fy2
            .as_ref()
            .ok_or_else(|| Error::MissingColumn("gdp_fy2".into()))?;
        blend(&m.gdp_fy1, next, &forecast_weights(dates))
    } else {
        m.gdp_fy1.clone()
    };
    Ok(MacroChanges {
        mkt_return: Changes::from_levels(&m.spx, "spx", dates)?,
        int_change: Changes::from_levels(&m.ust10y, "ust10y", dates)?,
        gdp_change: Changes::from_levels(&gdp, "gdp", dates)?,
    })
}

/// All relative-change series for one firm.
pub fn relative_changes(
    dataset: &PanelDataset,
    firm: usize,
    macro_changes: &MacroChanges,
    blend_forecasts: bool,
) -> Result<RelativeChangeSeries> {
    let s = &dataset.series[firm];
    let name = &dataset.firms[firm];
    let eps = if blend_forecasts {
        let next = s
            .eps_fy2
            .as_ref()
            .ok_or_else(|| Error::MissingColumn("eps_fy2".into()))?;
        blend(&s.eps_fy1, next, &forecast_weights(&dataset.dates))
    } else {
        s.eps_fy1.clone()
    };
    Ok(RelativeChangeSeries {
        eps_change: Changes::from_levels(&eps, &format!("{name} eps"), &dataset.dates)?,
        mkt_return: macro_changes.mkt_return.clone(),
        int_change: macro_changes.int_change.clone(),
        gdp_change: macro_changes.gdp_change.clone(),
        stock_return: Changes::from_levels(&s.adj_close, name, &dataset.dates)?,
    })
}

/// One row of the cross-firm summary: statistics of per-firm means.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: &'static str,
    pub mean: f64,
    pub min: f64,
    pub first_quartile: f64,
    pub median: f64,
    pub third_quartile: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n_firms: usize,
    pub n_dates: usize,
    pub rows: Vec<SummaryRow>,
    /// Rows skipped because their input column was not supplied.
    pub omitted: Vec<Error>,
}

fn summary_row(label: &'static str, firm_means: &[f64]) -> SummaryRow {
    let sorted = stats::sorted_copy(firm_means);
    SummaryRow {
        label,
        mean: stats::mean(&sorted),
        min: sorted[0],
        first_quartile: stats::quantile_sorted(&sorted, 0.25),
        median: stats::quantile_sorted(&sorted, 0.5),
        third_quartile: stats::quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    }
}

/// Per-firm means of dollar volume, share volume and market capitalization,
/// summarized across firms. Rows whose column is absent are omitted and
/// recorded as [`Error::MissingColumn`] in [`Summary::omitted`].
pub fn summarize(dataset: &PanelDataset) -> Summary {
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    if dataset.n_firms() > 0 {
        let dollar: Vec<f64> = dataset.series.iter().map(|s| stats::mean(&s.turnover)).collect();
        rows.push(summary_row("mean_dollar_volume", &dollar));
        let optional: [(&'static str, &str, fn(&FirmSeries) -> Option<&Vec<f64>>); 2] = [
            ("mean_share_volume", "shares", |s| s.shares.as_ref()),
            ("mean_market_cap", "mktcap", |s| s.mktcap.as_ref()),
        ];
        for (label, column, get) in optional {
            let means: Option<Vec<f64>> = dataset.series.iter().map(|s| get(s).map(|v| stats::mean(v))).collect();
            match means {
                Some(m) => rows.push(summary_row(label, &m)),
                None => omitted.push(Error::MissingColumn(column.to_string())),
            }
        }
    }
    Summary {
        n_firms: dataset.n_firms(),
        n_dates: dataset.n_dates(),
        rows,
        omitted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MACRO: &str = "date,spx,ust10y,gdp_fy1\n2020-01-01,100,2,2\n2020-01-02,101,2.1,2\n2020-01-03,102,2.2,2.1\n";

    fn firms_csv(skip: Option<(&str, &str)>) -> String {
        let mut s = String::from("date,ticker,adj_close,turnover,eps_fy1\n");
        for firm in ["BBB", "AAA"] {
            for (d, p) in [("2020-01-01", 10.0), ("2020-01-02", 11.0), ("2020-01-03", 12.0)] {
                if skip == Some((firm, d)) {
                    continue;
                }
                s.push_str(&format!("{d},{firm},{p},1000,1.5\n"));
            }
        }
        s
    }

    #[test]
    fn loads_minimal_complete_panel() {
        let p = load_panel(firms_csv(None).as_bytes(), MACRO.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(p.n_records(), 6);
        assert_eq!(p.firms(), &["AAA".to_string(), "BBB".to_string()]);
        assert_eq!(p.dates().len(), 3);
        assert_eq!(p.macro_series().spx, vec![100.0, 101.0, 102.0]);
    }

    #[test]
    fn missing_day_is_unbalanced() {
        let err = load_panel(
            firms_csv(Some(("AAA", "2020-01-02"))).as_bytes(),
            MACRO.as_bytes(),
            &ColumnMap::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::UnbalancedPanel {
                missing: vec![("AAA".into(), "2020-01-02".into())]
            }
        );
        assert!(err.to_string().contains("AAA missing 2020-01-02"));
    }

    #[test]
    fn rejects_non_positive_price_and_bad_numbers() {
        let bad = firms_csv(None).replace("2020-01-02,AAA,11", "2020-01-02,AAA,0");
        let err = load_panel(bad.as_bytes(), MACRO.as_bytes(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::NonPositivePrice { .. }));

        let bad = firms_csv(None).replace("2020-01-02,AAA,11", "2020-01-02,AAA,eleven");
        let err = load_panel(bad.as_bytes(), MACRO.as_bytes(), &ColumnMap::default()).unwrap_err();
        match err {
            Error::ParseFailure { row, .. } => assert_eq!(row, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_records_rejected() {
        let dup = firms_csv(None) + "2020-01-01,AAA,10,1000,1.5\n";
        let err = load_panel(dup.as_bytes(), MACRO.as_bytes(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateRecord { .. }));
    }

    #[test]
    fn missing_required_column() {
        let csv = firms_csv(None).replace("turnover", "volume");
        let err = load_panel(csv.as_bytes(), MACRO.as_bytes(), &ColumnMap::default()).unwrap_err();
        assert_eq!(err, Error::MissingColumn("turnover".into()));
    }

    #[test]
    fn custom_schema_names() {
        let csv = firms_csv(None).replace("adj_close", "px_last");
        let schema = ColumnMap {
            adj_close: "px_last".into(),
            ..ColumnMap::default()
        };
        assert!(load_panel(csv.as_bytes(), MACRO.as_bytes(), &schema).is_ok());
    }

    #[test]
    fn returns_follow_the_formula() {
        let dates: Vec<String> = (0..3).map(|i| format!("d{i}")).collect();
        let r = Changes::from_levels(&[100.0, 95.0, 104.5], "x", &dates).unwrap();
        assert!((r.at(1).unwrap() + 0.05).abs() < 1e-15);
        assert!((r.at(2).unwrap() - 0.10).abs() < 1e-12);
        assert_eq!(r.at(0), None);
        let r = Changes::from_levels(&[100.0, 101.0], "x", &dates).unwrap();
        assert!((r.at(1).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_level_gives_non_finite_change() {
        let dates: Vec<String> = (0..3).map(|i| format!("d{i}")).collect();
        let err = Changes::from_levels(&[0.0, 1.0, 2.0], "ust10y", &dates).unwrap_err();
        assert!(matches!(err, Error::NonFiniteChange { .. }));
    }

    #[test]
    fn forecast_weights_reset_each_year() {
        let dates: Vec<String> = ["2019-12-30", "2019-12-31", "2020-01-02", "2020-01-03"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let w = forecast_weights(&dates);
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 251.0 / 252.0).abs() < 1e-15);
        assert_eq!(w[2], 1.0);
    }

    fn panel_with_means(means: &[f64]) -> PanelDataset {
        let dates: Vec<String> = vec!["2020-01-01".into(), "2020-01-02".into()];
        let firms: Vec<String> = (0..means.len()).map(|i| format!("F{i}")).collect();
        let series = means
            .iter()
            .map(|&m| FirmSeries {
                adj_close: vec![10.0, 10.0],
                turnover: vec![m - 1.0, m + 1.0],
                eps_fy1: vec![1.0, 1.0],
                eps_fy2: None,
                mktcap: None,
                shares: None,
            })
            .collect();
        let macro_series = MacroSeries {
            spx: vec![1.0, 1.0],
            ust10y: vec![1.0, 1.0],
            gdp_fy1: vec![1.0, 1.0],
            gdp_fy2: None,
        };
        PanelDataset::new(firms, dates, series, macro_series).unwrap()
    }

    #[test]
    fn summary_order_statistics() {
        let s = summarize(&panel_with_means(&[30.0, 10.0, 20.0]));
        let row = &s.rows[0];
        assert_eq!((row.min, row.median, row.max), (10.0, 20.0, 30.0));
        assert_eq!(
            s.omitted,
            vec![
                Error::MissingColumn("shares".into()),
                Error::MissingColumn("mktcap".into())
            ]
        );
    }

    #[test]
    fn summary_single_firm_constant() {
        let s = summarize(&panel_with_means(&[100.0]));
        let r = &s.rows[0];
        for v in [r.mean, r.min, r.first_quartile, r.median, r.third_quartile, r.max] {
            assert_eq!(v, 100.0);
        }
    }

    #[test]
    fn summary_quartile_matches_sort_oracle() {
        let s = summarize(&panel_with_means(&[4.0, 1.0, 3.0, 2.0]));
        // Sorted (1,2,3,4), position 0.75 between the first two order statistics.
        let mut sorted = [4.0, 1.0, 3.0, 2.0];
        sorted.sort_by(f64::total_cmp);
        let pos = 0.25 * 3.0;
        let oracle = sorted[0] + (pos - 0.0) * (sorted[1] - sorted[0]);
        assert!((s.rows[0].first_quartile - oracle).abs() < 1e-12);
        assert!((s.rows[0].first_quartile - 1.75).abs() < 1e-12);
    }
}
