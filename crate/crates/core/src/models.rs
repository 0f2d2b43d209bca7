//! Model specifications fitted end to end, with Table-2-style reports.
//!
//! Reports hold raw coefficients. The ×1000 scaling is applied only by the
//! text renderer.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::factors::FeatureMatrix;
use crate::fixed_effects::{self, CovarianceKind, FeOptions};
use crate::prep::{self, ModelId, Term};
use crate::stats;
use crate::{Error, Result};

/// Presentation multiplier for coefficients and standard errors.
pub const DISPLAY_SCALE: f64 = 1000.0;

/// Two-sided confidence levels marked by one, two and three stars.
pub const STAR_LEVELS: [f64; 3] = [0.90, 0.95, 0.99];

/// Number of stars earned by a t statistic.
pub fn stars_for_t(t: f64, dof: Option<f64>) -> u8 {
    if !t.is_finite() {
        return 0;
    }
    STAR_LEVELS
        .iter()
        .filter(|&&level| t.abs() > stats::critical_value(level, dof))
        .count() as u8
}

/// Number of stars earned by a p-value.
pub fn stars_for_p(p: f64) -> u8 {
    STAR_LEVELS.iter().filter(|&&level| p < 1.0 - level).count() as u8
}

fn star_text(n: u8) -> &'static str {
    ["", "*", "**", "***"][n.min(3) as usize]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub term: Term,
    pub coefficient: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub stars: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionReport {
    pub model: ModelId,
    pub rows: Vec<ReportRow>,
    /// Grand mean over firms of the daily mean of intercept plus effects.
    pub intercept: f64,
    pub theil_r2: f64,
    /// Unadjusted R² about the grand mean.
    pub r2: f64,
    pub n_obs: usize,
    pub n_firms: usize,
    pub n_days: usize,
    pub f_statistic: f64,
    pub f_p_value: f64,
    pub f_stars: u8,
    pub covariance: CovarianceKind,
}

impl RegressionReport {
    pub fn row(&self, term: Term) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.term == term)
    }
}

/// Estimator options shared by all models.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelOptions {
    pub fe: FeOptions,
}

/// Fitted model plus its report; the fit keeps residuals and effects.
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub report: RegressionReport,
    pub fit: fixed_effects::FeFit,
}

/// Fit one model on a prepared feature matrix.
pub fn fit_model(model: ModelId, features: &FeatureMatrix, options: &ModelOptions) -> Result<ModelFit> {
    let n_days = features.balanced_days()?;
    let n_firms = features.firms.len();
    let design = prep::polynomial_expand(features, model);
    let fit = fixed_effects::fit_two_way(&design.columns, &features.target, n_firms, n_days, &options.fe)?;
    let rows = design
        .terms
        .iter()
        .enumerate()
        .map(|(j, &term)| ReportRow {
            term,
            coefficient: fit.slopes[j],
            std_error: fit.std_errors[j],
            t_value: fit.t_values[j],
            p_value: fit.p_values[j],
            stars: stars_for_t(fit.t_values[j], fit.inference_dof),
        })
        .collect();
    let report = RegressionReport {
        model,
        rows,
        intercept: fixed_effects::report_intercept(&fit),
        theil_r2: fit.theil_r2,
        r2: fit.r2,
        n_obs: fit.n_obs,
        n_firms: fit.n_firms,
        n_days: fit.n_days,
        f_statistic: fit.f_test.statistic,
        f_p_value: fit.f_test.p_value,
        f_stars: stars_for_p(fit.f_test.p_value),
        covariance: fit.covariance_kind,
    };
    Ok(ModelFit { report, fit })
}

/// Fit several models in parallel, returning reports in input order.
pub fn fit_models(models: &[ModelId], features: &FeatureMatrix, options: &ModelOptions) -> Result<Vec<ModelFit>> {
    models.par_iter().map(|&m| fit_model(m, features, options)).collect()
}

/// The five headline models on one feature matrix.
pub fn run_table2(features: &FeatureMatrix, options: &ModelOptions) -> Result<Vec<RegressionReport>> {
    Ok(fit_models(&ModelId::TABLE, features, options)?
        .into_iter()
        .map(|m| m.report)
        .collect())
}

/// Long-format CSV with raw (unscaled) values:
/// `model,row,value,std_err,t_value,p_value,stars`.
pub fn write_reports_csv<W: Write>(reports: &[RegressionReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "row", "value", "std_err", "t_value", "p_value", "stars"])?;
    for r in reports {
        let m = r.model.code();
        for row in &r.rows {
            w.write_record([
                m.to_string(),
                row.term.key().to_string(),
                row.coefficient.to_string(),
                row.std_error.to_string(),
                row.t_value.to_string(),
                row.p_value.to_string(),
                row.stars.to_string(),
            ])?;
        }
        let stat = |name: &str, v: String| {
            [
                m.to_string(),
                name.to_string(),
                v,
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]
        };
        w.write_record(stat("intercept", r.intercept.to_string()))?;
        w.write_record(stat("theil_r2", r.theil_r2.to_string()))?;
        w.write_record(stat("r2", r.r2.to_string()))?;
        w.write_record(stat("n_obs", r.n_obs.to_string()))?;
        w.write_record(stat("n_firms", r.n_firms.to_string()))?;
        w.write_record(stat("n_days", r.n_days.to_string()))?;
        w.write_record([
            m.to_string(),
            "f_no_fe".to_string(),
            r.f_statistic.to_string(),
            String::new(),
            String::new(),
            r.f_p_value.to_string(),
            r.f_stars.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt(field: &str, row: usize) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field.parse::<f64>().map(Some).map_err(|e| Error::ParseFailure {
        row,
        message: format!("{field:?}: {e}"),
    })
}

/// Read reports written by [`write_reports_csv`]. Coefficient rows may omit
/// the p-value, in which case it is taken from the t value under the normal
/// reference; a missing t value is derived from the coefficient and SE.
/// Missing stat rows are left as NaN or zero.
pub fn read_reports_csv<R: Read>(src: R) -> Result<Vec<RegressionReport>> {
    let mut rdr = csv::Reader::from_reader(src);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (c_model, c_row, c_value) = (col("model")?, col("row")?, col("value")?);
    let c_se = col("std_err")?;
    let c_t = col("t_value").ok();
    let c_p = col("p_value").ok();
    let c_stars = col("stars").ok();

    let mut reports: Vec<RegressionReport> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let model: ModelId = rec[c_model].parse()?;
        let idx = match reports.iter().position(|r| r.model == model) {
            Some(idx) => idx,
            None => {
                reports.push(RegressionReport {
                    model,
                    rows: Vec::new(),
                    intercept: f64::NAN,
                    theil_r2: f64::NAN,
                    r2: f64::NAN,
                    n_obs: 0,
                    n_firms: 0,
                    n_days: 0,
                    f_statistic: f64::NAN,
                    f_p_value: f64::NAN,
                    f_stars: 0,
                    covariance: CovarianceKind::Cluster,
                });
                reports.len() - 1
            }
        };
        let report = &mut reports[idx];
        let key = rec[c_row].trim();
        let value = parse_opt(&rec[c_value], line)?.unwrap_or(f64::NAN);
        let get = |c: Option<usize>| c.map(|c| parse_opt(&rec[c], line)).transpose().map(Option::flatten);
        let stars = |p: f64| -> Result<u8> {
            Ok(match get(c_stars)? {
                Some(s) => s.clamp(0.0, 3.0) as u8,
                None => stars_for_p(p),
            })
        };
        if let Some(term) = Term::from_key(key) {
            let std_error = parse_opt(&rec[c_se], line)?.unwrap_or(f64::NAN);
            let t_value = get(c_t)?.unwrap_or(value / std_error);
            let p_value = get(c_p)?.unwrap_or_else(|| stats::two_sided_p(t_value, None));
            report.rows.push(ReportRow {
                term,
                coefficient: value,
                std_error,
                t_value,
                p_value,
                stars: stars(p_value)?,
            });
            continue;
        }
        let count = |v: f64| if v.is_finite() && v >= 0.0 { v as usize } else { 0 };
        match key {
            "intercept" => report.intercept = value,
            "theil_r2" => report.theil_r2 = value,
            "r2" => report.r2 = value,
            "n_obs" => report.n_obs = count(value),
            "n_firms" => report.n_firms = count(value),
            "n_days" => report.n_days = count(value),
            "f_no_fe" => {
                report.f_statistic = value;
                report.f_p_value = get(c_p)?.unwrap_or(f64::NAN);
                report.f_stars = stars(report.f_p_value)?;
            }
            other => {
                return Err(Error::ParseFailure {
                    row: line,
                    message: format!("unknown report row {other:?}"),
                })
            }
        }
    }
    Ok(reports)
}

/// Row order of the text table: every term used by any report, in the
/// canonical term order.
fn table_terms(reports: &[RegressionReport]) -> Vec<Term> {
    Term::ALL
        .into_iter()
        .filter(|t| reports.iter().any(|r| r.row(*t).is_some()))
        .collect()
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Column-aligned text table with coefficients and standard errors scaled
/// by [`DISPLAY_SCALE`].
pub fn render_text(reports: &[RegressionReport]) -> String {
    let mut lines: Vec<Vec<String>> = Vec::new();
    let mut header = vec![String::new()];
    header.extend(reports.iter().map(|r| format!("Model {}", r.model.code())));
    lines.push(header);

    for term in table_terms(reports) {
        let mut coef = vec![term.label().to_string()];
        let mut se = vec![String::new()];
        for r in reports {
            match r.row(term) {
                Some(row) => {
                    coef.push(format!(
                        "{:.3}{}",
                        row.coefficient * DISPLAY_SCALE,
                        star_text(row.stars)
                    ));
                    se.push(format!("({:.3}; {:.2})", row.std_error * DISPLAY_SCALE, row.t_value));
                }
                None => {
                    coef.push(String::new());
                    se.push(String::new());
                }
            }
        }
        lines.push(coef);
        lines.push(se);
    }
    let stat = |label: &str, f: &dyn Fn(&RegressionReport) -> String| {
        let mut line = vec![label.to_string()];
        line.extend(reports.iter().map(f));
        line
    };
    lines.push(stat("Intercept", &|r| format!("{:.4}", r.intercept)));
    lines.push(stat("R-Square", &|r| format!("{:.4}", r.theil_r2)));
    lines.push(stat("No. Observations", &|r| group_thousands(r.n_obs)));
    lines.push(stat("No. Groups/Firms", &|r| group_thousands(r.n_firms)));
    lines.push(stat("No. Days (per Firm)", &|r| group_thousands(r.n_days)));
    lines.push(stat("F Test for No Fixed Effects", &|r| {
        format!("{:.2}{}", r.f_statistic, star_text(r.f_stars))
    }));

    let n_cols = lines[0].len();
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &lines {
        let mut text = String::new();
        for (c, cell) in line.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                text.push_str(cell);
                text.push_str(&" ".repeat(pad));
            } else {
                text.push_str("  ");
                text.push_str(&" ".repeat(pad));
                text.push_str(cell);
            }
        }
        out.push_str(text.trim_end());
        out.push('\n');
    }
    let cov = match reports.first().map(|r| r.covariance) {
        Some(CovarianceKind::Dm3) => "leverage-adjusted heteroscedasticity-robust",
        _ => "firm-clustered robust",
    };
    let _ = writeln!(out);
    let _ = writeln!(out, "*, **, *** denote significance at the 90%, 95% and 99% level.");
    let _ = writeln!(
        out,
        "Coefficients and standard errors (in parentheses, with t values) are multiplied by 1,000."
    );
    let _ = writeln!(out, "Standard errors are {cov}.");
    let _ = writeln!(
        out,
        "Intercept: grand mean over firms of the daily mean of intercept and fixed effects."
    );
    let _ = writeln!(out, "R-Square: Theil's adjusted R².");
    out
}
