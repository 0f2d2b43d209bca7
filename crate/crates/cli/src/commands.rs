//! Subcommand bodies. Every command reads its options from [`Settings`] and
//! writes plain files; nothing in the outputs depends on wall-clock time or
//! on the worker count.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use paneldyn::diagnostics::{self, QuantileComparison, QuantileOptions};
use paneldyn::factors::{self, FeatureMatrix};
use paneldyn::models::{self, ModelFit, RegressionReport};
use paneldyn::panel::{self, ColumnMap, PanelDataset};
use paneldyn::prep::{self, ModelId, Term};
use paneldyn::surface::{self, AxisRange, CubicSurface};
use paneldyn::synth;
use paneldyn::{Error, Result};

use crate::config::Settings;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Write a whole file, creating parent directories as needed.
fn write_file(path: &Path, emit: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    emit(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, |w| Ok(w.write_all(text.as_bytes())?))
}

fn load_dataset(s: &Settings) -> Result<PanelDataset> {
    let firms = s.require_path("firms")?;
    let macros = s.require_path("macro")?;
    panel::load_panel(open(&firms)?, open(&macros)?, &ColumnMap::default())
}

/// Unprepared features from `features`, or built from `firms` and `macro`.
fn load_features(s: &Settings) -> Result<FeatureMatrix> {
    match s.path("features") {
        Some(p) => FeatureMatrix::read_csv(open(&p)?),
        None => factors::build_features(&load_dataset(s)?, &s.feature_config()?),
    }
}

fn residuals_csv(m: &FeatureMatrix, fit: &ModelFit, w: &mut dyn Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["firm", "date", "residual"])?;
    for (i, e) in fit.fit.residuals.iter().enumerate() {
        out.write_record([m.firms[m.firm[i]].as_str(), m.dates[m.day[i]].as_str(), &e.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn ingest(s: &Settings) -> Result<String> {
    let dataset = load_dataset(s)?;
    let summary = panel::summarize(&dataset);
    let mut text = format!(
        "{} firms, {} dates, {} records\n",
        dataset.n_firms(),
        dataset.n_dates(),
        dataset.n_records()
    );
    for e in &summary.omitted {
        writeln!(text, "omitted: {e}").unwrap();
    }
    if let Some(out) = s.path("out") {
        write_file(&out.join("summary.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["row", "mean", "min", "q1", "median", "q3", "max"])?;
            for r in &summary.rows {
                c.write_record([
                    r.label.to_string(),
                    r.mean.to_string(),
                    r.min.to_string(),
                    r.first_quartile.to_string(),
                    r.median.to_string(),
                    r.third_quartile.to_string(),
                    r.max.to_string(),
                ])?;
            }
            c.flush()?;
            Ok(())
        })?;
    }
    Ok(text)
}

pub fn features(s: &Settings) -> Result<String> {
    let dataset = load_dataset(s)?;
    let cfg = s.feature_config()?;
    let m = factors::build_features(&dataset, &cfg)?;
    let out = s.require_path("out")?;
    write_file(&out, |w| m.write_csv(w))?;
    if let Some(p) = s.path("prepared") {
        let prepared = prep::prepare(&m, &s.prep_config()?)?;
        write_file(&p, |w| prepared.write_csv(w))?;
    }
    Ok(format!(
        "{} rows, {} firms, burn-in {} days\n",
        m.n_rows(),
        m.firms.len(),
        cfg.burn_in_days()
    ))
}

pub fn fit(s: &Settings) -> Result<String> {
    let raw = load_features(s)?;
    let m = prep::prepare(&raw, &s.prep_config()?)?;
    let fits = models::fit_models(&s.models()?, &m, &s.model_options()?)?;
    let reports: Vec<RegressionReport> = fits.iter().map(|f| f.report.clone()).collect();
    let text = models::render_text(&reports);
    if let Some(p) = s.path("residuals_out") {
        let last = fits.last().expect("at least one model");
        write_file(&p, |w| residuals_csv(&m, last, w))?;
    }
    match s.path("out") {
        Some(out) => {
            write_file(&out, |w| models::write_reports_csv(&reports, w))?;
            write_text(&out.with_extension("txt"), &text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

/// Parse `vmin:vmax:steps,tmin:tmax:steps`.
pub fn parse_grid(spec: &str) -> Result<(AxisRange, AxisRange)> {
    let (v, t) = spec
        .split_once(',')
        .ok_or_else(|| Error::InvalidConfig(format!("expected vmin:vmax:steps,tmin:tmax:steps, got {spec:?}")))?;
    Ok((v.parse()?, t.parse()?))
}

fn json_list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(f64::to_string).collect();
    format!("[{}]", parts.join(", "))
}

/// Geometry, optional level-set roots and optional grids for one reduced
/// surface, in display units (×1000). Returns the JSON record.
fn analyze(surface: &CubicSurface, model: ModelId, s: &Settings, out: Option<&Path>) -> Result<String> {
    let scaled = surface.scaled();
    let valuation: f64 = s.get_or("valuation", 0.0)?;
    let geometry = surface::trend_geometry(&scaled, valuation)?;
    let coefficients: Vec<String> = Term::CUBIC
        .iter()
        .zip(&scaled.coefficients)
        .map(|(t, c)| format!("\"{}\": {}", t.key(), c))
        .collect();
    let mut json = format!(
        "{{\"model\": \"{}\", \"alpha\": {}, \"scale\": {}, \"coefficients\": {{{}}}, \"geometry\": {}",
        model.code(),
        surface.alpha,
        models::DISPLAY_SCALE,
        coefficients.join(", "),
        geometry.to_json()
    );
    if let Some(level) = s.get::<f64>("level")? {
        let roots = surface::level_set_roots(&scaled, valuation, level);
        write!(json, ", \"level\": {level}, \"roots\": {}", json_list(&roots)).unwrap();
    }
    json.push_str("}\n");
    if let (Some(spec), Some(dir)) = (s.str("grid"), out) {
        let (v, t) = parse_grid(spec)?;
        let grid = surface::grid_emit(&scaled, v, t)?;
        write_file(&dir.join("grid.csv"), |w| surface::write_grid_csv(&grid.surface, w))?;
        write_file(&dir.join("grid_valuation.csv"), |w| {
            surface::write_grid_csv(&grid.valuation_section, w)
        })?;
        write_file(&dir.join("grid_trend.csv"), |w| {
            surface::write_grid_csv(&grid.trend_section, w)
        })?;
    }
    Ok(json)
}

/// The report used for the surface: an explicit single model, else the
/// first full cubic model present.
fn surface_report<'a>(reports: &'a [RegressionReport], s: &Settings) -> Result<&'a RegressionReport> {
    let wanted = match s.str("model") {
        Some(_) => s.models()?,
        None => vec![ModelId::M3, ModelId::M4],
    };
    wanted
        .iter()
        .find_map(|m| {
            reports
                .iter()
                .find(|r| r.model == *m && matches!(m, ModelId::M3 | ModelId::M4))
        })
        .ok_or_else(|| Error::InvalidConfig("no model 3 or 4 report available for the surface".into()))
}

pub fn analyze_surface(s: &Settings) -> Result<String> {
    let reports = models::read_reports_csv(open(&s.require_path("from_report")?)?)?;
    let report = surface_report(&reports, s)?;
    let alpha = s.get_or("alpha", 0.10)?;
    let reduced = surface::reduce_surface(report, alpha)?;
    let out = s.path("out");
    let json = analyze(&reduced, report.model, s, out.as_deref())?;
    match out {
        Some(dir) => {
            write_text(&dir.join("surface.json"), &json)?;
            Ok(String::new())
        }
        None => Ok(json),
    }
}

fn quantile_options(s: &Settings) -> Result<QuantileOptions> {
    let probes = match s.str("probes") {
        None => None,
        Some(list) => Some(
            list.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidConfig(format!("bad probe level {p:?}")))
                })
                .collect::<Result<Vec<f64>>>()?,
        ),
    };
    let sd = s.get::<f64>("sd")?;
    Ok(QuantileOptions {
        probes,
        // A fixed reference SD comes with a zero reference mean.
        mean: sd.map(|_| 0.0),
        sd,
    })
}

fn diagnostics_text(cmp: &QuantileComparison, correlation: f64) -> String {
    format!(
        "n = {}, mean = {}, sd = {}, normality correlation = {}\n",
        cmp.n, cmp.mean, cmp.sd, correlation
    )
}

pub fn diagnostics(s: &Settings) -> Result<String> {
    let residuals = diagnostics::read_residuals_csv(open(&s.require_path("residuals")?)?)?;
    let cmp = diagnostics::quantile_compare(&residuals, &quantile_options(s)?)?;
    let r = diagnostics::normality_correlation(&residuals)?;
    match s.path("out") {
        Some(out) => {
            write_file(&out, |w| diagnostics::write_comparison_csv(&cmp, w))?;
            Ok(diagnostics_text(&cmp, r))
        }
        None => {
            let mut buf = Vec::new();
            diagnostics::write_comparison_csv(&cmp, &mut buf)?;
            Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
        }
    }
}

pub fn simulate(s: &Settings) -> Result<String> {
    let cfg = s.synth_config()?;
    let out = s.require_path("out")?;
    match s.str("kind").unwrap_or("raw") {
        "raw" => {
            let dataset = synth::generate_raw_panel(&cfg)?;
            let mut firms = Vec::new();
            let mut macros = Vec::new();
            dataset.write_csv(&mut firms, &mut macros)?;
            write_file(&out.join("firms.csv"), |w| Ok(w.write_all(&firms)?))?;
            write_file(&out.join("macro.csv"), |w| Ok(w.write_all(&macros)?))?;
            Ok(format!("{} firms × {} days\n", cfg.n_firms, cfg.n_days))
        }
        "features" => {
            let panel = synth::generate_feature_panel(&cfg)?;
            write_file(&out.join("features.csv"), |w| panel.features.write_csv(w))?;
            write_file(&out.join("truth.csv"), |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["kind", "key", "value"])?;
                for (t, b) in &panel.truth.beta {
                    c.write_record(["beta", t.key(), &b.to_string()])?;
                }
                for (name, mu) in panel.features.firms.iter().zip(&panel.truth.firm_effects) {
                    c.write_record(["firm", name.as_str(), &mu.to_string()])?;
                }
                for (date, g) in panel.features.dates.iter().zip(&panel.truth.time_effects) {
                    c.write_record(["day", date.as_str(), &g.to_string()])?;
                }
                c.flush()?;
                Ok(())
            })?;
            Ok(format!("{} firms × {} days of features\n", cfg.n_firms, cfg.n_days))
        }
        other => Err(Error::InvalidConfig(format!(
            "kind must be raw or features, got {other:?}"
        ))),
    }
}

/// Features, all requested models, the reduced surface of the cubic model
/// and residual diagnostics of the last model.
pub fn report(s: &Settings) -> Result<String> {
    let out: PathBuf = s.require_path("out")?;
    let raw = load_features(s)?;
    let m = prep::prepare(&raw, &s.prep_config()?)?;
    let fits = models::fit_models(&s.models()?, &m, &s.model_options()?)?;
    let reports: Vec<RegressionReport> = fits.iter().map(|f| f.report.clone()).collect();

    write_file(&out.join("features.csv"), |w| raw.write_csv(w))?;
    write_file(&out.join("table2.csv"), |w| models::write_reports_csv(&reports, w))?;
    let table = models::render_text(&reports);
    write_text(&out.join("table2.txt"), &table)?;

    let last = fits.last().expect("at least one model");
    write_file(&out.join("residuals.csv"), |w| residuals_csv(&m, last, w))?;
    let cmp = diagnostics::quantile_compare(&last.fit.residuals, &quantile_options(s)?)?;
    let r = diagnostics::normality_correlation(&last.fit.residuals)?;
    write_file(&out.join("diagnostics.csv"), |w| {
        diagnostics::write_comparison_csv(&cmp, w)
    })?;
    let diag = format!("model {}: {}", last.report.model.code(), diagnostics_text(&cmp, r));
    write_text(&out.join("diagnostics.txt"), &diag)?;

    // A flat or insignificant surface is a finding, not a failure.
    let alpha = s.get_or("alpha", 0.10)?;
    let json = match surface_report(&reports, s)
        .and_then(|rep| surface::reduce_surface(rep, alpha).map(|sf| (rep.model, sf)))
        .and_then(|(model, sf)| analyze(&sf, model, s, Some(&out)))
    {
        Ok(json) => json,
        Err(e) => {
            log::warn!("surface skipped: {e}");
            format!(
                "{{\"error\": \"{}\", \"message\": \"{}\"}}\n",
                e.class(),
                e.to_string().replace('"', "'")
            )
        }
    };
    write_text(&out.join("surface.json"), &json)?;
    Ok(format!("{table}\n{diag}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec() {
        let (v, t) = parse_grid("-2:2:5,-3:3:7").unwrap();
        assert_eq!(v, AxisRange::new(-2.0, 2.0, 5));
        assert_eq!(t, AxisRange::new(-3.0, 3.0, 7));
        assert_eq!(parse_grid("-2:2:5").unwrap_err().class(), "InvalidConfig");
    }

    #[test]
    fn fixed_sd_uses_zero_mean() {
        let mut s = Settings::default();
        s.set("sd", "0.01492");
        let q = quantile_options(&s).unwrap();
        assert_eq!((q.mean, q.sd), (Some(0.0), Some(0.01492)));
        assert_eq!(
            quantile_options(&Settings::default()).unwrap(),
            QuantileOptions::default()
        );
    }
}
