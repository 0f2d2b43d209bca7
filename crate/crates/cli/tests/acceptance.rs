//! Acceptance suite. Prints one PASS/FAIL line per criterion. The run is a
//! report: it exits non-zero on a failed criterion only when
//! `PANELDYN_ACCEPTANCE_STRICT=1` is set, so the rest of the workspace tests
//! still run.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use paneldyn::diagnostics::{self, QuantileOptions};
use paneldyn::factors::{self, Factor, FeatureConfig};
use paneldyn::fixed_effects::{self, FeOptions, HcDivisor};
use paneldyn::models::{self, ModelOptions};
use paneldyn::prep::{self, ModelId, PrepConfig, Term};
use paneldyn::stats;
use paneldyn::surface::{self, CubicSurface};
use paneldyn::synth::{self, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Model 3 column of the published regression table, coefficients and
/// standard errors ×1000. The t value column is left for the reader to
/// derive from coefficient and standard error.
const PUBLISHED_MODEL3: [(Term, f64, f64); 9] = [
    (Term::Valuation, 0.615, 0.166),
    (Term::Valuation2, 0.112, 0.065),
    (Term::Valuation3, -0.01, 0.028),
    (Term::Trend, 0.721, 0.146),
    (Term::Trend2, 0.108, 0.100),
    (Term::Trend3, -0.090, 0.035),
    (Term::TrendValuation, 0.103, 0.157),
    (Term::Trend2Valuation, 0.043, 0.061),
    (Term::TrendValuation2, 0.151, 0.033),
];

/// The published surface, reduced to its significant terms through the
/// report reader and the 10% filter, in display units.
fn published_surface() -> CubicSurface {
    let mut csv = String::from("model,row,value,std_err\n");
    for (term, b, se) in PUBLISHED_MODEL3 {
        csv.push_str(&format!("3,{},{},{}\n", term.key(), b * 1e-3, se * 1e-3));
    }
    let reports = models::read_reports_csv(csv.as_bytes()).expect("report parses");
    surface::reduce_surface(&reports[0], 0.10)
        .expect("significant terms")
        .scaled()
}

fn c1_normalization() -> Outcome {
    let s = factors::ew_normalization(10);
    outcome((s - 0.58195).abs() < 1e-5, format!("sum = {s:.7}"))
}

fn c2_geometry() -> Outcome {
    let s = published_surface();
    let kept: Vec<&str> = Term::CUBIC
        .iter()
        .zip(&s.zeroed)
        .filter(|(_, z)| !**z)
        .map(|(t, _)| t.key())
        .collect();
    let g = match surface::trend_geometry(&s, 0.0) {
        Ok(g) => g,
        Err(e) => return outcome(false, e.to_string()),
    };
    let ok = (g.local_min_t + 1.634).abs() <= 1e-3
        && (g.local_max_t - 1.634).abs() <= 1e-3
        && (g.local_min_r + 0.785).abs() <= 1e-3
        && (g.local_max_r - 0.785).abs() <= 1e-3;
    outcome(
        ok,
        format!(
            "kept {kept:?}; extrema at {:.4}/{:.4} with values {:.4}/{:.4}",
            g.local_min_t, g.local_max_t, g.local_min_r, g.local_max_r
        ),
    )
}

fn c3_roots() -> Outcome {
    let roots = surface::level_set_roots(&published_surface(), 0.0, 0.25);
    let expected = [-2.99, 0.352, 2.64];
    let ok = roots.len() == 3 && roots.iter().zip(expected).all(|(r, e)| (r - e).abs() <= 0.01);
    outcome(ok, format!("roots {roots:.4?}"))
}

fn c4_gaussian_targets() -> Outcome {
    let sd = 0.01492;
    let sample: Vec<f64> = diagnostics::normal_scores(20_000).into_iter().map(|z| z * sd).collect();
    let opts = QuantileOptions {
        probes: None,
        mean: Some(0.0),
        sd: Some(sd),
    };
    let cmp = match diagnostics::quantile_compare(&sample, &opts) {
        Ok(c) => c,
        Err(e) => return outcome(false, e.to_string()),
    };
    let targets = [
        (0.0001, -0.0555),
        (0.001, -0.0461),
        (0.01, -0.0347),
        (0.10, -0.0191),
        (0.90, 0.0191),
        (0.99, 0.0347),
        (0.999, 0.0461),
        (0.9999, 0.0555),
    ];
    let mut worst: f64 = 0.0;
    for (level, want) in targets {
        match cmp.rows.iter().find(|r| r.level == level) {
            Some(r) => worst = worst.max((r.gaussian - want).abs()),
            None => return outcome(false, format!("probe {level} missing")),
        }
    }
    outcome(worst <= 5e-4, format!("largest gap {worst:.2e}"))
}

fn c5_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        let n_firms = rng.random_range(2..=6);
        let n_days = rng.random_range(2..=8);
        let k = rng.random_range(1..=3);
        let n = n_firms * n_days;
        if n <= k + n_firms + n_days {
            continue;
        }
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let oracle = match synth::oracle_lsdv_columns(&cols, &y, n_firms, n_days) {
            Ok(o) => o,
            Err(e) => return outcome(false, format!("oracle failed on {n_firms}x{n_days}: {e}")),
        };
        let fit = match fixed_effects::fit_two_way(&cols, &y, n_firms, n_days, &FeOptions::default()) {
            Ok(f) => f,
            Err(e) => return outcome(false, format!("within fit failed on {n_firms}x{n_days}: {e}")),
        };
        for (a, b) in fit.slopes.iter().zip(&oracle.slopes) {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-300));
        }
        checked += 1;
    }
    outcome(
        worst <= 1e-8,
        format!("{checked} panels, largest relative gap {worst:.2e}"),
    )
}

fn c6_dm3_hand_value() -> Outcome {
    let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
    let y = DVector::from_column_slice(&[1.0, 3.0]);
    let v = fixed_effects::ols_fit(&x, &y)
        .and_then(|ls| fixed_effects::robust_covariance_dm3(&x, ls.residuals.as_slice(), HcDivisor::OnePlus));
    match v {
        Ok(v) => outcome(
            (v[(0, 0)] - 2.0 / 9.0).abs() <= 1e-10,
            format!("variance {:.12}", v[(0, 0)]),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

/// Idiosyncratic SD giving the synthetic panel the published table's
/// precision: the daily residual SD 0.01492 scaled by
/// √(10,000 / 257,635) observations.
const RECOVERY_NOISE_SD: f64 = 0.003;

fn c7_synthetic_recovery() -> Outcome {
    let truth = synth::published_cubic_beta();
    let mut covered = [0usize; 9];
    let mut extrema_ok = 0;
    let mut worst_extremum: f64 = 0.0;
    for seed in 0..100u64 {
        let cfg = SynthConfig {
            n_firms: 20,
            n_days: 500,
            seed,
            beta: truth.clone(),
            noise_sd: RECOVERY_NOISE_SD,
            ..Default::default()
        };
        let panel = match synth::generate_feature_panel(&cfg) {
            Ok(p) => p,
            Err(e) => return outcome(false, e.to_string()),
        };
        let fit = match models::fit_model(ModelId::M3, &panel.features, &ModelOptions::default()) {
            Ok(f) => f,
            Err(e) => return outcome(false, e.to_string()),
        };
        for (j, &term) in Term::CUBIC.iter().enumerate() {
            let (lo, hi) = fit.fit.confidence_interval(j, 0.95);
            let b = cfg.beta_of(term);
            if lo <= b && b <= hi {
                covered[j] += 1;
            }
        }
        let geometry = surface::reduce_surface(&fit.report, 0.10).and_then(|s| surface::trend_geometry(&s, 0.0));
        if let Ok(g) = geometry {
            let gap = (g.local_min_t + 1.634).abs().max((g.local_max_t - 1.634).abs());
            worst_extremum = worst_extremum.max(gap);
            if gap <= 0.25 {
                extrema_ok += 1;
            }
        } else {
            worst_extremum = f64::INFINITY;
        }
    }
    let min_cover = covered.iter().copied().min().unwrap_or(0);
    outcome(
        min_cover >= 90 && extrema_ok >= 90,
        format!(
            "CI coverage per term {covered:?}; extrema within 0.25 in {extrema_ok}/100 runs (largest gap {worst_extremum:.3})"
        ),
    )
}

fn c8_pipeline_shape() -> Outcome {
    let cfg = SynthConfig {
        n_firms: 85,
        n_days: 3289,
        seed: 8,
        ..Default::default()
    };
    let fcfg = FeatureConfig::default();
    let panel = match synth::generate_raw_panel(&cfg) {
        Ok(p) => p,
        Err(e) => return outcome(false, e.to_string()),
    };
    let full = match factors::build_features(&panel, &fcfg) {
        Ok(m) => m,
        Err(e) => return outcome(false, e.to_string()),
    };
    let rows = full.rows_per_firm();
    let shape_ok = rows.iter().all(|&r| r == 3031);

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut look_ahead_ok = 0;
    for _ in 0..20 {
        let row = rng.random_range(0..full.n_rows());
        let (f, t) = (full.firm[row], full.day[row]);
        let cut = match factors::build_features(&panel.truncated(t + 2), &fcfg) {
            Ok(m) => m,
            Err(e) => return outcome(false, e.to_string()),
        };
        let same = (0..cut.n_rows())
            .find(|&i| cut.firm[i] == f && cut.day[i] == t)
            .is_some_and(|i| {
                (0..7).all(|c| cut.columns[c][i].to_bits() == full.columns[c][row].to_bits())
                    && cut.target[i].to_bits() == full.target[row].to_bits()
            });
        if same {
            look_ahead_ok += 1;
        }
    }
    outcome(
        shape_ok && look_ahead_ok == 20,
        format!(
            "{} feature rows per firm (expected 3031, burn-in {} days); no-look-ahead held on {look_ahead_ok}/20 probes",
            rows.first().copied().unwrap_or(0),
            fcfg.burn_in_days()
        ),
    )
}

fn c9_preprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut idempotent, mut monotone) = (0, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..400);
        let scale: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random_range(-1.0..1.0);
                // Occasional heavy tail.
                if rng.random::<f64>() < 0.05 {
                    scale * u / (1e-3 + rng.random::<f64>())
                } else {
                    scale * u
                }
            })
            .collect();
        let w = prep::winsorize(&x, 0.01, 0.99);
        if prep::winsorize(&w, 0.01, 0.99) == w {
            idempotent += 1;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        if order.windows(2).all(|p| w[p[0]] <= w[p[1]]) {
            monotone += 1;
        }
    }

    let cfg = SynthConfig {
        n_firms: 12,
        n_days: 700,
        seed: 9,
        ..Default::default()
    };
    let prepared = synth::generate_raw_panel(&cfg)
        .and_then(|p| factors::build_features(&p, &FeatureConfig::default()))
        .and_then(|m| prep::prepare(&m, &PrepConfig::default()));
    let prepared = match prepared {
        Ok(m) => m,
        Err(e) => return outcome(false, e.to_string()),
    };
    let (mut worst_mean, mut worst_sd): (f64, f64) = (0.0, 0.0);
    for r in prepared.firm_ranges() {
        for f in Factor::ALL.into_iter().filter(|f| *f != Factor::Resistance) {
            let v = &prepared.column(f)[r.clone()];
            worst_mean = worst_mean.max(stats::mean(v).abs());
            worst_sd = worst_sd.max((stats::sample_sd(v) - 1.0).abs());
        }
    }
    outcome(
        idempotent == 1000 && monotone == 1000 && worst_mean < 1e-10 && worst_sd < 1e-10,
        format!(
            "winsorize idempotent {idempotent}/1000, monotone {monotone}/1000; standardized |mean| ≤ {worst_mean:.1e}, |sd − 1| ≤ {worst_sd:.1e}"
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_paneldyn"))
        .args(args)
        .env_remove("PANELDYN_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).trim().to_string())
    }
}

/// Every file under `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output directory")
        .map(|e| {
            let p = e.expect("entry").path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).expect("readable"),
            )
        })
        .collect();
    files.sort();
    files
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let sim = root.join("sim");
    let conf = root.join("report.conf");
    let sim_s = sim.display().to_string();
    if let Err(e) = run_cli(&[
        "simulate",
        "--n-firms",
        "8",
        "--n-days",
        "600",
        "--seed",
        "10",
        "--out",
        &sim_s,
    ]) {
        return outcome(false, e);
    }
    let text = format!(
        "firms = {}\nmacro = {}\nlevel = 0.25\ngrid = -2:2:5,-3:3:7\nalpha = 0.10\n",
        sim.join("firms.csv").display(),
        sim.join("macro.csv").display()
    );
    std::fs::write(&conf, text).expect("config written");
    let conf_s = conf.display().to_string();
    let mut runs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "8"), ("c", "1"), ("d", "8")] {
        let out = root.join(name);
        let out_s = out.display().to_string();
        if let Err(e) = run_cli(&["report", "--config", &conf_s, "--threads", threads, "--out", &out_s]) {
            return outcome(false, e);
        }
        runs.push(snapshot(&out));
    }
    let identical = runs.windows(2).all(|w| w[0] == w[1]);
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    outcome(identical && runs[0].len() >= 7, format!("4 runs, files {names:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("normalization constant", c1_normalization),
        ("surface geometry from published coefficients", c2_geometry),
        ("level-set roots", c3_roots),
        ("Gaussian reference quantiles", c4_gaussian_targets),
        ("within estimator equals dummy-variable oracle", c5_oracle_equivalence),
        ("hand-computed DM3 covariance", c6_dm3_hand_value),
        ("synthetic recovery", c7_synthetic_recovery),
        ("pipeline shape and no look-ahead", c8_pipeline_shape),
        ("preprocessing properties", c9_preprocessing),
        ("report determinism across thread counts", c10_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {:>2} {verdict}: {name} ({}; {:.1}s)",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        if std::env::var("PANELDYN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
