//! `paneldyn`: ingestion, factor construction, fixed-effects fits, response
//! surfaces, residual diagnostics and synthetic panels from the shell.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use paneldyn::{Error, Result};

use config::Settings;

#[derive(Parser, Debug)]
#[command(name = "paneldyn", version, about = "Daily stock panel factor models")]
struct Cli {
    /// Flat key=value config file; flags given here take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (falls back to PANELDYN_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct PanelInput {
    /// Firm-level CSV (date,ticker,adj_close,turnover,eps_fy1[,eps_fy2][,mktcap][,shares]).
    #[arg(long)]
    firms: Option<PathBuf>,
    /// Macro CSV (date,spx,ust10y,gdp_fy1[,gdp_fy2]).
    #[arg(long = "macro")]
    macro_file: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct FeatureInput {
    #[command(flatten)]
    panel: PanelInput,
    /// Previously built feature CSV; replaces --firms/--macro.
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct FitFlags {
    /// Comma-separated models from 1V, 1T, 2, 2X, 3, 4.
    #[arg(long)]
    model: Option<String>,
    /// Skip winsorization.
    #[arg(long)]
    no_winsorize: bool,
    /// Covariance estimator: cluster or dm3.
    #[arg(long)]
    cov: Option<String>,
}

#[derive(Args, Debug, Default)]
struct SurfaceFlags {
    /// Significance level for keeping cubic terms.
    #[arg(long)]
    alpha: Option<f64>,
    /// vmin:vmax:steps,tmin:tmax:steps
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Target return for level-set roots, ×1000.
    #[arg(long, allow_hyphen_values = true)]
    level: Option<f64>,
    /// Valuation at which the trend cross-section is taken.
    #[arg(long, allow_hyphen_values = true)]
    valuation: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate raw inputs and summarize them.
    Ingest {
        #[command(flatten)]
        input: PanelInput,
        /// Directory for summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the factor matrix.
    Features {
        #[command(flatten)]
        input: PanelInput,
        /// Feature CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the winsorized, standardized matrix here.
        #[arg(long)]
        prepared: Option<PathBuf>,
        #[arg(long)]
        no_winsorize: bool,
    },
    /// Fit fixed-effects models.
    Fit {
        #[command(flatten)]
        input: FeatureInput,
        #[command(flatten)]
        flags: FitFlags,
        /// Report CSV; the aligned table goes next to it as .txt.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Residuals of the last model.
        #[arg(long)]
        residuals_out: Option<PathBuf>,
    },
    /// Reduce a cubic model to its significant terms and analyze it.
    AnalyzeSurface {
        /// Report CSV written by `fit`.
        #[arg(long)]
        from_report: Option<PathBuf>,
        /// Model to use when the report holds several.
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        flags: SurfaceFlags,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare residual quantiles with a Gaussian.
    Diagnostics {
        /// CSV with a `residual` column (else the last column is used).
        #[arg(long)]
        residuals: Option<PathBuf>,
        /// Fixed reference SD (mean 0).
        #[arg(long)]
        sd: Option<f64>,
        /// Comma-separated probe levels.
        #[arg(long)]
        probes: Option<String>,
        /// Comparison CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic panel.
    Simulate {
        /// `raw` for firm and macro CSVs, `features` for a feature panel.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        n_firms: Option<usize>,
        #[arg(long)]
        n_days: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Features, all models, surface and diagnostics in one run.
    Report {
        #[command(flatten)]
        input: FeatureInput,
        #[command(flatten)]
        flags: FitFlags,
        #[command(flatten)]
        surface: SurfaceFlags,
        /// Fixed reference SD for the diagnostics.
        #[arg(long)]
        sd: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

impl PanelInput {
    fn apply(&self, s: &mut Settings) {
        s.set_opt("firms", &path_str(&self.firms));
        s.set_opt("macro", &path_str(&self.macro_file));
    }
}

impl FeatureInput {
    fn apply(&self, s: &mut Settings) {
        self.panel.apply(s);
        s.set_opt("features", &path_str(&self.features));
    }
}

impl FitFlags {
    fn apply(&self, s: &mut Settings) {
        s.set_opt("model", &self.model);
        s.set_flag("no_winsorize", self.no_winsorize);
        s.set_opt("cov", &self.cov);
    }
}

impl SurfaceFlags {
    fn apply(&self, s: &mut Settings) {
        s.set_opt("alpha", &self.alpha);
        s.set_opt("grid", &self.grid);
        s.set_opt("level", &self.level);
        s.set_opt("valuation", &self.valuation);
    }
}

fn settings(cli: &Cli) -> Result<Settings> {
    let mut s = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    s.set_opt("threads", &cli.threads);
    match &cli.command {
        Command::Ingest { input, out } => {
            input.apply(&mut s);
            s.set_opt("out", &path_str(out));
        }
        Command::Features {
            input,
            out,
            prepared,
            no_winsorize,
        } => {
            input.apply(&mut s);
            s.set_opt("out", &path_str(out));
            s.set_opt("prepared", &path_str(prepared));
            s.set_flag("no_winsorize", *no_winsorize);
        }
        Command::Fit {
            input,
            flags,
            out,
            residuals_out,
        } => {
            input.apply(&mut s);
            flags.apply(&mut s);
            s.set_opt("out", &path_str(out));
            s.set_opt("residuals_out", &path_str(residuals_out));
        }
        Command::AnalyzeSurface {
            from_report,
            model,
            flags,
            out,
        } => {
            s.set_opt("from_report", &path_str(from_report));
            s.set_opt("model", model);
            flags.apply(&mut s);
            s.set_opt("out", &path_str(out));
        }
        Command::Diagnostics {
            residuals,
            sd,
            probes,
            out,
        } => {
            s.set_opt("residuals", &path_str(residuals));
            s.set_opt("sd", sd);
            s.set_opt("probes", probes);
            s.set_opt("out", &path_str(out));
        }
        Command::Simulate {
            kind,
            n_firms,
            n_days,
            seed,
            out,
        } => {
            s.set_opt("kind", kind);
            s.set_opt("n_firms", n_firms);
            s.set_opt("n_days", n_days);
            s.set_opt("seed", seed);
            s.set_opt("out", &path_str(out));
        }
        Command::Report {
            input,
            flags,
            surface,
            sd,
            out,
        } => {
            input.apply(&mut s);
            flags.apply(&mut s);
            surface.apply(&mut s);
            s.set_opt("sd", sd);
            s.set_opt("out", &path_str(out));
        }
    }
    Ok(s)
}

fn thread_count(s: &Settings) -> Result<Option<usize>> {
    let n = match s.get::<usize>("threads")? {
        Some(n) => Some(n),
        None => match std::env::var("PANELDYN_THREADS") {
            Ok(v) if !v.trim().is_empty() => Some(v.trim().parse().map_err(|_| {
                Error::InvalidConfig(format!("PANELDYN_THREADS must be a positive integer, got {v:?}"))
            })?),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(Error::InvalidConfig("thread count must be positive".into()));
    }
    Ok(n)
}

fn run(cli: &Cli) -> Result<String> {
    let s = settings(cli)?;
    if let Some(n) = thread_count(&s)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Ingest { .. } => commands::ingest(&s),
        Command::Features { .. } => commands::features(&s),
        Command::Fit { .. } => commands::fit(&s),
        Command::AnalyzeSurface { .. } => commands::analyze_surface(&s),
        Command::Diagnostics { .. } => commands::diagnostics(&s),
        Command::Simulate { .. } => commands::simulate(&s),
        Command::Report { .. } => commands::report(&s),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}: {msg}", e.class());
            ExitCode::FAILURE
        }
    }
}
