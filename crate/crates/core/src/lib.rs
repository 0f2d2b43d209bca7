//! Nonlinear price-dynamics toolkit for daily stock panels.
//!
//! The pipeline runs in stages, one module each:
//!
//! - [`panel`]: balanced firm × day panel ingestion, returns, descriptive statistics
//! - [`factors`]: valuation, trend, volatility, long-term trend, resistance and volume factors
//! - [`prep`]: winsorization, per-firm standardization, polynomial expansion
//! - [`fixed_effects`]: two-way within estimator with DM3 and firm-clustered covariances
//! - [`models`]: the five benchmark specifications and tabular reports
//! - [`surface`]: reduced cubic response surface, extrema and level-set roots
//! - [`diagnostics`]: residual quantile comparison and probability-plot correlation
//! - [`synth`]: synthetic panels with known ground truth, plus a dummy-variable oracle

pub mod diagnostics;
pub mod error;
pub mod factors;
pub mod fixed_effects;
pub mod linalg;
pub mod models;
pub mod panel;
pub mod prep;
pub mod stats;
pub mod surface;
pub mod synth;

pub use error::{Error, Result};
