//! Two-way (firm and day) fixed-effects least squares on a balanced panel.
//!
//! Slopes come from the within estimator: every column is demeaned by firm
//! and by day with the grand mean added back, which annihilates additive
//! firm and day effects, and the transformed system is solved by QR.
//!
//! Two sandwich covariances are computed for every fit:
//!
//! ```text
//! V = (XᵀX)⁻¹ Xᵀ Ω X (XᵀX)⁻¹
//! DM3:      Ω = diag(ε̂ₜ² / (1 ± hₜ)²),   hₜ = Xₜ (XᵀX)⁻¹ Xₜᵀ
//! cluster:  Xᵀ Ω X = c · Σ_g (X_gᵀ ε̂_g)(X_gᵀ ε̂_g)ᵀ,   c = G/(G−1) · (N−1)/(N−K)
//! ```
//!
//! Rows are laid out firm-major: row `f · n_days + d`.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::linalg::{self, LeastSquares, OnDeficient};
use crate::stats;
use crate::{Error, Result};

/// Clusters at or above this count use normal critical values.
pub const NORMAL_APPROX_MIN_CLUSTERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    /// Firm-clustered sandwich.
    Cluster,
    /// Diagonal leverage-adjusted sandwich.
    Dm3,
}

/// Leverage divisor used by the DM3 estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcDivisor {
    /// `(1 + h)²`
    OnePlus,
    /// `(1 − h)²`, the textbook HC3 form.
    OneMinus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeOptions {
    pub covariance: CovarianceKind,
    pub hc_divisor: HcDivisor,
    /// Apply the `G/(G−1) · (N−1)/(N−K)` factor to the clustered covariance.
    pub cluster_small_sample: bool,
}

impl Default for FeOptions {
    fn default() -> Self {
        Self {
            covariance: CovarianceKind::Cluster,
            hc_divisor: HcDivisor::OnePlus,
            cluster_small_sample: true,
        }
    }
}

fn check_balanced(len: usize, n_firms: usize, n_days: usize) -> Result<()> {
    if n_firms == 0 || n_days == 0 || len != n_firms * n_days {
        return Err(Error::UnbalancedPanel {
            missing: vec![(
                format!("{n_firms} firms × {n_days} days"),
                format!("{len} observations supplied"),
            )],
        });
    }
    Ok(())
}

struct PanelMeans {
    firm: Vec<f64>,
    day: Vec<f64>,
    grand: f64,
}

fn panel_means(values: &[f64], n_firms: usize, n_days: usize) -> PanelMeans {
    let mut firm = vec![0.0; n_firms];
    let mut day = vec![0.0; n_days];
    for f in 0..n_firms {
        for d in 0..n_days {
            let v = values[f * n_days + d];
            firm[f] += v;
            day[d] += v;
        }
    }
    let grand = firm.iter().sum::<f64>() / (n_firms * n_days) as f64;
    firm.iter_mut().for_each(|v| *v /= n_days as f64);
    day.iter_mut().for_each(|v| *v /= n_firms as f64);
    PanelMeans { firm, day, grand }
}

/// `x̃_{i,t} = x_{i,t} − x̄_{i·} − x̄_{·t} + x̄_{··}`.
pub fn within_transform(values: &[f64], n_firms: usize, n_days: usize) -> Result<Vec<f64>> {
    check_balanced(values.len(), n_firms, n_days)?;
    let m = panel_means(values, n_firms, n_days);
    let mut out = Vec::with_capacity(values.len());
    for f in 0..n_firms {
        for d in 0..n_days {
            out.push(values[f * n_days + d] - m.firm[f] - m.day[d] + m.grand);
        }
    }
    Ok(out)
}

/// Least squares by Householder QR; fails on a dependent column.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquares> {
    linalg::least_squares(x, y, OnDeficient::Fail)
}

fn sandwich(bread: &DMatrix<f64>, meat: &DMatrix<f64>) -> DMatrix<f64> {
    let v = bread * meat * bread;
    // Symmetrize away round-off.
    (&v + v.transpose()) * 0.5
}

fn bread_of(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xtx = x.transpose() * x;
    let k = xtx.nrows();
    xtx.cholesky().map(|c| c.inverse()).ok_or(Error::RankDeficient {
        column: k.saturating_sub(1),
    })
}

/// Leverage `h_t = X_t (XᵀX)⁻¹ X_tᵀ` of each row.
pub fn leverages(x: &DMatrix<f64>, bread: &DMatrix<f64>) -> Vec<f64> {
    let xb = x * bread;
    (0..x.nrows())
        .map(|i| xb.row(i).iter().zip(x.row(i).iter()).map(|(a, b)| a * b).sum())
        .collect()
}

fn dm3_with_bread(x: &DMatrix<f64>, residuals: &[f64], bread: &DMatrix<f64>, divisor: HcDivisor) -> DMatrix<f64> {
    let h = leverages(x, bread);
    let k = x.ncols();
    let mut meat = DMatrix::zeros(k, k);
    for (i, (&e, &hi)) in residuals.iter().zip(&h).enumerate() {
        let denom = match divisor {
            HcDivisor::OnePlus => (1.0 + hi).powi(2),
            HcDivisor::OneMinus => (1.0 - hi).powi(2),
        };
        let w = e * e / denom;
        if w == 0.0 {
            continue;
        }
        let row = x.row(i);
        for a in 0..k {
            let ra = row[a] * w;
            for b in 0..k {
                meat[(a, b)] += ra * row[b];
            }
        }
    }
    sandwich(bread, &meat)
}

/// Heteroscedasticity-consistent covariance with `Ω_tt = ε̂_t² / (1 ± h_t)²`.
pub fn robust_covariance_dm3(x: &DMatrix<f64>, residuals: &[f64], divisor: HcDivisor) -> Result<DMatrix<f64>> {
    if residuals.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: residuals.len(),
        });
    }
    let bread = bread_of(x)?;
    Ok(dm3_with_bread(x, residuals, &bread, divisor))
}

fn cluster_with_bread(
    x: &DMatrix<f64>,
    residuals: &[f64],
    clusters: &[usize],
    bread: &DMatrix<f64>,
    small_sample: bool,
) -> Result<DMatrix<f64>> {
    let k = x.ncols();
    let n = x.nrows();
    let n_clusters = clusters.iter().copied().max().map_or(0, |m| m + 1);
    let mut scores = DMatrix::<f64>::zeros(n_clusters, k);
    for i in 0..n {
        let g = clusters[i];
        let e = residuals[i];
        for a in 0..k {
            scores[(g, a)] += x[(i, a)] * e;
        }
    }
    let mut used = vec![false; n_clusters];
    clusters.iter().for_each(|&g| used[g] = true);
    let g_count = used.iter().filter(|&&u| u).count();
    if g_count < 2 {
        return Err(Error::SingleCluster);
    }
    let meat = scores.transpose() * &scores;
    let mut v = sandwich(bread, &meat);
    if small_sample {
        let g = g_count as f64;
        let factor = g / (g - 1.0) * (n as f64 - 1.0) / (n as f64 - k as f64);
        v *= factor;
    }
    Ok(v)
}

/// Cluster-robust sandwich with score outer products summed within clusters.
/// `clusters[i]` is the cluster label of row `i`.
pub fn cluster_covariance(
    x: &DMatrix<f64>,
    residuals: &[f64],
    clusters: &[usize],
    small_sample: bool,
) -> Result<DMatrix<f64>> {
    if residuals.len() != x.nrows() || clusters.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: residuals.len().min(clusters.len()),
        });
    }
    let bread = bread_of(x)?;
    cluster_with_bread(x, residuals, clusters, &bread, small_sample)
}

/// `1 − (1 − R²)(n − 1)/(n − k)`.
pub fn adjusted_r2(r2: f64, n: usize, k: usize) -> f64 {
    if n <= k {
        return f64::NAN;
    }
    1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FTest {
    pub statistic: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p_value: f64,
}

/// Pooled OLS of `y` on an intercept and the slope regressors, without
/// effects: the restricted model of the no-fixed-effects test.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFit {
    pub n_obs: usize,
    pub n_slopes: usize,
    pub rss: f64,
    pub beta: Vec<f64>,
}

pub fn pooled_fit(columns: &[Vec<f64>], y: &[f64]) -> Result<PooledFit> {
    let n = y.len();
    let mut all = Vec::with_capacity(columns.len() + 1);
    all.push(vec![1.0; n]);
    all.extend(columns.iter().cloned());
    let x = linalg::matrix_from_columns(&all);
    let ls = ols_fit(&x, &DVector::from_column_slice(y))?;
    Ok(PooledFit {
        n_obs: n,
        n_slopes: columns.len(),
        rss: ls.rss(),
        beta: ls.beta.iter().copied().collect(),
    })
}

/// Estimated two-way fixed-effects model.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFit {
    pub slopes: Vec<f64>,
    /// Within residuals `ε̂_{i,t}`, firm-major.
    pub residuals: Vec<f64>,
    /// `μ̂_i`, summing to zero.
    pub firm_effects: Vec<f64>,
    /// `γ̂_t`, summing to zero.
    pub time_effects: Vec<f64>,
    /// `ȳ_{··} − x̄_{··}β̂`.
    pub intercept: f64,
    pub covariance_kind: CovarianceKind,
    /// The covariance selected by `covariance_kind`.
    pub covariance: DMatrix<f64>,
    pub cov_cluster: DMatrix<f64>,
    pub cov_dm3: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Degrees of freedom of the reference t distribution; `None` = normal.
    pub inference_dof: Option<f64>,
    pub rss: f64,
    pub tss: f64,
    /// Unadjusted `1 − RSS/TSS` with TSS about the grand mean.
    pub r2: f64,
    pub theil_r2: f64,
    pub f_test: FTest,
    pub n_obs: usize,
    pub n_firms: usize,
    pub n_days: usize,
}

impl FeFit {
    pub fn n_slopes(&self) -> usize {
        self.slopes.len()
    }

    /// Parameters of the unrestricted model: slopes, intercept, and the
    /// `(N − 1) + (T − 1)` free effects.
    pub fn n_params(&self) -> usize {
        self.n_slopes() + 1 + (self.n_firms - 1) + (self.n_days - 1)
    }

    /// Two-sided confidence interval for slope `j`.
    pub fn confidence_interval(&self, j: usize, level: f64) -> (f64, f64) {
        let c = stats::critical_value(level, self.inference_dof);
        (
            self.slopes[j] - c * self.std_errors[j],
            self.slopes[j] + c * self.std_errors[j],
        )
    }
}

/// Reference distribution for clustered t statistics.
pub fn cluster_inference_dof(n_clusters: usize) -> Option<f64> {
    if n_clusters >= NORMAL_APPROX_MIN_CLUSTERS {
        None
    } else {
        Some(n_clusters.saturating_sub(1) as f64)
    }
}

/// Degrees-of-freedom-adjusted R² of the fit, counting slopes, intercept
/// and absorbed effects as parameters.
pub fn theil_r2(fit: &FeFit) -> f64 {
    adjusted_r2(fit.r2, fit.n_obs, fit.n_params())
}

/// `F = ((RSS_r − RSS_u)/q) / (RSS_u/(n − k_u))` with `q = (N − 1) + (T − 1)`.
pub fn f_test_no_fixed_effects(restricted: &PooledFit, unrestricted: &FeFit) -> Result<FTest> {
    if restricted.n_obs != unrestricted.n_obs || restricted.n_slopes != unrestricted.n_slopes() {
        return Err(Error::MismatchedSamples);
    }
    f_statistic(
        restricted.rss,
        unrestricted.rss,
        unrestricted.n_obs,
        unrestricted.n_firms,
        unrestricted.n_days,
        unrestricted.n_params(),
    )
}

fn f_statistic(rss_r: f64, rss_u: f64, n: usize, n_firms: usize, n_days: usize, k_u: usize) -> Result<FTest> {
    let q = (n_firms - 1) + (n_days - 1);
    if n <= k_u || q == 0 {
        return Err(Error::TooFewObservations {
            needed: k_u + 1,
            available: n,
        });
    }
    let df_den = n - k_u;
    let num = (rss_r - rss_u).max(0.0) / q as f64;
    let statistic = if num == 0.0 { 0.0 } else { num / (rss_u / df_den as f64) };
    let p_value = if statistic.is_finite() {
        FisherSnedecor::new(q as f64, df_den as f64)
            .map(|d| d.sf(statistic))
            .unwrap_or(f64::NAN)
    } else {
        0.0
    };
    Ok(FTest {
        statistic,
        df_num: q,
        df_den,
        p_value,
    })
}

/// Grand mean over firms of the daily mean of `intercept + μ̂_i + γ̂_t`.
pub fn report_intercept(fit: &FeFit) -> f64 {
    let n_days = fit.time_effects.len() as f64;
    let firm_means = fit
        .firm_effects
        .iter()
        .map(|mu| fit.time_effects.iter().map(|g| fit.intercept + mu + g).sum::<f64>() / n_days);
    firm_means.sum::<f64>() / fit.firm_effects.len() as f64
}

/// Fit `y = Xβ + μ_i + γ_t + ε` on a balanced firm-major panel.
pub fn fit_two_way(
    columns: &[Vec<f64>],
    y: &[f64],
    n_firms: usize,
    n_days: usize,
    options: &FeOptions,
) -> Result<FeFit> {
    let n = y.len();
    check_balanced(n, n_firms, n_days)?;
    for c in columns {
        if c.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: c.len(),
            });
        }
    }
    let k = columns.len();
    let x_tilde: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| within_transform(c, n_firms, n_days))
        .collect::<Result<_>>()?;
    let y_tilde = within_transform(y, n_firms, n_days)?;
    let x = linalg::matrix_from_columns(&x_tilde);
    let ls = ols_fit(&x, &DVector::from_column_slice(&y_tilde))?;
    let beta: Vec<f64> = ls.beta.iter().copied().collect();
    let residuals: Vec<f64> = ls.residuals.iter().copied().collect();

    // Effects from the untransformed means.
    let y_means = panel_means(y, n_firms, n_days);
    let x_means: Vec<PanelMeans> = columns.iter().map(|c| panel_means(c, n_firms, n_days)).collect();
    let fitted_mean =
        |pick: &dyn Fn(&PanelMeans) -> f64| -> f64 { x_means.iter().zip(&beta).map(|(m, b)| pick(m) * b).sum() };
    let intercept = y_means.grand - fitted_mean(&|m| m.grand);
    let firm_effects: Vec<f64> = (0..n_firms)
        .map(|f| y_means.firm[f] - fitted_mean(&|m| m.firm[f]) - intercept)
        .collect();
    let time_effects: Vec<f64> = (0..n_days)
        .map(|d| y_means.day[d] - fitted_mean(&|m| m.day[d]) - intercept)
        .collect();

    let bread = ls.xtx_inv.clone();
    let clusters: Vec<usize> = (0..n).map(|i| i / n_days).collect();
    let cov_cluster = if k == 0 {
        DMatrix::zeros(0, 0)
    } else {
        cluster_with_bread(&x, &residuals, &clusters, &bread, options.cluster_small_sample)?
    };
    let cov_dm3 = dm3_with_bread(&x, &residuals, &bread, options.hc_divisor);
    let covariance = match options.covariance {
        CovarianceKind::Cluster => cov_cluster.clone(),
        CovarianceKind::Dm3 => cov_dm3.clone(),
    };

    let rss = ls.rss();
    let tss: f64 = y.iter().map(|v| (v - y_means.grand).powi(2)).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN };
    let n_params = k + 1 + (n_firms - 1) + (n_days - 1);
    let inference_dof = match options.covariance {
        CovarianceKind::Cluster => cluster_inference_dof(n_firms),
        CovarianceKind::Dm3 => Some(n.saturating_sub(n_params) as f64),
    };
    let std_errors: Vec<f64> = (0..k).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect();
    let t_values: Vec<f64> = beta.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values: Vec<f64> = t_values.iter().map(|&t| stats::two_sided_p(t, inference_dof)).collect();

    let pooled = pooled_fit(columns, y)?;
    let f_test = f_statistic(pooled.rss, rss, n, n_firms, n_days, n_params)?;

    let mut fit = FeFit {
        slopes: beta,
        residuals,
        firm_effects,
        time_effects,
        intercept,
        covariance_kind: options.covariance,
        covariance,
        cov_cluster,
        cov_dm3,
        std_errors,
        t_values,
        p_values,
        inference_dof,
        rss,
        tss,
        r2,
        theil_r2: f64::NAN,
        f_test,
        n_obs: n,
        n_firms,
        n_days,
    };
    fit.theil_r2 = theil_r2(&fit);
    Ok(fit)
}
