//! Reduced cubic response surface in valuation and trend.
//!
//! The surface keeps the nine cubic monomials of the full model, zeroing the
//! ones that are not significant. With valuation held fixed it collapses to a
//! cubic in trend, `a₀ + a₁T + a₂T² + a₃T³`, whose turning points separate the
//! continuation regime (return rising with trend) from the reversal regime.

use std::io::Write;

use crate::models::{RegressionReport, DISPLAY_SCALE};
use crate::prep::{ModelId, Term};
use crate::{Error, Result};

/// Scale of the stored coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Raw,
    /// Multiplied by [`DISPLAY_SCALE`].
    Scaled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicSurface {
    /// Coefficients in [`Term::CUBIC`] order.
    pub coefficients: [f64; 9],
    /// p-values of the source report, NaN when unknown.
    pub p_values: [f64; 9],
    /// Terms zeroed for lack of significance.
    pub zeroed: [bool; 9],
    pub alpha: f64,
    pub units: Units,
}

impl CubicSurface {
    /// Surface with the given coefficients, none zeroed.
    pub fn from_coefficients(coefficients: [f64; 9], units: Units) -> Self {
        Self {
            coefficients,
            p_values: [f64::NAN; 9],
            zeroed: [false; 9],
            alpha: 1.0,
            units,
        }
    }

    /// Surface from `(term, coefficient)` pairs; unlisted terms are zero.
    pub fn from_terms(terms: &[(Term, f64)], units: Units) -> Result<Self> {
        let mut c = [0.0; 9];
        for &(term, value) in terms {
            let j =
                cubic_index(term).ok_or_else(|| Error::InvalidConfig(format!("{term} is not a cubic surface term")))?;
            c[j] = value;
        }
        Ok(Self::from_coefficients(c, units))
    }

    pub fn coefficient(&self, term: Term) -> f64 {
        cubic_index(term).map_or(0.0, |j| self.coefficients[j])
    }

    /// Copy with coefficients multiplied by [`DISPLAY_SCALE`].
    pub fn scaled(&self) -> Self {
        match self.units {
            Units::Scaled => self.clone(),
            Units::Raw => Self {
                coefficients: self.coefficients.map(|c| c * DISPLAY_SCALE),
                units: Units::Scaled,
                ..self.clone()
            },
        }
    }

    /// Coefficients `[a₀, a₁, a₂, a₃]` of the cubic in trend at fixed valuation.
    pub fn trend_cubic(&self, valuation: f64) -> [f64; 4] {
        let mut a = [0.0; 4];
        for (j, term) in Term::CUBIC.iter().enumerate() {
            let (pv, pt) = term.powers().expect("cubic term");
            a[pt as usize] += self.coefficients[j] * valuation.powi(pv);
        }
        a
    }

    /// Coefficients `[b₀, b₁, b₂, b₃]` of the cubic in valuation at fixed trend.
    pub fn valuation_cubic(&self, trend: f64) -> [f64; 4] {
        let mut b = [0.0; 4];
        for (j, term) in Term::CUBIC.iter().enumerate() {
            let (pv, pt) = term.powers().expect("cubic term");
            b[pv as usize] += self.coefficients[j] * trend.powi(pt);
        }
        b
    }
}

fn cubic_index(term: Term) -> Option<usize> {
    Term::CUBIC.iter().position(|&t| t == term)
}

/// Keep the cubic coefficients of a full-model report with `p < alpha`.
pub fn reduce_surface(report: &RegressionReport, alpha: f64) -> Result<CubicSurface> {
    if !matches!(report.model, ModelId::M3 | ModelId::M4) {
        return Err(Error::InvalidConfig(format!(
            "surface needs model 3 or 4, got model {}",
            report.model
        )));
    }
    let mut surface = CubicSurface::from_coefficients([0.0; 9], Units::Raw);
    surface.alpha = alpha;
    for (j, &term) in Term::CUBIC.iter().enumerate() {
        let row = report
            .row(term)
            .ok_or_else(|| Error::MissingColumn(term.key().to_string()))?;
        surface.p_values[j] = row.p_value;
        if row.p_value < alpha {
            surface.coefficients[j] = row.coefficient;
        } else {
            surface.zeroed[j] = true;
        }
    }
    if surface.zeroed.iter().all(|&z| z) {
        return Err(Error::NoSignificantTerms { alpha });
    }
    Ok(surface)
}

/// Surface value at `(valuation, trend)`; there is no constant term.
pub fn evaluate(surface: &CubicSurface, valuation: f64, trend: f64) -> f64 {
    Term::CUBIC
        .iter()
        .zip(&surface.coefficients)
        .map(|(term, c)| {
            let (pv, pt) = term.powers().expect("cubic term");
            c * valuation.powi(pv) * trend.powi(pt)
        })
        .sum()
}

fn poly(a: &[f64; 4], x: f64) -> f64 {
    ((a[3] * x + a[2]) * x + a[1]) * x + a[0]
}

fn poly_derivative(a: &[f64; 4], x: f64) -> f64 {
    (3.0 * a[3] * x + 2.0 * a[2]) * x + a[1]
}

/// Which side of the turning points a trend value lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Return increases with trend.
    Underreaction,
    /// Return decreases with trend.
    Overreaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendGeometry {
    pub valuation: f64,
    /// `[a₀, a₁, a₂, a₃]` of the cross-section.
    pub cubic: [f64; 4],
    pub local_min_t: f64,
    pub local_max_t: f64,
    pub local_min_r: f64,
    pub local_max_r: f64,
    /// `|local_min_t| / |local_max_t|`; 1 for a perfectly symmetric curve.
    pub symmetry_ratio: f64,
}

impl TrendGeometry {
    pub fn regime(&self, trend: f64) -> Regime {
        if poly_derivative(&self.cubic, trend) >= 0.0 {
            Regime::Underreaction
        } else {
            Regime::Overreaction
        }
    }

    /// Flat JSON object with every field.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"valuation\": {}, \"a0\": {}, \"a1\": {}, \"a2\": {}, \"a3\": {}, \"local_min_t\": {}, \"local_max_t\": {}, \"local_min_r\": {}, \"local_max_r\": {}, \"symmetry_ratio\": {}}}",
            self.valuation,
            self.cubic[0],
            self.cubic[1],
            self.cubic[2],
            self.cubic[3],
            self.local_min_t,
            self.local_max_t,
            self.local_min_r,
            self.local_max_r,
            self.symmetry_ratio
        )
    }
}

/// Turning points of the trend cross-section at the given valuation.
pub fn trend_geometry(surface: &CubicSurface, valuation: f64) -> Result<TrendGeometry> {
    let a = surface.trend_cubic(valuation);
    // Derivative 3a₃T² + 2a₂T + a₁.
    let (qa, qb, qc) = (3.0 * a[3], 2.0 * a[2], a[1]);
    let disc = qb * qb - 4.0 * qa * qc;
    if qa == 0.0 || !(disc > 0.0) {
        return Err(Error::NoInteriorExtrema);
    }
    let sign = if qb < 0.0 { -1.0 } else { 1.0 };
    let q = -0.5 * (qb + sign * disc.sqrt());
    let r1 = q / qa;
    let r2 = if q != 0.0 { qc / q } else { -r1 };
    let (t_min, t_max) = if 2.0 * a[2] + 6.0 * a[3] * r1 > 0.0 {
        (r1, r2)
    } else {
        (r2, r1)
    };
    Ok(TrendGeometry {
        valuation,
        cubic: a,
        local_min_t: t_min,
        local_max_t: t_max,
        local_min_r: poly(&a, t_min),
        local_max_r: poly(&a, t_max),
        symmetry_ratio: t_min.abs() / t_max.abs(),
    })
}

/// Real roots of `a₃x³ + a₂x² + a₁x + a₀`, ascending. Degenerate leading
/// coefficients fall back to the quadratic or linear case.
pub fn solve_cubic(a: [f64; 4]) -> Vec<f64> {
    let scale = a.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let c: Vec<f64> = a.iter().map(|v| v / scale).collect();
    let mut roots = if c[3].abs() > 1e-14 {
        depressed_cubic_roots(c[2] / c[3], c[1] / c[3], c[0] / c[3])
    } else if c[2].abs() > 1e-14 {
        quadratic_roots(c[2], c[1], c[0])
    } else if c[1].abs() > 1e-14 {
        vec![-c[0] / c[1]]
    } else {
        Vec::new()
    };
    let arr = [c[0], c[1], c[2], c[3]];
    for r in roots.iter_mut() {
        *r = newton_polish(&arr, *r);
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
    roots
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sign = if b < 0.0 { -1.0 } else { 1.0 };
    let q = -0.5 * (b + sign * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// Roots of the monic cubic `x³ + bx² + cx + d`.
fn depressed_cubic_roots(b: f64, c: f64, d: f64) -> Vec<f64> {
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let half_q = q / 2.0;
    let third_p = p / 3.0;
    let disc = half_q * half_q + third_p * third_p * third_p;
    if disc < 0.0 {
        // Three distinct real roots.
        let m = 2.0 * (-third_p).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
            .collect()
    } else {
        let s = disc.sqrt();
        let u = (-half_q + s).cbrt();
        let v = (-half_q - s).cbrt();
        let mut roots = vec![u + v - shift];
        if disc == 0.0 && u != 0.0 {
            roots.push(-u - shift);
        }
        roots
    }
}

fn newton_polish(a: &[f64; 4], mut x: f64) -> f64 {
    for _ in 0..8 {
        let d = poly_derivative(a, x);
        if d == 0.0 {
            break;
        }
        let step = poly(a, x) / d;
        let next = x - step;
        if !next.is_finite() || poly(a, next).abs() > poly(a, x).abs() {
            break;
        }
        x = next;
        if step.abs() <= f64::EPSILON * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Trend values at which the cross-section at `valuation` equals `target`.
pub fn level_set_roots(surface: &CubicSurface, valuation: f64, target: f64) -> Vec<f64> {
    let mut a = surface.trend_cubic(valuation);
    a[0] -= target;
    solve_cubic(a)
}

/// Inclusive, evenly spaced axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl AxisRange {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        Self { min, max, steps }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        if self.steps == 0 || !(self.min <= self.max) || (self.steps > 1 && self.min == self.max) {
            return Err(Error::EmptyRange(format!("{}:{}:{}", self.min, self.max, self.steps)));
        }
        if self.steps == 1 {
            return Ok(vec![self.min]);
        }
        let h = (self.max - self.min) / (self.steps - 1) as f64;
        Ok((0..self.steps)
            .map(|i| {
                if i + 1 == self.steps {
                    self.max
                } else {
                    self.min + h * i as f64
                }
            })
            .collect())
    }
}

impl std::str::FromStr for AxisRange {
    type Err = Error;

    /// `min:max:steps`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || Error::InvalidConfig(format!("expected min:max:steps, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(Self {
            min: parts[0].parse().map_err(|_| bad())?,
            max: parts[1].parse().map_err(|_| bad())?,
            steps: parts[2].parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub valuation: f64,
    pub trend: f64,
    pub value: f64,
}

/// Full surface grid plus the two axis cross-sections.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    /// Valuation-major.
    pub surface: Vec<GridPoint>,
    /// Trend held at 0.
    pub valuation_section: Vec<GridPoint>,
    /// Valuation held at 0.
    pub trend_section: Vec<GridPoint>,
}

pub fn grid_emit(surface: &CubicSurface, valuation: AxisRange, trend: AxisRange) -> Result<SurfaceGrid> {
    let vs = valuation.points()?;
    let ts = trend.points()?;
    let point = |v: f64, t: f64| GridPoint {
        valuation: v,
        trend: t,
        value: evaluate(surface, v, t),
    };
    Ok(SurfaceGrid {
        surface: vs
            .iter()
            .flat_map(|&v| ts.iter().map(move |&t| (v, t)))
            .map(|(v, t)| point(v, t))
            .collect(),
        valuation_section: vs.iter().map(|&v| point(v, 0.0)).collect(),
        trend_section: ts.iter().map(|&t| point(0.0, t)).collect(),
    })
}

/// `valuation,trend,return` CSV.
pub fn write_grid_csv<W: Write>(points: &[GridPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["valuation", "trend", "return"])?;
    for p in points {
        w.write_record([p.valuation.to_string(), p.trend.to_string(), p.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_effects::CovarianceKind;
    use crate::models::ReportRow;
    use crate::stats;

    /// Significant cubic coefficients of the published full cubic model,
    /// in thousandths.
    fn published() -> CubicSurface {
        CubicSurface::from_terms(
            &[
                (Term::Valuation, 0.615),
                (Term::Valuation2, 0.112),
                (Term::Trend, 0.721),
                (Term::Trend3, -0.090),
                (Term::TrendValuation2, 0.151),
            ],
            Units::Scaled,
        )
        .unwrap()
    }

    /// Published coefficient, SE pairs for the full cubic model.
    fn published_report() -> RegressionReport {
        let table = [
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
        RegressionReport {
            model: ModelId::M3,
            rows: table
                .iter()
                .map(|&(term, c, se)| {
                    let t = c / se;
                    ReportRow {
                        term,
                        coefficient: c * 1e-3,
                        std_error: se * 1e-3,
                        t_value: t,
                        p_value: stats::two_sided_p(t, None),
                        stars: 0,
                    }
                })
                .collect(),
            intercept: 0.0043,
            theil_r2: 0.4037,
            r2: f64::NAN,
            n_obs: 257_635,
            n_firms: 85,
            n_days: 3_031,
            f_statistic: 55.15,
            f_p_value: 0.0,
            f_stars: 3,
            covariance: CovarianceKind::Cluster,
        }
    }

    #[test]
    fn reduce_published_report() {
        let s = reduce_surface(&published_report(), 0.10).unwrap();
        let kept: Vec<Term> = Term::CUBIC
            .iter()
            .zip(&s.zeroed)
            .filter(|(_, z)| !**z)
            .map(|(t, _)| *t)
            .collect();
        assert_eq!(
            kept,
            vec![
                Term::Valuation,
                Term::Valuation2,
                Term::Trend,
                Term::Trend3,
                Term::TrendValuation2
            ]
        );
        let scaled = s.scaled();
        for (t, v) in [
            (Term::Valuation, 0.615),
            (Term::Trend3, -0.090),
            (Term::TrendValuation2, 0.151),
        ] {
            assert!((scaled.coefficient(t) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn reduce_all_significant_is_identity() {
        let r = published_report();
        let s = reduce_surface(&r, 1.01).unwrap();
        for (j, t) in Term::CUBIC.iter().enumerate() {
            assert_eq!(s.coefficients[j], r.row(*t).unwrap().coefficient);
        }
    }

    #[test]
    fn reduce_alpha_zero_fails() {
        assert_eq!(
            reduce_surface(&published_report(), 0.0).unwrap_err(),
            Error::NoSignificantTerms { alpha: 0.0 }
        );
    }

    #[test]
    fn reduce_rejects_small_models() {
        let mut r = published_report();
        r.model = ModelId::M2;
        assert!(matches!(reduce_surface(&r, 0.1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn evaluate_examples() {
        let s = published();
        assert!((evaluate(&s, 0.0, 1.634) - 0.785).abs() < 1e-3);
        assert_eq!(evaluate(&s, 0.0, 0.0), 0.0);
        assert!((evaluate(&s, 1.0, 0.0) - 0.727).abs() < 1e-12);
    }

    #[test]
    fn published_geometry() {
        let g = trend_geometry(&published(), 0.0).unwrap();
        assert!((g.local_min_t + 1.634).abs() < 1e-3);
        assert!((g.local_max_t - 1.634).abs() < 1e-3);
        assert!((g.local_min_r + 0.785).abs() < 1e-3);
        assert!((g.local_max_r - 0.785).abs() < 1e-3);
        assert!((g.symmetry_ratio - 1.0).abs() < 1e-12);
        assert_eq!(g.regime(0.0), Regime::Underreaction);
        assert_eq!(g.regime(2.0), Regime::Overreaction);
        assert_eq!(g.regime(-2.0), Regime::Overreaction);
    }

    fn trend_only(a1: f64, a2: f64, a3: f64) -> CubicSurface {
        CubicSurface::from_terms(&[(Term::Trend, a1), (Term::Trend2, a2), (Term::Trend3, a3)], Units::Raw).unwrap()
    }

    #[test]
    fn unit_extrema() {
        let g = trend_geometry(&trend_only(0.3, 0.0, -0.1), 0.0).unwrap();
        assert!((g.local_min_t + 1.0).abs() < 1e-12 && (g.local_max_t - 1.0).abs() < 1e-12);
        assert!((g.local_min_r + 0.2).abs() < 1e-12 && (g.local_max_r - 0.2).abs() < 1e-12);
    }

    #[test]
    fn saddle_has_no_extrema() {
        assert_eq!(
            trend_geometry(&trend_only(0.0, 0.0, -0.1), 0.0).unwrap_err(),
            Error::NoInteriorExtrema
        );
        assert_eq!(
            trend_geometry(&trend_only(0.3, 0.1, 0.0), 0.0).unwrap_err(),
            Error::NoInteriorExtrema
        );
    }

    #[test]
    fn critical_points_zero_derivative() {
        let g = trend_geometry(&trend_only(0.5, 0.2, -0.07), 0.0).unwrap();
        for t in [g.local_min_t, g.local_max_t] {
            assert!(poly_derivative(&g.cubic, t).abs() < 1e-9);
        }
    }

    #[test]
    fn published_level_set() {
        let roots = level_set_roots(&published(), 0.0, 0.25);
        let expected = [-2.99, 0.352, 2.64];
        assert_eq!(roots.len(), 3);
        for (r, e) in roots.iter().zip(expected) {
            assert!((r - e).abs() < 0.01, "{roots:?}");
        }
        let s = published();
        for r in &roots {
            assert!((evaluate(&s, 0.0, *r) - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_level_closed_form() {
        let roots = level_set_roots(&published(), 0.0, 0.0);
        let w = (0.721f64 / 0.090).sqrt();
        assert_eq!(roots.len(), 3);
        assert!((roots[0] + w).abs() < 1e-12);
        assert!(roots[1].abs() < 1e-12);
        assert!((roots[2] - w).abs() < 1e-12);
    }

    #[test]
    fn high_target_single_root() {
        let roots = level_set_roots(&published(), 0.0, 2.0);
        assert_eq!(roots.len(), 1);
        assert!(roots[0] < -1.634);
    }

    #[test]
    fn cubic_solver_cases() {
        assert_eq!(solve_cubic([-6.0, 11.0, -6.0, 1.0]).len(), 3);
        let r = solve_cubic([-6.0, 11.0, -6.0, 1.0]);
        for (x, e) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - e).abs() < 1e-12);
        }
        assert_eq!(solve_cubic([-2.0, 1.0, 0.0, 0.0]), vec![2.0]);
        let q = solve_cubic([-4.0, 0.0, 1.0, 0.0]);
        assert!((q[0] + 2.0).abs() < 1e-12 && (q[1] - 2.0).abs() < 1e-12);
        assert!(solve_cubic([1.0, 0.0, 1.0, 0.0]).is_empty());
        let triple = solve_cubic([-1.0, 3.0, -3.0, 1.0]);
        assert!(triple.iter().all(|x| (x - 1.0).abs() < 1e-4), "{triple:?}");
    }

    #[test]
    fn grid_shapes() {
        let g = grid_emit(&published(), AxisRange::new(-1.0, 1.0, 3), AxisRange::new(-1.0, 1.0, 3)).unwrap();
        assert_eq!(g.surface.len(), 9);
        assert_eq!(g.valuation_section.len(), 3);
        for p in &g.valuation_section {
            assert_eq!(p.value, evaluate(&published(), p.valuation, 0.0));
        }
        assert!(matches!(
            grid_emit(&published(), AxisRange::new(1.0, -1.0, 3), AxisRange::new(-1.0, 1.0, 3)),
            Err(Error::EmptyRange(_))
        ));
        assert!(matches!(
            grid_emit(&published(), AxisRange::new(-1.0, 1.0, 0), AxisRange::new(-1.0, 1.0, 3)),
            Err(Error::EmptyRange(_))
        ));
    }

    #[test]
    fn trend_section_slope_changes_sign_at_extrema() {
        let g = grid_emit(
            &published(),
            AxisRange::new(0.0, 0.0, 1),
            AxisRange::new(-3.0, 3.0, 601),
        )
        .unwrap();
        let slopes: Vec<(f64, f64)> = g
            .trend_section
            .windows(2)
            .map(|w| (0.5 * (w[0].trend + w[1].trend), w[1].value - w[0].value))
            .collect();
        let changes: Vec<f64> = slopes
            .windows(2)
            .filter(|w| w[0].1.signum() != w[1].1.signum())
            .map(|w| w[1].0)
            .collect();
        assert_eq!(changes.len(), 2);
        assert!((changes[0] + 1.634).abs() < 0.011 && (changes[1] - 1.634).abs() < 0.011);
    }

    #[test]
    fn axis_parse() {
        let a: AxisRange = "-3:3:61".parse().unwrap();
        assert_eq!(a, AxisRange::new(-3.0, 3.0, 61));
        assert!("1:2".parse::<AxisRange>().is_err());
    }
}
