//! Geometry and root-finding properties of cubic surfaces.

use paneldyn::prep::Term;
use paneldyn::surface::{self, CubicSurface, Regime, Units};
use proptest::prelude::*;

fn trend_surface(a1: f64, a2: f64, a3: f64) -> CubicSurface {
    CubicSurface::from_terms(&[(Term::Trend, a1), (Term::Trend2, a2), (Term::Trend3, a3)], Units::Raw).unwrap()
}

fn derivative(a: [f64; 4], t: f64) -> f64 {
    a[1] + 2.0 * a[2] * t + 3.0 * a[3] * t * t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn critical_points_have_zero_slope(a1 in 0.01f64..2.0, a2 in -1.0f64..1.0, a3 in -1.0f64..-0.01) {
        let g = surface::trend_geometry(&trend_surface(a1, a2, a3), 0.0).unwrap();
        for t in [g.local_min_t, g.local_max_t] {
            prop_assert!(derivative(g.cubic, t).abs() < 1e-9, "slope at {t}");
        }
        prop_assert!(g.local_min_r <= g.local_max_r);
    }

    #[test]
    fn symmetric_extrema_for_odd_cubic(a1 in 0.01f64..2.0, a3 in -1.0f64..-0.01) {
        let g = surface::trend_geometry(&trend_surface(a1, 0.0, a3), 0.0).unwrap();
        let star = (a1 / (3.0 * a3.abs())).sqrt();
        prop_assert!((g.local_max_t - star).abs() < 1e-10 * star.max(1.0));
        prop_assert!((g.local_min_t + star).abs() < 1e-10 * star.max(1.0));
        prop_assert!((g.symmetry_ratio - 1.0).abs() < 1e-10);
    }

    #[test]
    fn monotone_between_and_outside_extrema(a1 in 0.05f64..2.0, a2 in -0.5f64..0.5, a3 in -1.0f64..-0.05) {
        let s = trend_surface(a1, a2, a3);
        let g = surface::trend_geometry(&s, 0.0).unwrap();
        let (lo, hi) = (g.local_min_t, g.local_max_t);
        let span = hi - lo;
        let grid: Vec<f64> = (0..=400).map(|i| lo - span + 3.0 * span * i as f64 / 400.0).collect();
        for w in grid.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let rising = surface::evaluate(&s, 0.0, w[1]) > surface::evaluate(&s, 0.0, w[0]);
            let inside = w[0] > lo && w[1] < hi;
            let outside = w[1] < lo || w[0] > hi;
            if inside {
                prop_assert!(rising, "not increasing at {mid}");
                prop_assert_eq!(g.regime(mid), Regime::Underreaction);
            }
            if outside {
                prop_assert!(!rising, "not decreasing at {mid}");
                prop_assert_eq!(g.regime(mid), Regime::Overreaction);
            }
        }
    }

    #[test]
    fn level_roots_solve_the_cubic(
        a1 in -2.0f64..2.0, a2 in -1.0f64..1.0, a3 in -1.0f64..1.0, target in -2.0f64..2.0,
    ) {
        prop_assume!(a3.abs() > 1e-3);
        let s = trend_surface(a1, a2, a3);
        let roots = surface::level_set_roots(&s, 0.0, target);
        prop_assert!(!roots.is_empty() && roots.len() <= 3);
        prop_assert!(roots.windows(2).all(|w| w[0] < w[1]));
        for r in &roots {
            let residual = surface::evaluate(&s, 0.0, *r) - target;
            prop_assert!(residual.abs() < 1e-9, "residual {residual} at {r}");
        }
    }

    #[test]
    fn odd_cubic_roots_flip_with_target(a1 in -2.0f64..2.0, a3 in -1.0f64..1.0, target in -2.0f64..2.0) {
        prop_assume!(a3.abs() > 1e-3);
        let s = trend_surface(a1, 0.0, a3);
        let up = surface::level_set_roots(&s, 0.0, target);
        let mut down: Vec<f64> = surface::level_set_roots(&s, 0.0, -target).into_iter().map(|r| -r).collect();
        down.sort_by(f64::total_cmp);
        prop_assert_eq!(up.len(), down.len());
        for (a, b) in up.iter().zip(&down) {
            prop_assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
        }
    }

    #[test]
    fn raw_and_scaled_agree(v in -2.0f64..2.0, t in -2.0f64..2.0) {
        let raw = CubicSurface::from_coefficients(
            [0.615e-3, 0.112e-3, 0.0, 0.721e-3, 0.0, -0.09e-3, 0.0, 0.0, 0.151e-3],
            Units::Raw,
        );
        let scaled = raw.scaled();
        let a = surface::evaluate(&raw, v, t) * 1000.0;
        let b = surface::evaluate(&scaled, v, t);
        prop_assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn valuation_shifts_the_trend_cross_section() {
    // T·V² adds V²·0.151 to the linear trend coefficient.
    let s = CubicSurface::from_coefficients([0.615, 0.112, 0.0, 0.721, 0.0, -0.09, 0.0, 0.0, 0.151], Units::Scaled);
    let a = s.trend_cubic(1.0);
    assert!((a[0] - 0.727).abs() < 1e-12);
    assert!((a[1] - 0.872).abs() < 1e-12);
    assert!((a[3] + 0.09).abs() < 1e-12);
    let g = surface::trend_geometry(&s, 1.0).unwrap();
    assert!((g.local_max_t - (0.872f64 / 0.27).sqrt()).abs() < 1e-12);
}
