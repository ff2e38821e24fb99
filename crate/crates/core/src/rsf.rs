//! Distance-to-feature selection weights and their tangent-line linearization.

use crate::error::{Error, Result};
use crate::gausskit::{line_factor, GaussianFactor};
use crate::geometry::{nearest_point, tangent_of_projection, DynamicFeature, Point2, Polyline};

pub const DAYS_PER_YEAR: i64 = 365;

/// Day-of-year window `(a, b)` during which the feature attracts movement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Season {
    pub a: f64,
    pub b: f64,
}

impl Season {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let s = Season { a, b };
        if s.is_valid() {
            Ok(s)
        } else {
            Err(Error::Param(format!(
                "season needs 0 <= a < b < 365, got a = {a}, b = {b}"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        let year = DAYS_PER_YEAR as f64;
        self.a.is_finite()
            && self.b.is_finite()
            && self.a < self.b
            && (0.0..year).contains(&self.a)
            && (0.0..year).contains(&self.b)
    }

    /// Strictly inside `(a, b)`; no leap days.
    pub fn contains(&self, day: i64) -> bool {
        let doy = day_of_year(day) as f64;
        self.a < doy && doy < self.b
    }
}

pub fn day_of_year(day: i64) -> i64 {
    day.rem_euclid(DAYS_PER_YEAR)
}

fn check_tau2(tau2: f64) -> Result<()> {
    if tau2 > 0.0 && tau2.is_finite() {
        Ok(())
    } else {
        Err(Error::Param(format!("tau2 must be positive, got {tau2}")))
    }
}

/// `exp{−d²/(2τ²)}` with `d` the distance from `p` to the feature.
pub fn rsf_exact(p: Point2, feature_day: &[Polyline], tau2: f64) -> Result<f64> {
    check_tau2(tau2)?;
    let d = nearest_point(feature_day, p)?.dist;
    Ok((-d * d / (2.0 * tau2)).exp())
}

/// Selection weight on day `t`; identically 1 outside the season.
///
/// The feature for day `t` is only consulted inside the season.
pub fn rsf_seasonal(
    p: Point2,
    feature: &DynamicFeature,
    tau2: f64,
    t: i64,
    season: &Season,
) -> Result<f64> {
    check_tau2(tau2)?;
    if !season.contains(t) {
        return Ok(1.0);
    }
    rsf_exact(p, feature.day(t)?, tau2)
}

/// Tangent-line factor at the feature point nearest `p_prev`, or `None`
/// outside the season.
pub fn linearize(
    p_prev: Point2,
    feature: &DynamicFeature,
    tau2: f64,
    t: i64,
    season: &Season,
) -> Result<Option<GaussianFactor>> {
    check_tau2(tau2)?;
    if !season.contains(t) {
        return Ok(None);
    }
    let day = feature.day(t)?;
    let proj = nearest_point(day, p_prev)?;
    let line = tangent_of_projection(day, &proj);
    line_factor(&line, tau2).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn year_feature(lines: Vec<Polyline>) -> DynamicFeature {
        DynamicFeature::constant(lines, 0..DAYS_PER_YEAR)
    }

    fn axis() -> Vec<Polyline> {
        vec![Polyline::segment(Point2::new(-1e5, 0.0), Point2::new(1e5, 0.0)).unwrap()]
    }

    const SUMMER: Season = Season { a: 100.0, b: 250.0 };

    #[test]
    fn weight_is_one_on_feature() {
        assert_eq!(rsf_exact(Point2::new(3.0, 0.0), &axis(), 10.0).unwrap(), 1.0);
    }

    #[test]
    fn weight_at_one_tau() {
        let w = rsf_exact(Point2::new(0.0, 93.0), &axis(), 8649.0).unwrap();
        assert!((w - 0.606_530_659_712_633_4).abs() < 1e-12);
    }

    #[test]
    fn huge_tau_is_flat() {
        let w = rsf_exact(Point2::new(0.0, 100.0), &axis(), 1e12).unwrap();
        assert!((w - 1.0).abs() < 1e-8);
    }

    #[test]
    fn seasonal_switching() {
        let f = DynamicFeature::constant(axis(), 0..2 * DAYS_PER_YEAR);
        let p = Point2::new(0.0, 40.0);
        let exact = rsf_exact(p, &axis(), 500.0).unwrap();
        assert_eq!(rsf_seasonal(p, &f, 500.0, 180, &SUMMER).unwrap(), exact);
        assert_eq!(rsf_seasonal(p, &f, 500.0, 30, &SUMMER).unwrap(), 1.0);
        // strict at both ends
        assert_eq!(rsf_seasonal(p, &f, 500.0, 100, &SUMMER).unwrap(), 1.0);
        assert_eq!(rsf_seasonal(p, &f, 500.0, 250, &SUMMER).unwrap(), 1.0);
        assert_eq!(rsf_seasonal(p, &f, 500.0, 101, &SUMMER).unwrap(), exact);
        // next year wraps
        assert_eq!(rsf_seasonal(p, &f, 500.0, 365 + 180, &SUMMER).unwrap(), exact);
    }

    #[test]
    fn missing_day_only_matters_in_season() {
        let f = DynamicFeature::constant(axis(), [180]);
        let p = Point2::new(0.0, 5.0);
        assert_eq!(rsf_seasonal(p, &f, 10.0, 20, &SUMMER).unwrap(), 1.0);
        assert!(linearize(p, &f, 10.0, 20, &SUMMER).unwrap().is_none());
        assert!(matches!(
            rsf_seasonal(p, &f, 10.0, 181, &SUMMER),
            Err(Error::FeatureAbsent(Some(181)))
        ));
    }

    #[test]
    fn season_validation() {
        assert!(Season::new(69.0, 337.0).is_ok());
        assert!(Season::new(200.0, 100.0).is_err());
        assert!(Season::new(-1.0, 100.0).is_err());
        assert!(Season::new(10.0, 365.0).is_err());
    }

    #[test]
    fn linearization_is_exact_for_lines() {
        let line = vec![Polyline::segment(Point2::new(-3e4, -1e4), Point2::new(3e4, 1e4)).unwrap()];
        let f = year_feature(line.clone());
        let tau2 = 700.0;
        let p_prev = Point2::new(30.0, -80.0);
        let factor = linearize(p_prev, &f, tau2, 150, &SUMMER).unwrap().unwrap();
        for i in -10..=10 {
            for j in -10..=10 {
                let x = p_prev + Point2::new(i as f64 * 9.0, j as f64 * 9.0);
                let want = rsf_exact(x, &line, tau2).unwrap();
                assert!((factor.log_value(x).exp() - want).abs() < 1e-12);
            }
        }
    }

    /// Largest relative error of the tangent factor against the exact weight
    /// within `radius` of `p_prev`, on a 201×201 grid.
    fn max_rel_error(feature: &[Polyline], p_prev: Point2, tau2: f64, radius: f64) -> f64 {
        let f = year_feature(feature.to_vec());
        let factor = linearize(p_prev, &f, tau2, 150, &SUMMER).unwrap().unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..201 {
            for j in 0..201 {
                let off = Point2::new(
                    -radius + 2.0 * radius * i as f64 / 200.0,
                    -radius + 2.0 * radius * j as f64 / 200.0,
                );
                if off.norm() > radius {
                    continue;
                }
                let x = p_prev + off;
                let exact = rsf_exact(x, feature, tau2).unwrap();
                let approx = factor.log_value(x).exp();
                worst = worst.max((approx / exact - 1.0).abs());
            }
        }
        worst
    }

    #[test]
    fn tangent_factor_is_close_near_a_large_circle() {
        let circle = vec![Polyline::regular_polygon(Point2::ORIGIN, 500.0, 3600).unwrap()];
        let err = max_rel_error(&circle, Point2::new(550.0, 0.0), 93.0 * 93.0, 3.0 * 16.5);
        assert!(err < 0.02, "max relative error {err}");
    }

    #[test]
    fn linearization_error_shrinks_with_radius() {
        let errs: Vec<f64> = [100.0, 300.0, 1000.0]
            .iter()
            .map(|&rho| {
                let circle = vec![Polyline::regular_polygon(Point2::ORIGIN, rho, 3600).unwrap()];
                max_rel_error(&circle, Point2::new(rho + 50.0, 0.0), 8649.0, 50.0)
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    proptest! {
        #[test]
        fn weight_in_unit_interval_and_monotone(d1 in 0.0..500.0f64, d2 in 0.0..500.0f64, tau2 in 1.0..1e5f64) {
            let w1 = rsf_exact(Point2::new(0.0, d1), &axis(), tau2).unwrap();
            let w2 = rsf_exact(Point2::new(0.0, d2), &axis(), tau2).unwrap();
            prop_assert!(w1 > 0.0 || d1 * d1 / tau2 > 1400.0);
            prop_assert!(w1 <= 1.0);
            if d1 <= d2 { prop_assert!(w1 >= w2); }
        }

        #[test]
        fn weight_is_rigid_invariant(
            x in -200.0..200.0f64, y in -200.0..200.0f64,
            angle in -PI..PI, sx in -1e3..1e3f64, sy in -1e3..1e3f64,
        ) {
            let feature = vec![Polyline::new(vec![
                Point2::new(-100.0, 0.0), Point2::new(0.0, 40.0), Point2::new(120.0, -30.0),
            ]).unwrap()];
            let tf = RigidTransform::new(angle, Point2::new(sx, sy));
            let moved: Vec<_> = feature.iter().map(|l| tf.apply_polyline(l)).collect();
            let p = Point2::new(x, y);
            let w0 = rsf_exact(p, &feature, 900.0).unwrap();
            let w1 = rsf_exact(tf.apply(p), &moved, 900.0).unwrap();
            prop_assert!((w0 - w1).abs() < 1e-12);
        }
    }
}
