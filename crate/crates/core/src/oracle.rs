//! Linearization-free reference computations.
//!
//! Everything here works with the exact selection weight (true nearest-point
//! distances) on uniform midpoint grids, so it can be used to check the
//! closed-form conditionals built by `movement`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{nearest_point, DynamicFeature, Point2};
use crate::movement::{ModelParams, SubPop};

/// Square midpoint grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub center: Point2,
    pub half_width: f64,
    /// Cells per axis.
    pub n: usize,
}

impl GridSpec {
    pub const MIN_CELLS: usize = 32;
    pub const DEFAULT_CELLS: usize = 512;

    pub fn new(center: Point2, half_width: f64, n: usize) -> Result<Self> {
        if n < Self::MIN_CELLS {
            return Err(Error::Param(format!(
                "grid needs at least {} cells per axis, got {n}",
                Self::MIN_CELLS
            )));
        }
        if !(half_width > 0.0) || !half_width.is_finite() || !center.is_finite() {
            return Err(Error::Param(format!("invalid grid half width {half_width}")));
        }
        Ok(GridSpec {
            center,
            half_width,
            n,
        })
    }

    /// Centered on `p_prev`, wide enough for the step kernel and the pull of the feature.
    pub fn default_for(p_prev: Point2, params: &ModelParams) -> Self {
        GridSpec {
            center: p_prev,
            half_width: 6.0 * params.sigma2.sqrt() + 2.0 * params.tau2.sqrt(),
            n: Self::DEFAULT_CELLS,
        }
    }

    pub fn with_cells(&self, n: usize) -> Self {
        GridSpec { n, ..*self }
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size().powi(2)
    }

    /// Center of cell `(i, j)`; `i` indexes x.
    pub fn cell_center(&self, i: usize, j: usize) -> Point2 {
        let h = self.cell_size();
        Point2::new(
            self.center.x - self.half_width + (i as f64 + 0.5) * h,
            self.center.y - self.half_width + (j as f64 + 0.5) * h,
        )
    }

    pub fn covers(&self, p: Point2, radius: f64) -> bool {
        (p.x - radius) >= self.center.x - self.half_width
            && (p.x + radius) <= self.center.x + self.half_width
            && (p.y - radius) >= self.center.y - self.half_width
            && (p.y + radius) <= self.center.y + self.half_width
    }

    /// Values of `f` at every cell center, row `j` major.
    pub fn evaluate<F>(&self, f: F) -> GridValues
    where
        F: Fn(Point2) -> f64 + Sync,
    {
        let values = (0..self.n)
            .into_par_iter()
            .flat_map_iter(|j| {
                let f = &f;
                (0..self.n).map(move |i| f(self.cell_center(i, j)))
            })
            .collect();
        GridValues {
            grid: *self,
            values,
            log_scale: 0.0,
        }
    }

    /// Like [`GridSpec::evaluate`] but stops at the first error.
    pub fn try_evaluate<F>(&self, f: F) -> Result<GridValues>
    where
        F: Fn(Point2) -> Result<f64> + Sync,
    {
        let rows: Result<Vec<Vec<f64>>> = (0..self.n)
            .into_par_iter()
            .map(|j| (0..self.n).map(|i| f(self.cell_center(i, j))).collect())
            .collect();
        Ok(GridValues {
            grid: *self,
            values: rows?.into_iter().flatten().collect(),
            log_scale: 0.0,
        })
    }

    /// Evaluates a log-valued function and stores it shifted by its maximum,
    /// so that integrands far below `f64::MIN_POSITIVE` keep their shape.
    pub fn try_evaluate_log<F>(&self, log_f: F) -> Result<GridValues>
    where
        F: Fn(Point2) -> Result<f64> + Sync,
    {
        let logs = self.try_evaluate(log_f)?.values;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Param("integrand has no finite mass on the grid".into()));
        }
        Ok(GridValues {
            grid: *self,
            values: logs.iter().map(|l| (l - max).exp()).collect(),
            log_scale: max,
        })
    }
}

/// Function values on a [`GridSpec`]; the represented function is
/// `values[k] · exp(log_scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValues {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub log_scale: f64,
}

impl GridValues {
    /// Midpoint-rule integral.
    pub fn integral(&self) -> f64 {
        self.log_integral().exp()
    }

    pub fn log_integral(&self) -> f64 {
        (self.values.iter().sum::<f64>() * self.grid.cell_area()).ln() + self.log_scale
    }

    /// Fraction of the total carried by the outermost ring of cells.
    pub fn boundary_fraction(&self) -> f64 {
        let n = self.grid.n;
        let total: f64 = self.values.iter().sum();
        let mut edge = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                    edge += self.values[j * n + i];
                }
            }
        }
        edge / total
    }

    pub fn normalized(&self) -> GridValues {
        let z = self.values.iter().sum::<f64>() * self.grid.cell_area();
        GridValues {
            grid: self.grid,
            values: self.values.iter().map(|v| v / z).collect(),
            log_scale: 0.0,
        }
    }
}

/// Quadrature estimate of a step normalizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub log_value: f64,
    /// `|I(n) − I(2n)| / I(2n)`.
    pub rel_error: f64,
}

pub const MAX_BOUNDARY_FRACTION: f64 = 1e-6;

/// Log of the exact (un-linearized) step integrand: attraction density, times
/// the availability density and the selection weight after the first day.
pub fn exact_log_integrand<'a>(
    p_prev: Option<Point2>,
    t: i64,
    params: &ModelParams,
    z: SubPop,
    feature: &'a DynamicFeature,
) -> Result<impl Fn(Point2) -> Result<f64> + Sync + 'a> {
    let attraction = params.attraction(z)?;
    let availability = match p_prev {
        Some(p) => Some(params.availability(p)?),
        None => None,
    };
    let season = params.season;
    let tau2 = params.tau2;
    let active = p_prev.is_some() && season.contains(t);
    let feature_day = if active { Some(feature.day(t)?) } else { None };
    Ok(move |x: Point2| {
        let mut log_v = attraction.log_value(x);
        if let Some(avail) = &availability {
            log_v += avail.log_value(x);
        }
        if let Some(day) = feature_day {
            let d = nearest_point(day, x)?.dist;
            log_v -= d * d / (2.0 * tau2);
        }
        Ok(log_v)
    })
}

/// Integrand values of the exact step density on `grid`, boundary-checked.
pub fn quad_integrand(
    p_prev: Option<Point2>,
    t: i64,
    params: &ModelParams,
    z: SubPop,
    feature: &DynamicFeature,
    grid: &GridSpec,
) -> Result<GridValues> {
    if let Some(p) = p_prev {
        if !grid.covers(p, 6.0 * params.sigma2.sqrt()) {
            return Err(Error::Param(
                "quadrature grid does not cover 6 step standard deviations around the previous position"
                    .into(),
            ));
        }
    }
    let integrand = exact_log_integrand(p_prev, t, params, z, feature)?;
    let values = grid.try_evaluate_log(&integrand)?;
    let frac = values.boundary_fraction();
    if !(frac <= MAX_BOUNDARY_FRACTION) {
        return Err(Error::GridTooSmall {
            boundary_fraction: frac,
        });
    }
    Ok(values)
}

/// Midpoint-rule normalizer of the exact step integrand, with an
/// `n`-versus-`2n` refinement error estimate.
pub fn quad_normalizer(
    p_prev: Option<Point2>,
    t: i64,
    params: &ModelParams,
    z: SubPop,
    feature: &DynamicFeature,
    grid: &GridSpec,
) -> Result<Quadrature> {
    let coarse = quad_integrand(p_prev, t, params, z, feature, grid)?.log_integral();
    let fine = quad_integrand(p_prev, t, params, z, feature, &grid.with_cells(2 * grid.n))?
        .log_integral();
    Ok(Quadrature {
        value: coarse.exp(),
        log_value: coarse,
        rel_error: (coarse - fine).exp_m1().abs(),
    })
}

/// The exact step density normalized on `grid`.
pub fn quad_conditional_density(
    p_prev: Option<Point2>,
    t: i64,
    params: &ModelParams,
    z: SubPop,
    feature: &DynamicFeature,
    grid: &GridSpec,
) -> Result<GridValues> {
    Ok(quad_integrand(p_prev, t, params, z, feature, grid)?.normalized())
}

/// Total variation distance between two densities sampled on the same grid,
/// each renormalized on that grid first.
pub fn tv_distance(f: &GridValues, g: &GridValues) -> Result<f64> {
    if f.grid != g.grid || f.values.len() != g.values.len() {
        return Err(Error::Param("densities live on different grids".into()));
    }
    let zf: f64 = f.values.iter().sum();
    let zg: f64 = g.values.iter().sum();
    if !(zf > 0.0 && zg > 0.0) {
        return Err(Error::Param("density has no mass on the grid".into()));
    }
    let diff: f64 = f
        .values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| (a / zf - b / zg).abs())
        .sum();
    Ok((0.5 * diff).min(1.0))
}

/// Outcome of a two-sample permutation test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Directions used by the projected energy statistic.
const ENERGY_DIRECTIONS: usize = 90;

/// Two-sample energy-distance test with a permutation null.
///
/// Pairwise Euclidean distances are replaced by their average over
/// `ENERGY_DIRECTIONS` evenly spaced projections (scaled by π/2, which makes the
/// average reproduce the Euclidean norm up to discretization). Each projection
/// is a sorted one-dimensional problem, so a permutation costs `O(n)` per
/// direction instead of `O(n²)`.
pub fn energy_permutation_test(
    x: &[Point2],
    y: &[Point2],
    permutations: usize,
    seed: u64,
) -> PermutationTest {
    let n = x.len();
    let m = y.len();
    assert!(n > 1 && m > 1, "energy test needs at least two points per sample");
    let pooled: Vec<Point2> = x.iter().chain(y).copied().collect();
    let total = pooled.len();

    // Per direction: pooled values in sorted order plus the original index.
    let projections: Vec<(Vec<f64>, Vec<u32>, f64)> = (0..ENERGY_DIRECTIONS)
        .into_par_iter()
        .map(|k| {
            let theta = std::f64::consts::PI * k as f64 / ENERGY_DIRECTIONS as f64;
            let u = Point2::new(theta.cos(), theta.sin());
            let mut idx: Vec<u32> = (0..total as u32).collect();
            let vals: Vec<f64> = pooled.iter().map(|p| p.dot(u)).collect();
            idx.sort_by(|&a, &b| vals[a as usize].total_cmp(&vals[b as usize]));
            let sorted: Vec<f64> = idx.iter().map(|&i| vals[i as usize]).collect();
            let all_pairs = sorted
                .iter()
                .enumerate()
                .map(|(r, v)| v * (2.0 * r as f64 - total as f64 + 1.0))
                .sum::<f64>();
            (sorted, idx, all_pairs)
        })
        .collect();

    let statistic_for = |in_x: &[bool]| -> f64 {
        let acc: f64 = projections
            .iter()
            .map(|(sorted, idx, all_pairs)| {
                let (mut rx, mut ry) = (0usize, 0usize);
                let (mut sx, mut sy) = (0.0, 0.0);
                for (v, &i) in sorted.iter().zip(idx) {
                    if in_x[i as usize] {
                        rx += 1;
                        sx += v * (2.0 * rx as f64 - n as f64 - 1.0);
                    } else {
                        ry += 1;
                        sy += v * (2.0 * ry as f64 - m as f64 - 1.0);
                    }
                }
                let cross = all_pairs - sx - sy;
                2.0 * cross / (n * m) as f64
                    - 2.0 * sx / (n * n) as f64
                    - 2.0 * sy / (m * m) as f64
            })
            .sum();
        std::f64::consts::FRAC_PI_2 * acc / ENERGY_DIRECTIONS as f64
    };

    let mut labels: Vec<bool> = (0..total).map(|i| i < n).collect();
    let observed = statistic_for(&labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = 0usize;
    for _ in 0..permutations {
        labels.shuffle(&mut rng);
        if statistic_for(&labels) >= observed {
            exceed += 1;
        }
    }
    PermutationTest {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gausskit::{compose, line_factor};
    use crate::geometry::{Mat2, Polyline};
    use crate::movement::step_conditional;
    use crate::rsf::Season;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn params(sigma2: f64, tau2: f64) -> ModelParams {
        ModelParams {
            sigma2,
            tau2,
            season: Season::new(69.0, 337.0).unwrap(),
            center_cs: Point2::new(-200.0, 100.0),
            center_sb: Point2::new(400.0, 0.0),
            cov_cs: Mat2::new(300.0f64.powi(2), 0.0, 0.0, 200.0f64.powi(2)),
            cov_sb: Mat2::scaled_identity(1e6),
        }
    }

    fn straight() -> DynamicFeature {
        let l = Polyline::segment(Point2::new(-5e4, -2e4), Point2::new(5e4, 2e4)).unwrap();
        DynamicFeature::constant(vec![l], 0..365)
    }

    #[test]
    fn availability_density_integrates_to_one() {
        let p = params(272.0, 8600.0);
        let prev = Point2::new(10.0, -5.0);
        let grid = GridSpec::default_for(prev, &p);
        let avail = p.availability(prev).unwrap();
        let z = grid.evaluate(|x| avail.log_value(x).exp()).integral();
        assert!((z - 1.0).abs() < 1e-3);
    }

    #[test]
    fn straight_feature_normalizer_matches_closed_form() {
        let p = params(272.0, 8649.0);
        let prev = Point2::new(-150.0, 40.0);
        let t = 200;
        let grid = GridSpec::default_for(prev, &p);
        let q = quad_normalizer(Some(prev), t, &p, SubPop::Cs, &straight(), &grid).unwrap();
        let c = step_conditional(Some(prev), t, &p, SubPop::Cs, &straight()).unwrap();
        assert!(
            (q.value / c.log_norm.exp() - 1.0).abs() < 1e-5,
            "{} vs {}",
            q.value,
            c.log_norm.exp()
        );
        assert!(q.rel_error < 1e-4, "refinement error {}", q.rel_error);
    }

    #[test]
    fn normalizer_is_stable_under_recentering() {
        let p = params(272.0, 8649.0);
        let prev = Point2::new(-150.0, 40.0);
        let base = GridSpec::default_for(prev, &p);
        let shifted = GridSpec {
            center: prev + Point2::new(base.half_width / 5.0, -base.half_width / 6.0),
            ..base
        };
        let a = quad_integrand(Some(prev), 200, &p, SubPop::Cs, &straight(), &base).unwrap();
        let b = quad_integrand(Some(prev), 200, &p, SubPop::Cs, &straight(), &shifted);
        let b = b.unwrap();
        assert!((a.integral() / b.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tiny_grid_is_rejected() {
        let p = params(272.0, 8649.0);
        let prev = Point2::new(0.0, 0.0);
        let narrow = GridSpec::new(prev, 3.0 * 16.5, 64).unwrap();
        assert!(matches!(
            quad_integrand(Some(prev), 200, &p, SubPop::Cs, &straight(), &narrow),
            Err(Error::Param(_))
        ));
        // covers 6σ but not the attraction-only first day
        let g = GridSpec::new(p.center_cs, 200.0, 64).unwrap();
        assert!(matches!(
            quad_integrand(None, 200, &p, SubPop::Cs, &straight(), &g),
            Err(Error::GridTooSmall { .. })
        ));
        assert!(GridSpec::new(prev, 10.0, 16).is_err());
    }

    #[test]
    fn tv_of_identical_and_disjoint() {
        let grid = GridSpec::new(Point2::ORIGIN, 1.0, 32).unwrap();
        let f = grid.evaluate(|p| if p.x < 0.0 { 1.0 } else { 0.0 });
        let g = grid.evaluate(|p| if p.x > 0.0 { 3.0 } else { 0.0 });
        assert_eq!(tv_distance(&f, &f).unwrap(), 0.0);
        assert!((tv_distance(&f, &g).unwrap() - 1.0).abs() < 1e-15);
        let other = GridSpec::new(Point2::ORIGIN, 2.0, 32).unwrap().evaluate(|_| 1.0);
        assert!(tv_distance(&f, &other).is_err());
    }

    #[test]
    fn tv_of_shifted_normals_matches_analytic() {
        let grid = GridSpec::new(Point2::ORIGIN, 9.0, 900).unwrap();
        let f = grid.evaluate(|p| (-0.5 * p.norm_sq()).exp());
        let g = grid.evaluate(|p| (-0.5 * (p - Point2::new(0.1, 0.0)).norm_sq()).exp());
        let want = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(0.05) - 1.0;
        assert!((tv_distance(&f, &g).unwrap() - want).abs() < 1e-3);
    }

    #[test]
    fn energy_statistic_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut draw = |shift: f64| -> Vec<Point2> {
            (0..150)
                .map(|_| {
                    Point2::new(
                        rng.sample::<f64, _>(StandardNormal) + shift,
                        rng.sample::<f64, _>(StandardNormal),
                    )
                })
                .collect()
        };
        let x = draw(0.0);
        let y = draw(0.4);
        let mean_dist = |a: &[Point2], b: &[Point2]| {
            let mut s = 0.0;
            for p in a {
                for q in b {
                    s += p.dist(*q);
                }
            }
            s / (a.len() * b.len()) as f64
        };
        let brute = 2.0 * mean_dist(&x, &y) - mean_dist(&x, &x) - mean_dist(&y, &y);
        let t = energy_permutation_test(&x, &y, 0, 0);
        assert!((t.statistic / brute - 1.0).abs() < 1e-3, "{} vs {brute}", t.statistic);
    }

    #[test]
    fn energy_test_detects_shift_and_accepts_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut draw = |shift: f64, n: usize| -> Vec<Point2> {
            (0..n)
                .map(|_| {
                    Point2::new(
                        rng.sample::<f64, _>(StandardNormal) + shift,
                        rng.sample::<f64, _>(StandardNormal),
                    )
                })
                .collect()
        };
        let x = draw(0.0, 500);
        let y = draw(0.5, 500);
        assert!(energy_permutation_test(&x, &y, 199, 3).p_value < 0.01);
        let y0 = draw(0.0, 500);
        assert!(energy_permutation_test(&x, &y0, 199, 3).p_value > 0.01);
    }

    #[test]
    fn straight_line_tv_is_tiny() {
        let p = params(150.0, 3000.0);
        let prev = Point2::new(60.0, -20.0);
        let t = 150;
        let grid = GridSpec::default_for(prev, &p);
        let exact = quad_conditional_density(Some(prev), t, &p, SubPop::Cs, &straight(), &grid).unwrap();
        let l = straight();
        let line = crate::geometry::tangent_at(l.day(t).unwrap(), prev).unwrap();
        let factors = [
            p.attraction(SubPop::Cs).unwrap(),
            p.availability(prev).unwrap(),
            line_factor(&line, p.tau2).unwrap(),
        ];
        let g = compose(&factors).unwrap().gaussian;
        let lin = grid.evaluate(|x| g.log_density(x).exp());
        assert!(tv_distance(&lin, &exact).unwrap() < 1e-3);
    }
}
