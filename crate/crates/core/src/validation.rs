//! Linearization checks against the quadrature oracle, and the step-density
//! timing comparison.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{DynamicFeature, Point2, Polyline};
use crate::movement::{step_conditional, ModelParams, SubPop};
use crate::oracle::{quad_conditional_density, quad_integrand, tv_distance, GridSpec};
use crate::rng::substream;
use crate::rsf::Season;
use crate::scenario;

/// Day used for single-step checks; inside the default season.
pub const CHECK_DAY: i64 = 200;

#[derive(Debug, Clone)]
pub struct LinearizationCase {
    pub name: String,
    /// 1/radius of the feature near the step, 0 for straight lines.
    pub curvature: f64,
    pub params: ModelParams,
    pub feature: DynamicFeature,
    pub p_prev: Point2,
    pub z: SubPop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizationResult {
    pub tv: f64,
    pub runtime_exact: Duration,
    pub runtime_linearized: Duration,
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// A straight-feature step with σ_μ² ∈ [50, 500], τ² ∈ [10³, 10⁵] and random
/// line orientation, previous position and attraction center.
pub fn random_line_case(seed: u64, index: usize) -> Result<LinearizationCase> {
    let mut rng = substream(seed, &format!("validate/line/{index}"));
    let sigma2 = uniform(&mut rng, 50.0, 500.0);
    let tau2 = 10f64.powf(uniform(&mut rng, 3.0, 5.0));
    let angle = uniform(&mut rng, 0.0, std::f64::consts::PI);
    let anchor = Point2::new(uniform(&mut rng, -300.0, 300.0), uniform(&mut rng, -300.0, 300.0));
    let dir = Point2::new(angle.cos(), angle.sin());
    let normal = Point2::new(-dir.y, dir.x);
    let p_prev = anchor + dir * uniform(&mut rng, -200.0, 200.0) + normal * (tau2.sqrt() * uniform(&mut rng, -2.0, 2.0));
    let center = p_prev + Point2::new(uniform(&mut rng, -600.0, 600.0), uniform(&mut rng, -600.0, 600.0));
    let line = Polyline::segment(anchor - dir * 1e5, anchor + dir * 1e5)?;
    let params = ModelParams {
        sigma2,
        tau2,
        season: Season::new(69.0, 337.0)?,
        center_cs: center,
        center_sb: center + Point2::new(1000.0, 0.0),
        ..scenario::default_params()
    };
    Ok(LinearizationCase {
        name: format!("line_{index}"),
        curvature: 0.0,
        params,
        feature: DynamicFeature::constant(vec![line], CHECK_DAY..CHECK_DAY + 1),
        p_prev,
        z: SubPop::Cs,
    })
}

/// Circle of radius `radius` about the origin, previous position 50 km
/// outside it and attraction centered there.
pub fn circle_case(radius: f64, sigma2: f64, tau2: f64) -> Result<LinearizationCase> {
    let p_prev = Point2::new(radius + 50.0, 0.0);
    let vertices = ((2.0 * std::f64::consts::PI * radius).ceil() as usize).max(720);
    let params = ModelParams {
        sigma2,
        tau2,
        center_cs: p_prev,
        ..scenario::default_params()
    };
    Ok(LinearizationCase {
        name: format!("circle_{radius}"),
        curvature: 1.0 / radius,
        params,
        feature: scenario::static_circle(CHECK_DAY..CHECK_DAY + 1, Point2::ORIGIN, radius, vertices)?,
        p_prev,
        z: SubPop::Cs,
    })
}

/// TV distance between the tangent-line conditional and the quadrature
/// conditional on a `cells`² grid, with the time each took.
pub fn evaluate_case(case: &LinearizationCase, cells: usize) -> Result<LinearizationResult> {
    let grid = GridSpec::default_for(case.p_prev, &case.params).with_cells(cells);
    let t0 = Instant::now();
    let exact = quad_conditional_density(Some(case.p_prev), CHECK_DAY, &case.params, case.z, &case.feature, &grid)?;
    let runtime_exact = t0.elapsed();
    let t1 = Instant::now();
    let cond = step_conditional(Some(case.p_prev), CHECK_DAY, &case.params, case.z, &case.feature)?;
    let runtime_linearized = t1.elapsed();
    let lin = grid.evaluate(|x| cond.gaussian.log_density(x).exp());
    Ok(LinearizationResult {
        tv: tv_distance(&lin, &exact)?,
        runtime_exact,
        runtime_linearized,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub contexts: usize,
    pub evaluations: usize,
    pub quadratures: usize,
    pub cells: usize,
    pub linearized_seconds: f64,
    pub quadrature_seconds: f64,
    /// Largest `|log Z_quadrature − log Z_linearized|` over the contexts.
    pub max_log_normalizer_gap: f64,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.quadrature_seconds / self.linearized_seconds
    }
}

/// In-season step contexts `(day, p_prev)` from one simulated track of the
/// default scenario.
pub fn bench_contexts(params: &ModelParams, feature: &DynamicFeature, count: usize, seed: u64) -> Result<Vec<(i64, Point2)>> {
    let start = (params.season.a.ceil() as i64 + 1).max(1);
    let len = count + 1;
    let track = crate::movement::simulate_exact(params, SubPop::Cs, feature, start - 1, len, seed)?;
    let out: Vec<(i64, Point2)> = track
        .iter()
        .zip(track.iter().skip(1))
        .map(|((_, p), (t, _))| (t, p))
        .filter(|(t, _)| params.season.contains(*t))
        .take(count)
        .collect();
    if out.is_empty() {
        return Err(Error::Param("no in-season days for the benchmark".into()));
    }
    Ok(out)
}

/// Per-evaluation time of the closed-form step log-density versus the
/// `cells`² quadrature normalizer of the exact step density.
pub fn bench(
    params: &ModelParams,
    feature: &DynamicFeature,
    contexts: &[(i64, Point2)],
    evaluations: usize,
    quadratures: usize,
    cells: usize,
) -> Result<BenchReport> {
    if contexts.is_empty() || evaluations == 0 || quadratures == 0 {
        return Err(Error::Param("benchmark needs contexts and at least one evaluation".into()));
    }
    let mut sink = 0.0;
    let t0 = Instant::now();
    for i in 0..evaluations {
        let (t, prev) = contexts[i % contexts.len()];
        let cond = step_conditional(Some(prev), t, params, SubPop::Cs, feature)?;
        sink += cond.gaussian.log_density(prev + Point2::new(1.0, -1.0));
    }
    let linearized_seconds = t0.elapsed().as_secs_f64() / evaluations as f64;
    std::hint::black_box(sink);

    let mut gap: f64 = 0.0;
    let t1 = Instant::now();
    for i in 0..quadratures {
        let (t, prev) = contexts[i % contexts.len()];
        let grid = GridSpec::default_for(prev, params).with_cells(cells);
        let log_z = quad_integrand(Some(prev), t, params, SubPop::Cs, feature, &grid)?.log_integral();
        let lin = step_conditional(Some(prev), t, params, SubPop::Cs, feature)?;
        gap = gap.max((log_z - lin.log_norm).abs());
    }
    let quadrature_seconds = t1.elapsed().as_secs_f64() / quadratures as f64;
    Ok(BenchReport {
        contexts: contexts.len(),
        evaluations,
        quadratures,
        cells,
        linearized_seconds,
        quadrature_seconds,
        max_log_normalizer_gap: gap,
    })
}
