//! Synthetic populations and features for simulation studies.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gausskit::spectral_cov;
use crate::geometry::{DynamicFeature, Point2, Polyline};
use crate::impute::{DeviceTable, Observation};
use crate::movement::{simulate_exact, ModelParams, SubPop, Track};
use crate::rng::{derive_seed, substream};
use crate::rsf::Season;

/// `(ln λ₁, ln λ₂, φ)` of the default CS covariance.
pub const DEFAULT_COV_CS_SPECTRUM: [f64; 3] = [11.512925464970229, 9.210340371976184, 0.1];
/// `(ln λ₁, ln λ₂, φ)` of the default SB covariance.
pub const DEFAULT_COV_SB_SPECTRUM: [f64; 3] = [11.289781913656018, 9.615805480084347, PI - 0.15];
pub const DEFAULT_FEATURE_OFFSET: f64 = 250.0;
pub const DEFAULT_FEATURE_AMPLITUDE: f64 = 50.0;
pub const DEFAULT_FEATURE_HALF_LENGTH: f64 = 1e4;

/// Reference parameter values with centers 1000 km apart.
pub fn default_params() -> ModelParams {
    let [a1, a2, a3] = DEFAULT_COV_CS_SPECTRUM;
    let [b1, b2, b3] = DEFAULT_COV_SB_SPECTRUM;
    ModelParams {
        sigma2: 272.0,
        tau2: 8600.0,
        season: Season { a: 69.0, b: 337.0 },
        center_cs: Point2::new(-500.0, 0.0),
        center_sb: Point2::new(500.0, 0.0),
        cov_cs: spectral_cov(a1, a2, a3),
        cov_sb: spectral_cov(b1, b2, b3),
    }
}

/// Horizontal line `y = offset + amplitude·sin(2πt/365)` spanning `±half_length` km.
pub fn moving_line(days: std::ops::Range<i64>, offset: f64, amplitude: f64, half_length: f64) -> Result<DynamicFeature> {
    let mut f = DynamicFeature::new();
    for t in days {
        let y = offset + amplitude * (2.0 * PI * t as f64 / 365.0).sin();
        f.insert(
            t,
            vec![Polyline::segment(Point2::new(-half_length, y), Point2::new(half_length, y))?],
        );
    }
    Ok(f)
}

/// The acceptance scenario's feature: an edge 250 km north of both centers,
/// oscillating by 50 km over the year.
pub fn default_feature(days: std::ops::Range<i64>) -> Result<DynamicFeature> {
    moving_line(days, DEFAULT_FEATURE_OFFSET, DEFAULT_FEATURE_AMPLITUDE, DEFAULT_FEATURE_HALF_LENGTH)
}

/// Same circle every day.
pub fn static_circle(days: std::ops::Range<i64>, center: Point2, radius: f64, vertices: usize) -> Result<DynamicFeature> {
    Ok(DynamicFeature::constant(
        vec![Polyline::regular_polygon(center, radius, vertices)?],
        days,
    ))
}

pub fn individual_id(i: usize) -> String {
    format!("b{i:03}")
}

/// Start days alternate between early spring and late summer, so both season
/// endpoints fall inside some tracks.
pub fn staggered_start(i: usize) -> i64 {
    let slot = (i / 2) as i64 % 20;
    if i % 2 == 0 {
        4 * slot
    } else {
        150 + 4 * slot
    }
}

/// Even-indexed individuals are CS.
pub fn label_of(i: usize) -> SubPop {
    if i % 2 == 0 {
        SubPop::Cs
    } else {
        SubPop::Sb
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub tracks: Vec<Track>,
    pub labels: Vec<SubPop>,
}

/// Exact simulation of `n` individuals for `len` days each.
pub fn simulate_population(
    params: &ModelParams,
    feature: &DynamicFeature,
    n: usize,
    len: usize,
    seed: u64,
) -> Result<Population> {
    let mut tracks = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let id = individual_id(i);
        let z = label_of(i);
        let mut t = simulate_exact(params, z, feature, staggered_start(i), len, derive_seed(seed, &format!("simulate/{id}")))?;
        t.id = id;
        tracks.push(t);
        labels.push(z);
    }
    Ok(Population { tracks, labels })
}

/// Noisy fixes of a daily track every `min_gap..=max_gap` days.
pub fn observe(
    track: &Track,
    min_gap: i64,
    max_gap: i64,
    device: &str,
    devices: &DeviceTable,
    seed: u64,
) -> Result<Vec<Observation>> {
    if min_gap < 1 || max_gap < min_gap {
        return Err(Error::Param(format!("bad observation gaps {min_gap}..={max_gap}")));
    }
    let sd = devices.sd(device)?;
    let mut rng = substream(seed, &format!("observe/{}", track.id));
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < track.len() {
        let p = track.positions[i];
        let e = Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * sd;
        out.push(Observation {
            id: track.id.clone(),
            t_star: (track.t0 + i as i64) as f64,
            loc: p + e,
            device_class: device.to_string(),
            sd,
        });
        i += rng.random_range(min_gap..=max_gap) as usize;
    }
    if *out.last().map(|o| &o.t_star).unwrap_or(&0.0) < track.last_day() as f64 {
        let p = track.positions[track.len() - 1];
        let e = Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * sd;
        out.push(Observation {
            id: track.id.clone(),
            t_star: track.last_day() as f64,
            loc: p + e,
            device_class: device.to_string(),
            sd,
        });
    }
    Ok(out)
}
