//! Daily step model: a sub-population attraction term, a Gaussian
//! availability kernel around yesterday's position, and seasonal selection
//! toward the feature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gausskit::{compose, line_factor, Composed, GaussianFactor, ProperGaussian};
use crate::geometry::{DynamicFeature, Mat2, OrientedLine, Point2, Polyline};
use crate::rsf::{linearize, rsf_seasonal, Season};

/// Proposal budget per step before the exact sampler gives up.
pub const MAX_PROPOSALS_PER_STEP: u64 = 10_000_000;
/// Proposals from the plain envelope before switching to the line envelope.
pub const PLAIN_PROPOSALS_PER_STEP: u64 = 100_000;

/// Daily positions of one individual over consecutive days starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: String,
    pub t0: i64,
    pub positions: Vec<Point2>,
}

impl Track {
    pub fn new(id: impl Into<String>, t0: i64, positions: Vec<Point2>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Data("track has no positions".into()));
        }
        if let Some(p) = positions.iter().find(|p| !p.is_finite()) {
            return Err(Error::Data(format!("non-finite track position {p:?}")));
        }
        Ok(Track {
            id: id.into(),
            t0,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last_day(&self) -> i64 {
        self.t0 + self.positions.len() as i64 - 1
    }

    /// `(day, position)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (i64, Point2)> + '_ {
        self.positions
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.t0 + i as i64, p))
    }
}

/// Sub-population membership; `z = 1` is CS, `z = 0` is SB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubPop {
    Sb,
    Cs,
}

impl SubPop {
    pub fn from_z(z: u8) -> Result<Self> {
        match z {
            0 => Ok(SubPop::Sb),
            1 => Ok(SubPop::Cs),
            _ => Err(Error::Param(format!("label must be 0 or 1, got {z}"))),
        }
    }

    pub fn z(self) -> u8 {
        match self {
            SubPop::Sb => 0,
            SubPop::Cs => 1,
        }
    }

    pub fn flip(self) -> SubPop {
        match self {
            SubPop::Sb => SubPop::Cs,
            SubPop::Cs => SubPop::Sb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Daily step variance σ_μ² (km²).
    pub sigma2: f64,
    /// Selection range τ² (km²).
    pub tau2: f64,
    pub season: Season,
    pub center_cs: Point2,
    pub center_sb: Point2,
    pub cov_cs: Mat2,
    pub cov_sb: Mat2,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Param(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return Err(Error::Param(format!("tau2 must be positive, got {}", self.tau2)));
        }
        if !self.season.is_valid() {
            return Err(Error::Param(format!("invalid season {:?}", self.season)));
        }
        ProperGaussian::new(self.center_cs, self.cov_cs)?;
        ProperGaussian::new(self.center_sb, self.cov_sb)?;
        Ok(())
    }

    pub fn center(&self, z: SubPop) -> Point2 {
        match z {
            SubPop::Cs => self.center_cs,
            SubPop::Sb => self.center_sb,
        }
    }

    pub fn cov(&self, z: SubPop) -> Mat2 {
        match z {
            SubPop::Cs => self.cov_cs,
            SubPop::Sb => self.cov_sb,
        }
    }

    pub fn attraction(&self, z: SubPop) -> Result<GaussianFactor> {
        GaussianFactor::normal(self.center(z), self.cov(z))
    }

    pub fn availability(&self, p_prev: Point2) -> Result<GaussianFactor> {
        GaussianFactor::normal(p_prev, Mat2::scaled_identity(self.sigma2))
    }

    /// The same model with the two sub-populations relabelled.
    pub fn swapped(&self) -> ModelParams {
        ModelParams {
            center_cs: self.center_sb,
            center_sb: self.center_cs,
            cov_cs: self.cov_sb,
            cov_sb: self.cov_cs,
            ..*self
        }
    }
}

/// Factors of the step density for day `t`; `p_prev` is `None` on the first day.
pub fn step_factors(
    p_prev: Option<Point2>,
    t: i64,
    params: &ModelParams,
    z: SubPop,
    feature: &DynamicFeature,
) -> Result<Vec<GaussianFactor>> {
    let mut factors = Vec::with_capacity(3);
    factors.push(params.attraction(z)?);
    if let Some(prev) = p_prev {
        factors.push(params.availability(prev)?);
        if let Some(line) = linearize(prev, feature, params.tau2, t, &params.season)? {
            factors.push(line);
        }
    }
    Ok(factors)
}

/// Closed-form (tangent-line) conditional density of the position on day `t`.
pub fn step_conditional(
    p_prev: Option<Point2>,
    t: i64,
    params: &ModelParams,
    z: SubPop,
    feature: &DynamicFeature,
) -> Result<Composed> {
    let factors = step_factors(p_prev, t, params, z, feature)?;
    // The attraction factor is proper, so this cannot fail for valid params.
    compose(&factors)
}

/// Sum of normalized step log-densities along the track.
pub fn log_path_likelihood(
    track: &Track,
    params: &ModelParams,
    z: SubPop,
    feature: &DynamicFeature,
) -> Result<f64> {
    let mut total = 0.0;
    let mut prev = None;
    for (t, p) in track.iter() {
        let cond = step_conditional(prev, t, params, z, feature)?;
        total += cond.gaussian.log_density(p);
        prev = Some(p);
    }
    Ok(total)
}

/// Draw from the exact step density by rejection: propose from the product of
/// the attraction and availability Gaussians, accept with the selection weight.
///
/// Returns the draw and the number of proposals used.
pub fn sample_step_exact<R: Rng + ?Sized>(
    p_prev: Option<Point2>,
    t: i64,
    params: &ModelParams,
    z: SubPop,
    feature: &DynamicFeature,
    rng: &mut R,
) -> Result<(Point2, u64)> {
    let mut factors = vec![params.attraction(z)?];
    let Some(prev) = p_prev else {
        return Ok((compose(&factors)?.gaussian.sample(rng), 1));
    };
    factors.push(params.availability(prev)?);
    let proposal = compose(&factors)?.gaussian;
    if !params.season.contains(t) {
        return Ok((proposal.sample(rng), 1));
    }
    let day = feature.day(t)?;
    for n in 1..=PLAIN_PROPOSALS_PER_STEP {
        let x = proposal.sample(rng);
        let w = rsf_seasonal(x, feature, params.tau2, t, &params.season)?;
        if rng.random::<f64>() < w {
            return Ok((x, n));
        }
    }
    let envelope = LineEnvelope::new(&factors, day, params.tau2)?;
    for n in 1..=MAX_PROPOSALS_PER_STEP {
        let x = envelope.sample(rng);
        let w = rsf_seasonal(x, feature, params.tau2, t, &params.season)?;
        if rng.random::<f64>() * envelope.bound(x) < w {
            return Ok((x, PLAIN_PROPOSALS_PER_STEP + n));
        }
    }
    Err(Error::RejectionStalled {
        day: t,
        proposals: PLAIN_PROPOSALS_PER_STEP + MAX_PROPOSALS_PER_STEP,
        accepted: 0,
        distance_km: crate::geometry::nearest_point(day, prev)?.dist,
    })
}

/// Mixture over feature segments of the base factors times each segment's
/// supporting-line factor.
///
/// Distance to a segment is at least distance to its supporting line, so
/// the selection weight is bounded by the sum of line weights and rejection
/// against that sum stays exact. Far from the feature this accepts at a
/// useful rate where the plain envelope does not.
struct LineEnvelope {
    lines: Vec<OrientedLine>,
    components: Vec<ProperGaussian>,
    cumulative: Vec<f64>,
    tau2: f64,
}

impl LineEnvelope {
    fn new(base: &[GaussianFactor], day: &[Polyline], tau2: f64) -> Result<Self> {
        let mut lines = Vec::new();
        let mut components = Vec::new();
        let mut log_w = Vec::new();
        for seg in day.iter().flat_map(|l| l.vertices().windows(2)) {
            let dir = seg[1] - seg[0];
            if dir.norm() == 0.0 {
                continue;
            }
            let line = OrientedLine::through(seg[0], dir);
            let mut f = base.to_vec();
            f.push(line_factor(&line, tau2)?);
            let c = compose(&f)?;
            lines.push(line);
            components.push(c.gaussian);
            log_w.push(c.log_norm);
        }
        if lines.is_empty() {
            return Err(Error::Param("feature has no segments".into()));
        }
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        let cumulative = log_w
            .iter()
            .map(|l| {
                acc += (l - top).exp();
                acc
            })
            .collect();
        Ok(LineEnvelope {
            lines,
            components,
            cumulative,
            tau2,
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        let total = self.cumulative[self.cumulative.len() - 1];
        let u = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.components.len() - 1);
        self.components[k].sample(rng)
    }

    fn bound(&self, x: Point2) -> f64 {
        self.lines
            .iter()
            .map(|l| (-l.distance(x).powi(2) / (2.0 * self.tau2)).exp())
            .sum()
    }
}

/// Draw from the tangent-line conditional.
pub fn sample_step_linearized<R: Rng + ?Sized>(
    p_prev: Option<Point2>,
    t: i64,
    params: &ModelParams,
    z: SubPop,
    feature: &DynamicFeature,
    rng: &mut R,
) -> Result<Point2> {
    Ok(step_conditional(p_prev, t, params, z, feature)?
        .gaussian
        .sample(rng))
}

/// Simulate `len` days from the exact model, starting on day `t0`.
pub fn simulate_exact(
    params: &ModelParams,
    z: SubPop,
    feature: &DynamicFeature,
    t0: i64,
    len: usize,
    seed: u64,
) -> Result<Track> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(len);
    let mut prev = None;
    for i in 0..len {
        let t = t0 + i as i64;
        let (x, _) = sample_step_exact(prev, t, params, z, feature, &mut rng)?;
        positions.push(x);
        prev = Some(x);
    }
    Track::new("sim", t0, positions)
}

/// Simulate `len` days from the tangent-line model, starting on day `t0`.
pub fn simulate_linearized(
    params: &ModelParams,
    z: SubPop,
    feature: &DynamicFeature,
    t0: i64,
    len: usize,
    seed: u64,
) -> Result<Track> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(len);
    let mut prev = None;
    for i in 0..len {
        let t = t0 + i as i64;
        let x = sample_step_linearized(prev, t, params, z, feature, &mut rng)?;
        positions.push(x);
        prev = Some(x);
    }
    Track::new("sim", t0, positions)
}
