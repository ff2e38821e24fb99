//! Stage one of the two-stage fit: turn irregular, noisy telemetry fixes into
//! daily path draws.
//!
//! Each individual's true position is modelled as planar Brownian motion with
//! per-day variance `q`, observed with isotropic Gaussian error whose standard
//! deviation depends on the device class. The two coordinates are independent
//! under this model and share every variance, so all filtering is scalar.
//! Paths are drawn jointly by forward filtering, backward sampling.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::movement::Track;
use crate::rng::substream;

pub const DEFAULT_MAX_GAP_DAYS: f64 = 14.0;

/// Measurement standard deviation (km) per device class.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceTable(BTreeMap<String, f64>);

impl Default for DeviceTable {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("argos_a".to_string(), 15.0);
        m.insert("argos_b".to_string(), 30.0);
        m.insert("gps".to_string(), 0.05);
        DeviceTable(m)
    }
}

impl DeviceTable {
    pub fn empty() -> Self {
        DeviceTable(BTreeMap::new())
    }

    pub fn insert(&mut self, class: impl Into<String>, sd_km: f64) -> Result<()> {
        if !(sd_km > 0.0 && sd_km.is_finite()) {
            return Err(Error::Config(format!("device sd must be positive, got {sd_km}")));
        }
        self.0.insert(class.into(), sd_km);
        Ok(())
    }

    pub fn sd(&self, class: &str) -> Result<f64> {
        self.0
            .get(class)
            .copied()
            .ok_or_else(|| Error::Data(format!("unknown device class `{class}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: String,
    /// Observation time in (fractional) days.
    pub t_star: f64,
    pub loc: Point2,
    pub device_class: String,
    /// Measurement standard deviation in km.
    pub sd: f64,
}

impl Observation {
    pub fn validate(&self) -> Result<()> {
        if !self.t_star.is_finite() || !self.loc.is_finite() {
            return Err(Error::Data(format!(
                "observation of `{}` at t = {} is not finite",
                self.id, self.t_star
            )));
        }
        if !(self.sd > 0.0 && self.sd.is_finite()) {
            return Err(Error::Data(format!(
                "observation of `{}` at t = {} has non-positive sd {}",
                self.id, self.t_star, self.sd
            )));
        }
        Ok(())
    }
}

/// `K` daily path draws for one contiguous stretch of one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationSet {
    pub id: String,
    /// Index of the gap-separated stretch within the individual's record.
    pub segment: usize,
    pub paths: Vec<Track>,
}

impl ImputationSet {
    pub fn k(&self) -> usize {
        self.paths.len()
    }

    pub fn t0(&self) -> i64 {
        self.paths[0].t0
    }

    pub fn len(&self) -> usize {
        self.paths[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputeConfig {
    /// Observation gaps longer than this start a new segment.
    pub max_gap_days: f64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            max_gap_days: DEFAULT_MAX_GAP_DAYS,
        }
    }
}

/// Filtering grid for one segment: every observation time plus every integer day.
struct Segment<'a> {
    obs: Vec<&'a Observation>,
    /// Sorted distinct node times.
    times: Vec<f64>,
    /// Observations attached to each node.
    node_obs: Vec<Vec<&'a Observation>>,
    first_day: i64,
    last_day: i64,
}

impl<'a> Segment<'a> {
    fn new(mut obs: Vec<&'a Observation>) -> Self {
        obs.sort_by(|a, b| a.t_star.total_cmp(&b.t_star));
        let first_day = obs[0].t_star.ceil() as i64;
        let last_day = obs[obs.len() - 1].t_star.floor() as i64;
        let mut times: Vec<f64> = obs.iter().map(|o| o.t_star).collect();
        times.extend((first_day..=last_day).map(|d| d as f64));
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut node_obs = vec![Vec::new(); times.len()];
        for o in &obs {
            let k = times.partition_point(|&t| t < o.t_star);
            node_obs[k].push(*o);
        }
        Segment {
            obs,
            times,
            node_obs,
            first_day,
            last_day,
        }
    }

    fn has_days(&self) -> bool {
        self.first_day <= self.last_day
    }
}

/// Scalar filtered moments per node, for x and y.
struct Filtered {
    mean: Vec<Point2>,
    var: Vec<f64>,
    log_lik: f64,
}

fn filter(seg: &Segment<'_>, q: f64) -> Filtered {
    let n = seg.times.len();
    let mut mean = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    let mut log_lik = 0.0;
    let mut m = Point2::ORIGIN;
    let mut p = f64::INFINITY;
    for k in 0..n {
        if k > 0 {
            p += q * (seg.times[k] - seg.times[k - 1]);
        }
        for o in &seg.node_obs[k] {
            let r = o.sd * o.sd;
            if p.is_infinite() {
                m = o.loc;
                p = r;
                continue;
            }
            let s = p + r;
            let innov = o.loc - m;
            // two independent coordinates
            log_lik += -(2.0 * std::f64::consts::PI * s).ln() - 0.5 * innov.norm_sq() / s;
            let gain = p / s;
            m = m + innov * gain;
            p *= r / s;
        }
        mean.push(m);
        var.push(p);
    }
    Filtered { mean, var, log_lik }
}

fn segments<'a>(obs: &[&'a Observation], max_gap: f64) -> Vec<Segment<'a>> {
    let mut sorted: Vec<&Observation> = obs.to_vec();
    sorted.sort_by(|a, b| a.t_star.total_cmp(&b.t_star));
    let mut out = Vec::new();
    let mut current: Vec<&Observation> = Vec::new();
    for o in sorted {
        if let Some(last) = current.last() {
            if o.t_star - last.t_star > max_gap {
                out.push(Segment::new(std::mem::take(&mut current)));
            }
        }
        current.push(o);
    }
    if !current.is_empty() {
        out.push(Segment::new(current));
    }
    out
}

fn check_single_id(obs: &[Observation]) -> Result<()> {
    if obs.len() < 2 {
        return Err(Error::CannotSmooth(format!(
            "need at least 2 observations, got {}",
            obs.len()
        )));
    }
    if obs.iter().any(|o| o.id != obs[0].id) {
        return Err(Error::Data(
            "observations for more than one individual passed to the smoother".into(),
        ));
    }
    obs.iter().try_for_each(Observation::validate)
}

fn check_q(q: f64) -> Result<()> {
    if q >= 0.0 && q.is_finite() {
        Ok(())
    } else {
        Err(Error::Param(format!("process variance must be >= 0, got {q}")))
    }
}

/// Smoothing mean and variance (per coordinate) at one integer day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedDay {
    pub day: i64,
    pub mean: Point2,
    pub var: f64,
}

/// Rauch–Tung–Striebel smoothing moments on integer days, one vector per segment.
pub fn smooth(obs: &[Observation], q: f64, config: &ImputeConfig) -> Result<Vec<Vec<SmoothedDay>>> {
    check_single_id(obs)?;
    check_q(q)?;
    let refs: Vec<&Observation> = obs.iter().collect();
    let mut out = Vec::new();
    for seg in segments(&refs, config.max_gap_days) {
        if !seg.has_days() {
            continue;
        }
        let f = filter(&seg, q);
        let n = seg.times.len();
        let mut sm = f.mean.clone();
        let mut sv = f.var.clone();
        for k in (0..n - 1).rev() {
            let pred = f.var[k] + q * (seg.times[k + 1] - seg.times[k]);
            let j = if pred > 0.0 { f.var[k] / pred } else { 1.0 };
            sm[k] = f.mean[k] + (sm[k + 1] - f.mean[k]) * j;
            sv[k] = f.var[k] + j * j * (sv[k + 1] - pred);
        }
        let days = seg
            .times
            .iter()
            .enumerate()
            .filter(|(_, t)| t.fract() == 0.0 && **t >= seg.first_day as f64 && **t <= seg.last_day as f64)
            .map(|(k, t)| SmoothedDay {
                day: *t as i64,
                mean: sm[k],
                var: sv[k],
            })
            .collect();
        out.push(days);
    }
    Ok(out)
}

fn backward_sample<R: Rng + ?Sized>(seg: &Segment<'_>, f: &Filtered, q: f64, rng: &mut R) -> Vec<Point2> {
    let n = seg.times.len();
    let mut draws = vec![Point2::ORIGIN; n];
    let normal = |rng: &mut R| Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    draws[n - 1] = f.mean[n - 1] + normal(rng) * f.var[n - 1].sqrt();
    for k in (0..n - 1).rev() {
        let step = q * (seg.times[k + 1] - seg.times[k]);
        let pred = f.var[k] + step;
        let (mean, var) = if pred > 0.0 {
            let j = f.var[k] / pred;
            (f.mean[k] + (draws[k + 1] - f.mean[k]) * j, f.var[k] * step / pred)
        } else {
            (draws[k + 1], 0.0)
        };
        draws[k] = mean + normal(rng) * var.max(0.0).sqrt();
    }
    draws
}

/// Draw `k` joint daily paths for one individual from the Brownian smoother.
///
/// Returns one [`ImputationSet`] per gap-separated segment that spans at least
/// one integer day. Draw `j` uses the substream `impute/<id>/<j>` of `seed`.
pub fn smooth_and_impute(
    obs: &[Observation],
    k: usize,
    q: f64,
    seed: u64,
    config: &ImputeConfig,
) -> Result<Vec<ImputationSet>> {
    check_single_id(obs)?;
    check_q(q)?;
    if k == 0 {
        return Err(Error::Param("need at least one imputation".into()));
    }
    let id = obs[0].id.clone();
    let refs: Vec<&Observation> = obs.iter().collect();
    let segs: Vec<Segment<'_>> = segments(&refs, config.max_gap_days)
        .into_iter()
        .filter(Segment::has_days)
        .collect();
    if segs.is_empty() {
        return Err(Error::CannotSmooth(format!(
            "observations of `{id}` do not span a whole day"
        )));
    }
    let filtered: Vec<Filtered> = segs.iter().map(|s| filter(s, q)).collect();
    let mut sets: Vec<ImputationSet> = (0..segs.len())
        .map(|s| ImputationSet {
            id: id.clone(),
            segment: s,
            paths: Vec::with_capacity(k),
        })
        .collect();
    for j in 0..k {
        let mut rng = substream(seed, &format!("impute/{id}/{j}"));
        for (s, (seg, f)) in segs.iter().zip(&filtered).enumerate() {
            let draws = backward_sample(seg, f, q, &mut rng);
            let positions: Vec<Point2> = seg
                .times
                .iter()
                .zip(&draws)
                .filter(|(t, _)| t.fract() == 0.0 && **t >= seg.first_day as f64 && **t <= seg.last_day as f64)
                .map(|(_, p)| *p)
                .collect();
            sets[s].paths.push(Track::new(id.clone(), seg.first_day, positions)?);
        }
    }
    debug_assert!(segs.iter().all(|s| !s.obs.is_empty()));
    Ok(sets)
}

/// Group observations by individual id (sorted by id).
pub fn group_by_id(obs: &[Observation]) -> BTreeMap<String, Vec<Observation>> {
    let mut map: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
    for o in obs {
        map.entry(o.id.clone()).or_default().push(o.clone());
    }
    map
}

/// Marginal log-likelihood of the observations under process variance `q`,
/// summed over individuals and segments. The first fix of every segment
/// initializes a diffuse state and contributes nothing.
pub fn process_log_likelihood(obs: &[Observation], q: f64, config: &ImputeConfig) -> Result<f64> {
    check_q(q)?;
    obs.iter().try_for_each(Observation::validate)?;
    let groups = group_by_id(obs);
    let mut total = 0.0;
    for list in groups.values() {
        let refs: Vec<&Observation> = list.iter().collect();
        for seg in segments(&refs, config.max_gap_days) {
            total += filter(&seg, q).log_lik;
        }
    }
    Ok(total)
}

pub const Q_SEARCH_MIN: f64 = 1e-6;
pub const Q_SEARCH_MAX: f64 = 1e7;

/// Maximum-likelihood process variance: a log-spaced scan over
/// `[Q_SEARCH_MIN, Q_SEARCH_MAX]` followed by golden-section refinement in `ln q`.
///
/// `obs` may hold several individuals; their likelihoods are pooled.
pub fn estimate_process_variance(obs: &[Observation], config: &ImputeConfig) -> Result<f64> {
    let groups = group_by_id(obs);
    if !groups.values().any(|g| g.len() >= 2) {
        return Err(Error::CannotSmooth(
            "no individual has two observations to estimate movement from".into(),
        ));
    }
    let ll = |log_q: f64| process_log_likelihood(obs, log_q.exp(), config);
    let (lo, hi) = (Q_SEARCH_MIN.ln(), Q_SEARCH_MAX.ln());
    let n = 64;
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&g| ll(g)).collect::<Result<_>>()?;
    let best = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if best == 0 {
        return Ok(Q_SEARCH_MIN);
    }
    if best == n {
        return Ok(Q_SEARCH_MAX);
    }
    let (mut a, mut b) = (grid[best - 1], grid[best + 1]);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = ll(c)?;
    let mut fd = ll(d)?;
    while b - a > 1e-9 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = ll(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = ll(d)?;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

/// Curvature-based standard error of `ln q̂` (inverse observed information).
pub fn log_q_standard_error(obs: &[Observation], q_hat: f64, config: &ImputeConfig) -> Result<f64> {
    let h = 1e-3;
    let l0 = q_hat.ln();
    let f = |x: f64| process_log_likelihood(obs, x.exp(), config);
    let second = (f(l0 + h)? - 2.0 * f(l0)? + f(l0 - h)?) / (h * h);
    if second < 0.0 {
        Ok((-1.0 / second).sqrt())
    } else {
        Ok(f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ob(t: f64, x: f64, y: f64, sd: f64) -> Observation {
        Observation {
            id: "b1".into(),
            t_star: t,
            loc: Point2::new(x, y),
            device_class: "gps".into(),
            sd,
        }
    }

    fn brownian_obs(q: f64, sd: f64, n: usize, seed: u64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0.0;
        let mut x = Point2::ORIGIN;
        let mut out = Vec::new();
        for _ in 0..n {
            let dt: f64 = rng.random_range(0.2..2.0);
            t += dt;
            let s = (q * dt).sqrt();
            x = x + Point2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * s;
            let e = Point2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * sd;
            let p = x + e;
            out.push(ob(t, p.x, p.y, sd));
        }
        out
    }

    #[test]
    fn single_observation_cannot_be_smoothed() {
        let r = smooth_and_impute(&[ob(0.0, 0.0, 0.0, 1.0)], 3, 10.0, 1, &ImputeConfig::default());
        assert!(matches!(r, Err(Error::CannotSmooth(_))));
    }

    #[test]
    fn noiseless_daily_fixes_are_reproduced() {
        let obs: Vec<_> = (0..10)
            .map(|d| ob(d as f64, 3.0 * d as f64, (d * d) as f64, 1e-6))
            .collect();
        let sets = smooth_and_impute(&obs, 5, 100.0, 4, &ImputeConfig::default()).unwrap();
        assert_eq!(sets.len(), 1);
        let set = &sets[0];
        assert_eq!(set.k(), 5);
        assert_eq!(set.t0(), 0);
        for path in &set.paths {
            for (i, p) in path.positions.iter().enumerate() {
                assert!(p.dist(obs[i].loc) < 0.01);
            }
        }
    }

    #[test]
    fn midpoint_matches_noisy_bridge() {
        let q = 50.0;
        let sd = 3.0;
        let obs = vec![ob(0.0, 0.0, 0.0, sd), ob(2.0, 10.0, -4.0, sd)];
        let days = &smooth(&obs, q, &ImputeConfig::default()).unwrap()[0];
        assert_eq!(days.len(), 3);
        let mid = days[1];
        assert_eq!(mid.day, 1);
        assert!(mid.mean.dist(Point2::new(5.0, -2.0)) < 1e-12);
        // x1 is seen through two independent noisy "looks": s0 with variance
        // q + sd² and s2 with variance q + sd².
        let want = 1.0 / (2.0 / (q + sd * sd));
        assert!((mid.var - want).abs() < 1e-10, "{} vs {want}", mid.var);
    }

    #[test]
    fn draw_variance_matches_smoother() {
        let obs = vec![
            ob(0.0, 0.0, 0.0, 2.0),
            ob(0.5, 1.0, 1.0, 2.0),
            ob(5.3, 20.0, -5.0, 2.0),
            ob(6.0, 22.0, -3.0, 2.0),
        ];
        let q = 40.0;
        let cfg = ImputeConfig::default();
        let days = &smooth(&obs, q, &cfg).unwrap()[0];
        let sets = smooth_and_impute(&obs, 30, q, 17, &cfg).unwrap();
        let day3 = days.iter().position(|d| d.day == 3).unwrap();
        let xs: Vec<f64> = sets[0].paths.iter().map(|p| p.positions[day3].x).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((v / days[day3].var - 1.0).abs() < 0.25, "{v} vs {}", days[day3].var);
    }

    #[test]
    fn draws_center_on_smoothing_mean() {
        let obs = brownian_obs(30.0, 4.0, 40, 3);
        let cfg = ImputeConfig::default();
        let days = &smooth(&obs, 30.0, &cfg).unwrap()[0];
        let k = 1000;
        let sets = smooth_and_impute(&obs, k, 30.0, 8, &cfg).unwrap();
        for (i, d) in days.iter().enumerate().step_by(5) {
            let avg = sets[0].paths.iter().map(|p| p.positions[i].x).sum::<f64>() / k as f64;
            let se = (d.var / k as f64).sqrt();
            assert!((avg - d.mean.x).abs() < 4.0 * se, "day {}: {avg} vs {}", d.day, d.mean.x);
        }
    }

    #[test]
    fn paths_converge_to_precise_fixes() {
        let cfg = ImputeConfig::default();
        let mut last = f64::INFINITY;
        for sd in [1.0, 0.1, 0.01] {
            let obs = vec![ob(0.0, 0.0, 0.0, sd), ob(3.0, 9.0, 3.0, sd), ob(6.0, 0.0, 6.0, sd)];
            let sets = smooth_and_impute(&obs, 20, 25.0, 2, &cfg).unwrap();
            let worst = sets[0]
                .paths
                .iter()
                .map(|p| p.positions[3].dist(Point2::new(9.0, 3.0)))
                .fold(0.0, f64::max);
            assert!(worst < last);
            last = worst;
        }
        assert!(last < 0.1);
    }

    #[test]
    fn long_gaps_split_segments() {
        let obs = vec![
            ob(0.0, 0.0, 0.0, 1.0),
            ob(3.0, 1.0, 0.0, 1.0),
            ob(30.0, 5.0, 5.0, 1.0),
            ob(32.5, 6.0, 5.0, 1.0),
        ];
        let sets = smooth_and_impute(&obs, 2, 10.0, 1, &ImputeConfig::default()).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!((sets[0].t0(), sets[0].len()), (0, 4));
        assert_eq!((sets[1].t0(), sets[1].len()), (30, 3));
        let joined = smooth_and_impute(&obs, 2, 10.0, 1, &ImputeConfig { max_gap_days: 40.0 }).unwrap();
        assert_eq!(joined.len(), 1);
        assert_eq!(joined[0].len(), 33);
    }

    #[test]
    fn imputation_is_seeded() {
        let obs = brownian_obs(20.0, 2.0, 15, 5);
        let cfg = ImputeConfig::default();
        let a = smooth_and_impute(&obs, 3, 20.0, 42, &cfg).unwrap();
        let b = smooth_and_impute(&obs, 3, 20.0, 42, &cfg).unwrap();
        assert_eq!(a, b);
        let c = smooth_and_impute(&obs, 3, 20.0, 43, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn static_truth_drives_q_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let obs: Vec<_> = (0..200)
            .map(|i| {
                ob(
                    i as f64 * 0.7,
                    5.0 * rng.sample::<f64, _>(StandardNormal),
                    5.0 * rng.sample::<f64, _>(StandardNormal),
                    5.0,
                )
            })
            .collect();
        let q = estimate_process_variance(&obs, &ImputeConfig { max_gap_days: 1e9 }).unwrap();
        assert!(q < 0.05, "q = {q}");
    }

    #[test]
    fn recovers_brownian_variance() {
        let obs = brownian_obs(100.0, 5.0, 500, 11);
        let cfg = ImputeConfig::default();
        let q = estimate_process_variance(&obs, &cfg).unwrap();
        assert!(q > 50.0 && q < 200.0, "q = {q}");
        // interior optimum: flat log-likelihood in ln q
        let h = 1e-4;
        let up = process_log_likelihood(&obs, (q.ln() + h).exp(), &cfg).unwrap();
        let down = process_log_likelihood(&obs, (q.ln() - h).exp(), &cfg).unwrap();
        assert!(((up - down) / (2.0 * h)).abs() < 1e-2);
        let se = log_q_standard_error(&obs, q, &cfg).unwrap();
        assert!(se > 0.0 && se < 0.5);
    }
}
