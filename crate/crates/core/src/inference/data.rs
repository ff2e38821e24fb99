//! Daily paths prepared for repeated likelihood evaluation.
//!
//! Everything that does not depend on the parameters is computed once: the
//! tangent line at each step's previous position and the step's day of year.
//! A step's log-density is then a handful of flops.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{nearest_point, tangent_of_projection, DynamicFeature, Mat2, Point2};
use crate::impute::ImputationSet;
use crate::movement::{ModelParams, SubPop, Track};
use crate::rsf::{day_of_year, Season, DAYS_PER_YEAR};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Step {
    pub x: Point2,
    pub prev: Point2,
    pub doy: u16,
    /// Unit normal of the tangent line, and `nᵀm` for its anchor `m`.
    pub normal: Point2,
    pub offset: f64,
    pub has_line: bool,
}

/// One imputed realisation of an individual's record (possibly several
/// gap-separated segments).
#[derive(Debug, Clone, PartialEq)]
pub struct PathData {
    pub(crate) starts: Vec<Point2>,
    /// Steps ordered by day of year.
    pub(crate) steps: Vec<Step>,
    /// `steps[doy_start[d]..doy_start[d + 1]]` fall on day of year `d`.
    pub(crate) doy_start: Vec<u32>,
    /// Mean position, used for initialization.
    pub(crate) mean: Point2,
    pub(crate) mean_sq_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: String,
    pub imputations: Vec<PathData>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    pub individuals: Vec<Individual>,
}

impl PathData {
    pub fn from_segments(segments: &[Track], feature: &DynamicFeature) -> Result<PathData> {
        if segments.is_empty() {
            return Err(Error::Data("path with no segments".into()));
        }
        let mut starts = Vec::new();
        let mut steps = Vec::new();
        let mut sum = Point2::ORIGIN;
        let mut count = 0usize;
        let mut sq = 0.0;
        for track in segments {
            starts.push(track.positions[0]);
            let mut prev: Option<Point2> = None;
            for (t, x) in track.iter() {
                sum = sum + x;
                count += 1;
                if let Some(p) = prev {
                    sq += (x - p).norm_sq();
                    let mut step = Step {
                        x,
                        prev: p,
                        doy: day_of_year(t) as u16,
                        normal: Point2::ORIGIN,
                        offset: 0.0,
                        has_line: false,
                    };
                    if feature.has_day(t) {
                        let day = feature.day(t)?;
                        let line = tangent_of_projection(day, &nearest_point(day, p)?);
                        step.normal = line.normal();
                        step.offset = step.normal.dot(line.anchor);
                        step.has_line = true;
                    }
                    steps.push(step);
                }
                prev = Some(x);
            }
        }
        steps.sort_by_key(|s| s.doy);
        let mut doy_start = vec![0u32; DAYS_PER_YEAR as usize + 1];
        for s in &steps {
            doy_start[s.doy as usize + 1] += 1;
        }
        for d in 0..DAYS_PER_YEAR as usize {
            doy_start[d + 1] += doy_start[d];
        }
        let n_steps = steps.len();
        Ok(PathData {
            starts,
            steps,
            doy_start,
            mean: sum * (1.0 / count as f64),
            mean_sq_step: if n_steps > 0 { sq / n_steps as f64 } else { 0.0 },
        })
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_days(&self) -> usize {
        self.steps.len() + self.starts.len()
    }

    pub(crate) fn steps_on(&self, doy: usize) -> &[Step] {
        &self.steps[self.doy_start[doy] as usize..self.doy_start[doy + 1] as usize]
    }
}

impl FitData {
    /// One path per individual (no imputation uncertainty).
    pub fn from_tracks(tracks: &[Track], feature: &DynamicFeature) -> Result<FitData> {
        let mut by_id: BTreeMap<&str, Vec<Track>> = BTreeMap::new();
        for t in tracks {
            by_id.entry(t.id.as_str()).or_default().push(t.clone());
        }
        let mut individuals = Vec::with_capacity(by_id.len());
        for (id, mut segs) in by_id {
            segs.sort_by_key(|t| t.t0);
            individuals.push(Individual {
                id: id.to_string(),
                imputations: vec![PathData::from_segments(&segs, feature)?],
            });
        }
        FitData::new(individuals)
    }

    /// Imputation `k` of an individual joins draw `k` of each of its segments.
    pub fn from_imputations(sets: &[ImputationSet], feature: &DynamicFeature) -> Result<FitData> {
        let mut by_id: BTreeMap<&str, Vec<&ImputationSet>> = BTreeMap::new();
        for s in sets {
            by_id.entry(s.id.as_str()).or_default().push(s);
        }
        let mut individuals = Vec::with_capacity(by_id.len());
        for (id, mut segs) in by_id {
            segs.sort_by_key(|s| s.segment);
            let k = segs[0].k();
            if segs.iter().any(|s| s.k() != k || s.is_empty()) {
                return Err(Error::Data(format!(
                    "segments of `{id}` carry different numbers of imputations"
                )));
            }
            let imputations = (0..k)
                .map(|j| {
                    let tracks: Vec<Track> = segs.iter().map(|s| s.paths[j].clone()).collect();
                    PathData::from_segments(&tracks, feature)
                })
                .collect::<Result<Vec<_>>>()?;
            individuals.push(Individual {
                id: id.to_string(),
                imputations,
            });
        }
        FitData::new(individuals)
    }

    pub fn new(individuals: Vec<Individual>) -> Result<FitData> {
        if let Some(ind) = individuals.iter().find(|i| i.imputations.is_empty()) {
            return Err(Error::Data(format!("individual `{}` has no imputations", ind.id)));
        }
        Ok(FitData { individuals })
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.individuals.iter().map(|i| i.id.clone()).collect()
    }
}

/// Label-specific constants of the step density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ClassTerms {
    pub center: Point2,
    pub prec: Mat2,
    /// Log-density of the attraction Gaussian at its own mean.
    pub start_log_norm: f64,
}

impl ClassTerms {
    pub fn new(center: Point2, cov: &Mat2) -> Result<ClassTerms> {
        let det = cov.det();
        let prec = cov
            .inverse()
            .filter(|_| det > 0.0 && det.is_finite())
            .ok_or_else(|| Error::Param(format!("covariance not positive definite: {cov:?}")))?;
        Ok(ClassTerms {
            center,
            prec: prec.symmetrized(),
            start_log_norm: -LN_2PI - 0.5 * det.ln(),
        })
    }
}

/// Parameter-dependent constants for fast evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Evaluator {
    pub inv_sigma2: f64,
    pub inv_tau2: f64,
    pub in_season: [bool; DAYS_PER_YEAR as usize],
    /// Indexed by `SubPop::z()`.
    pub classes: [ClassTerms; 2],
}

pub(crate) fn season_mask(season: &Season) -> [bool; DAYS_PER_YEAR as usize] {
    let mut mask = [false; DAYS_PER_YEAR as usize];
    for (d, m) in mask.iter_mut().enumerate() {
        *m = season.contains(d as i64);
    }
    mask
}

impl Evaluator {
    pub fn new(params: &ModelParams) -> Result<Evaluator> {
        Ok(Evaluator {
            inv_sigma2: 1.0 / params.sigma2,
            inv_tau2: 1.0 / params.tau2,
            in_season: season_mask(&params.season),
            classes: [
                ClassTerms::new(params.center_sb, &params.cov_sb)?,
                ClassTerms::new(params.center_cs, &params.cov_cs)?,
            ],
        })
    }

    #[inline]
    pub fn step(&self, s: &Step, c: &ClassTerms, in_season: bool) -> f64 {
        let p = &c.prec;
        let dx = s.x - c.center;
        let dp = s.x - s.prev;
        let mut l00 = p.m00 + self.inv_sigma2;
        let mut l01 = p.m01;
        let mut l11 = p.m11 + self.inv_sigma2;
        let mut r0 = p.m00 * dx.x + p.m01 * dx.y + self.inv_sigma2 * dp.x;
        let mut r1 = p.m01 * dx.x + p.m11 * dx.y + self.inv_sigma2 * dp.y;
        if in_season {
            if !s.has_line {
                return f64::NEG_INFINITY;
            }
            let k = self.inv_tau2;
            let n = s.normal;
            l00 += k * n.x * n.x;
            l01 += k * n.x * n.y;
            l11 += k * n.y * n.y;
            let e = k * (n.dot(s.x) - s.offset);
            r0 += e * n.x;
            r1 += e * n.y;
        }
        let det = l00 * l11 - l01 * l01;
        let q = (l11 * r0 * r0 - 2.0 * l01 * r0 * r1 + l00 * r1 * r1) / det;
        -LN_2PI + 0.5 * det.ln() - 0.5 * q
    }

    #[inline]
    pub fn start(&self, x: Point2, c: &ClassTerms) -> f64 {
        c.start_log_norm - 0.5 * c.prec.quad_form(x - c.center)
    }

    pub fn path(&self, path: &PathData, z: SubPop) -> f64 {
        let c = &self.classes[z.z() as usize];
        let mut total = 0.0;
        for &x in &path.starts {
            total += self.start(x, c);
        }
        for s in &path.steps {
            total += self.step(s, c, self.in_season[s.doy as usize]);
        }
        total
    }

    /// Change in a path's log-likelihood when the season mask changes from
    /// `self.in_season` to `other` (only differing days are visited).
    pub fn season_delta(&self, path: &PathData, z: SubPop, other: &[bool; DAYS_PER_YEAR as usize], days: &[usize]) -> f64 {
        let c = &self.classes[z.z() as usize];
        let mut delta = 0.0;
        for &d in days {
            for s in path.steps_on(d) {
                delta += self.step(s, c, other[d]) - self.step(s, c, self.in_season[d]);
            }
        }
        delta
    }
}

/// Days of year whose season membership differs between two masks.
pub(crate) fn mask_diff(a: &[bool; DAYS_PER_YEAR as usize], b: &[bool; DAYS_PER_YEAR as usize]) -> Vec<usize> {
    (0..DAYS_PER_YEAR as usize).filter(|&d| a[d] != b[d]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyline;
    use crate::movement::{log_path_likelihood, simulate_exact};

    fn params() -> ModelParams {
        ModelParams {
            sigma2: 272.0,
            tau2: 8600.0,
            season: Season::new(69.0, 337.0).unwrap(),
            center_cs: Point2::new(-500.0, 0.0),
            center_sb: Point2::new(500.0, 20.0),
            cov_cs: Mat2::new(1e5, 3e3, 3e3, 1e4),
            cov_sb: Mat2::new(8e4, -2e3, -2e3, 1.5e4),
        }
    }

    fn wavy_feature() -> DynamicFeature {
        let mut f = DynamicFeature::new();
        for t in 0..800 {
            let y0 = 40.0 * (t as f64 * 0.05).sin();
            let verts = (0..=40)
                .map(|i| {
                    let x = -2000.0 + 100.0 * i as f64;
                    Point2::new(x, y0 + 30.0 * (x / 300.0).sin())
                })
                .collect();
            f.insert(t, vec![Polyline::new(verts).unwrap()]);
        }
        f
    }

    #[test]
    fn fast_path_matches_composed_factors() {
        let f = wavy_feature();
        let p = params();
        let ev = Evaluator::new(&p).unwrap();
        for (z, t0, seed) in [(SubPop::Cs, 40, 1), (SubPop::Sb, 300, 2)] {
            let track = simulate_exact(&p, z, &f, t0, 120, seed).unwrap();
            let data = PathData::from_segments(std::slice::from_ref(&track), &f).unwrap();
            for label in [SubPop::Cs, SubPop::Sb] {
                let slow = log_path_likelihood(&track, &p, label, &f).unwrap();
                let fast = ev.path(&data, label);
                assert!((slow - fast).abs() < 1e-9 * slow.abs(), "{slow} vs {fast}");
            }
        }
    }

    #[test]
    fn season_delta_matches_full_recompute() {
        let f = wavy_feature();
        let p = params();
        let track = simulate_exact(&p, SubPop::Cs, &f, 10, 400, 5).unwrap();
        let data = PathData::from_segments(&[track], &f).unwrap();
        let ev = Evaluator::new(&p).unwrap();
        let q = ModelParams {
            season: Season::new(80.5, 300.2).unwrap(),
            ..p
        };
        let ev2 = Evaluator::new(&q).unwrap();
        let days = mask_diff(&ev.in_season, &ev2.in_season);
        assert_eq!(days.len(), (70..=80).count() + (301..=336).count());
        let delta = ev.season_delta(&data, SubPop::Cs, &ev2.in_season, &days);
        let want = ev2.path(&data, SubPop::Cs) - ev.path(&data, SubPop::Cs);
        assert!((delta - want).abs() < 1e-8);
    }

    #[test]
    fn missing_feature_in_season_is_impossible() {
        let f = DynamicFeature::constant(
            vec![Polyline::segment(Point2::new(-1e4, 0.0), Point2::new(1e4, 0.0)).unwrap()],
            0..100,
        );
        let track = Track::new("x", 95, vec![Point2::new(0.0, 1.0); 10]).unwrap();
        let data = PathData::from_segments(&[track], &f).unwrap();
        let ev = Evaluator::new(&params()).unwrap();
        assert_eq!(ev.path(&data, SubPop::Cs), f64::NEG_INFINITY);
    }

    #[test]
    fn segments_restart_with_attraction_only() {
        let f = wavy_feature();
        let p = params();
        let a = Track::new("x", 10, vec![Point2::new(-400.0, 5.0), Point2::new(-390.0, 9.0)]).unwrap();
        let b = Track::new("x", 40, vec![Point2::new(-300.0, 5.0), Point2::new(-310.0, 0.0)]).unwrap();
        let joined = PathData::from_segments(&[a.clone(), b.clone()], &f).unwrap();
        let ev = Evaluator::new(&p).unwrap();
        let want = log_path_likelihood(&a, &p, SubPop::Cs, &f).unwrap()
            + log_path_likelihood(&b, &p, SubPop::Cs, &f).unwrap();
        assert!((ev.path(&joined, SubPop::Cs) - want).abs() < 1e-9);
        assert_eq!(joined.num_days(), 4);
    }
}
