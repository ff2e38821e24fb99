//! The curve on which the two sub-population Gaussians have equal density,
//! and its posterior band.

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BBox, Mat2, Point2, Polyline};
use crate::inference::{CovSpectral, Draw};

/// `A x² + B xy + C y² + D x + E y + F`, equal to `log N_CS(x) − log N_SB(x)`
/// for conics built by [`equal_density_conic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Conic {
    pub fn eval(&self, p: Point2) -> f64 {
        let (x, y) = (p.x, p.y);
        self.a * x * x + self.b * x * y + self.c * y * y + self.d * x + self.e * y + self.f
    }

    pub fn gradient(&self, p: Point2) -> Point2 {
        Point2::new(
            2.0 * self.a * p.x + self.b * p.y + self.d,
            self.b * p.x + 2.0 * self.c * p.y + self.e,
        )
    }

    pub fn is_linear(&self) -> bool {
        self.a == 0.0 && self.b == 0.0 && self.c == 0.0
    }

    pub fn negated(&self) -> Conic {
        Conic {
            a: -self.a,
            b: -self.b,
            c: -self.c,
            d: -self.d,
            e: -self.e,
            f: -self.f,
        }
    }

    /// Real roots `t` of `eval(origin + t·dir) = 0`, ascending.
    pub fn ray_roots(&self, origin: Point2, dir: Point2) -> Vec<f64> {
        let qa = self.a * dir.x * dir.x + self.b * dir.x * dir.y + self.c * dir.y * dir.y;
        let qb = self.gradient(origin).dot(dir);
        let qc = self.eval(origin);
        let scale = qb.abs().max(qc.abs()).max(f64::MIN_POSITIVE);
        if qa.abs() <= 1e-14 * scale {
            if qb == 0.0 {
                return Vec::new();
            }
            return vec![-qc / qb];
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return Vec::new();
        }
        // stable quadratic formula
        let s = -0.5 * (qb + qb.signum() * disc.sqrt());
        let mut roots = if s == 0.0 { vec![0.0] } else { vec![s / qa, qc / s] };
        roots.sort_by(f64::total_cmp);
        roots
    }

    /// Newton projection onto the zero set along the gradient.
    pub fn refine(&self, mut p: Point2) -> Point2 {
        for _ in 0..50 {
            let v = self.eval(p);
            let g = self.gradient(p);
            let gg = g.norm_sq();
            if gg == 0.0 {
                break;
            }
            let next = p - g * (v / gg);
            let moved = next.dist(p);
            p = next;
            if moved <= 1e-13 * (1.0 + p.norm()) {
                break;
            }
        }
        p
    }
}

fn precision(cov: &Mat2) -> Result<(Mat2, f64)> {
    let det = cov.det();
    match cov.inverse() {
        Some(p) if det > 0.0 && det.is_finite() => Ok((p.symmetrized(), det)),
        _ => Err(Error::Param(format!("covariance not positive definite: {cov:?}"))),
    }
}

/// Zero set of `log N(x; c_cs, Σ_cs) − log N(x; c_sb, Σ_sb)`.
pub fn equal_density_conic(center_cs: Point2, cov_cs: &Mat2, center_sb: Point2, cov_sb: &Mat2) -> Result<Conic> {
    let (p1, det1) = precision(cov_cs)?;
    let (p2, det2) = precision(cov_sb)?;
    let dq = p2 - p1;
    let lin = p1.mul_vec(center_cs) - p2.mul_vec(center_sb);
    let conic = Conic {
        a: 0.5 * dq.m00,
        b: 0.5 * (dq.m01 + dq.m10),
        c: 0.5 * dq.m11,
        d: lin.x,
        e: lin.y,
        f: -0.5 * p1.quad_form(center_cs) + 0.5 * p2.quad_form(center_sb) + 0.5 * (det2 / det1).ln(),
    };
    let coeff_scale = p1.max_abs().max(p2.max_abs());
    let lin_scale = coeff_scale * (1.0 + center_cs.norm().max(center_sb.norm()));
    let quad_zero = dq.max_abs() <= 1e-12 * coeff_scale;
    let lin_zero = lin.norm() <= 1e-12 * lin_scale;
    if quad_zero && lin_zero {
        return Err(Error::DegenerateBoundary);
    }
    if quad_zero {
        // exact cancellation so that equal covariances give a straight line
        return Ok(Conic { a: 0.0, b: 0.0, c: 0.0, ..conic });
    }
    Ok(conic)
}

/// Contour of `conic = 0` inside `window` by marching squares on a grid of
/// cell size about `step`, with every vertex Newton-refined onto the curve.
///
/// Returns one polyline per connected piece (closed pieces repeat their
/// first vertex); empty if the curve misses the window.
pub fn trace_conic(conic: &Conic, window: &BBox, step: f64) -> Result<Vec<Polyline>> {
    let w = window.max.x - window.min.x;
    let h = window.max.y - window.min.y;
    if !(step > 0.0) || !(w > 0.0) || !(h > 0.0) {
        return Err(Error::Param(format!("bad tracing window {window:?} or step {step}")));
    }
    let nx = ((w / step).ceil() as usize).max(1);
    let ny = ((h / step).ceil() as usize).max(1);
    if (nx + 1) * (ny + 1) > 50_000_000 {
        return Err(Error::Param("tracing grid too fine for the window".into()));
    }
    let (dx, dy) = (w / nx as f64, h / ny as f64);
    let node = |i: usize, j: usize| Point2::new(window.min.x + i as f64 * dx, window.min.y + j as f64 * dy);
    let vals: Vec<f64> = (0..=ny)
        .flat_map(|j| (0..=nx).map(move |i| (i, j)))
        .map(|(i, j)| conic.eval(node(i, j)))
        .collect();
    let val = |i: usize, j: usize| vals[j * (nx + 1) + i];
    let pos = |v: f64| v >= 0.0;

    // Edge keys: (0, i, j) joins (i,j)-(i+1,j); (1, i, j) joins (i,j)-(i,j+1).
    let mut points: HashMap<(u8, usize, usize), Point2> = HashMap::new();
    let mut crossing = |key: (u8, usize, usize)| -> Point2 {
        *points.entry(key).or_insert_with(|| {
            let (k, i, j) = key;
            let (p0, p1, v0, v1) = if k == 0 {
                (node(i, j), node(i + 1, j), val(i, j), val(i + 1, j))
            } else {
                (node(i, j), node(i, j + 1), val(i, j), val(i, j + 1))
            };
            let t = v0 / (v0 - v1);
            conic.refine(p0 + (p1 - p0) * t)
        })
    };
    let mut segments: Vec<((u8, usize, usize), (u8, usize, usize))> = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let s = [pos(val(i, j)), pos(val(i + 1, j)), pos(val(i + 1, j + 1)), pos(val(i, j + 1))];
            // bottom, right, top, left
            let edges = [(0u8, i, j), (1u8, i + 1, j), (0u8, i, j + 1), (1u8, i, j)];
            let cut: Vec<usize> = (0..4).filter(|&e| s[e] != s[(e + 1) % 4]).collect();
            match cut.len() {
                2 => segments.push((edges[cut[0]], edges[cut[1]])),
                4 => {
                    let center = node(i, j) + Point2::new(0.5 * dx, 0.5 * dy);
                    if pos(conic.eval(center)) == s[0] {
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[0], edges[3]));
                        segments.push((edges[1], edges[2]));
                    }
                }
                _ => {}
            }
        }
    }
    for (a, b) in &segments {
        crossing(*a);
        crossing(*b);
    }
    chain_segments(&segments, &points)
}

type EdgeKey = (u8, usize, usize);

fn chain_segments(segments: &[(EdgeKey, EdgeKey)], points: &HashMap<EdgeKey, Point2>) -> Result<Vec<Polyline>> {
    let mut adj: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segments.iter().enumerate() {
        adj.entry(*a).or_default().push(s);
        adj.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    // open chains start at edges with one segment; then remaining loops
    let mut starts: Vec<EdgeKey> = adj.iter().filter(|(_, v)| v.len() == 1).map(|(k, _)| *k).collect();
    starts.sort();
    let mut loop_starts: Vec<EdgeKey> = segments.iter().map(|(a, _)| *a).collect();
    loop_starts.sort();
    for start in starts.into_iter().chain(loop_starts) {
        if adj[&start].iter().all(|&s| used[s]) {
            continue;
        }
        let mut keys = vec![start];
        let mut cur = start;
        while let Some(&s) = adj[&cur].iter().find(|&&s| !used[s]) {
            used[s] = true;
            let (a, b) = segments[s];
            cur = if a == cur { b } else { a };
            keys.push(cur);
        }
        let mut verts: Vec<Point2> = Vec::with_capacity(keys.len());
        for k in &keys {
            let p = points[k];
            if verts.last().is_none_or(|q| q.dist(p) > 1e-9) {
                verts.push(p);
            }
        }
        let closed = keys.len() > 2 && keys.first() == keys.last();
        if closed && verts.len() > 1 && verts[0].dist(*verts.last().unwrap()) > 0.0 {
            verts.push(verts[0]);
        }
        if verts.len() >= 2 {
            out.push(Polyline::new(verts)?);
        }
    }
    Ok(out)
}

/// Centers and covariances of both sub-populations for one posterior draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPair {
    pub center_cs: Point2,
    pub cov_cs: CovSpectral,
    pub center_sb: Point2,
    pub cov_sb: CovSpectral,
}

impl GaussianPair {
    pub fn from_draw(d: &Draw) -> GaussianPair {
        GaussianPair {
            center_cs: d.center_cs,
            cov_cs: d.cov_cs.canonical(),
            center_sb: d.center_sb,
            cov_sb: d.cov_sb.canonical(),
        }
    }

    pub fn conic(&self) -> Result<Conic> {
        equal_density_conic(self.center_cs, &self.cov_cs.matrix(), self.center_sb, &self.cov_sb.matrix())
    }
}

/// Coordinate-wise median of a set of angles in `[0, π)`, taken after
/// unwrapping around their axial mean.
fn axial_median(angles: &[f64]) -> f64 {
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + (2.0 * a).sin(), c + (2.0 * a).cos()));
    let mean = 0.5 * s.atan2(c);
    let unwrapped: Vec<f64> = angles
        .iter()
        .map(|a| mean + (a - mean + 0.5 * PI).rem_euclid(PI) - 0.5 * PI)
        .collect();
    crate::geometry::normalize_line_angle(crate::stats::quantiles(&unwrapped, &[0.5])[0])
}

/// Coordinate-wise posterior median of centers and spectral parameters.
pub fn median_pair(draws: &[GaussianPair]) -> Result<GaussianPair> {
    if draws.is_empty() {
        return Err(Error::Data("no posterior draws for the boundary".into()));
    }
    let med = |f: &dyn Fn(&GaussianPair) -> f64| {
        crate::stats::quantiles(&draws.iter().map(f).collect::<Vec<_>>(), &[0.5])[0]
    };
    let spectral = |get: &dyn Fn(&GaussianPair) -> CovSpectral| CovSpectral {
        log_eig1: med(&|d| get(d).log_eig1),
        log_eig2: med(&|d| get(d).log_eig2),
        angle: axial_median(&draws.iter().map(|d| get(d).angle).collect::<Vec<_>>()),
    };
    Ok(GaussianPair {
        center_cs: Point2::new(med(&|d| d.center_cs.x), med(&|d| d.center_cs.y)),
        cov_cs: spectral(&|d| d.cov_cs),
        center_sb: Point2::new(med(&|d| d.center_sb.x), med(&|d| d.center_sb.y)),
        cov_sb: spectral(&|d| d.cov_sb),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexBand {
    pub line: usize,
    pub point: Point2,
    /// Unit normal, pointing to the CS side.
    pub normal: Point2,
    /// Signed offsets (km, along `normal`) bounding the 95% band.
    pub lo: f64,
    pub hi: f64,
    pub used: usize,
    pub excluded: usize,
}

impl VertexBand {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySummary {
    pub central: Vec<Polyline>,
    pub vertices: Vec<VertexBand>,
    pub central_pair: GaussianPair,
}

impl BoundarySummary {
    pub fn total_excluded(&self) -> usize {
        self.vertices.iter().map(|v| v.excluded).sum()
    }
}

/// Symmetric-rank 95% interval: the `k`-th smallest and `k`-th largest
/// values with `k = max(1, ⌊0.025·n⌋)`.
pub fn rank_interval(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let k = ((0.025 * n as f64).floor() as usize).max(1);
    (values[k - 1], values[n - k])
}

/// Central boundary from the median pair, and per-vertex 95% bands from the
/// signed distance, along the central normal, to each draw's boundary.
///
/// A draw whose boundary does not cross the normal line within the window's
/// diagonal is excluded at that vertex and counted.
pub fn summarize_boundary(draws: &[GaussianPair], window: &BBox, step: f64) -> Result<BoundarySummary> {
    let central_pair = median_pair(draws)?;
    let central_conic = central_pair.conic()?;
    let central = trace_conic(&central_conic, window, step)?;
    let conics: Vec<Option<Conic>> = draws.iter().map(|d| d.conic().ok()).collect();
    let reach = window.min.dist(window.max);
    let points: Vec<(usize, Point2)> = central
        .iter()
        .enumerate()
        .flat_map(|(li, line)| {
            let verts = line.vertices();
            let count = if line.is_closed() { verts.len() - 1 } else { verts.len() };
            verts[..count].iter().map(move |&v| (li, v))
        })
        .collect();
    let vertices = points
        .into_par_iter()
        .map(|(li, v)| {
            let g = central_conic.gradient(v);
            let normal = if g.norm() > 0.0 { g * (1.0 / g.norm()) } else { Point2::new(1.0, 0.0) };
            let mut offsets: Vec<f64> = conics
                .iter()
                .filter_map(|c| {
                    c.as_ref()?
                        .ray_roots(v, normal)
                        .into_iter()
                        .filter(|t| t.abs() <= reach)
                        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
                })
                .collect();
            let excluded = conics.len() - offsets.len();
            let (lo, hi) = if offsets.is_empty() { (f64::NAN, f64::NAN) } else { rank_interval(&mut offsets) };
            VertexBand {
                line: li,
                point: v,
                normal,
                lo,
                hi,
                used: offsets.len(),
                excluded,
            }
        })
        .collect();
    Ok(BoundarySummary {
        central,
        vertices,
        central_pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gausskit::{spectral_cov, ProperGaussian};
    use crate::geometry::RigidTransform;
    use proptest::prelude::*;

    fn window(r: f64) -> BBox {
        BBox::new(Point2::new(-r, -r), Point2::new(r, r))
    }

    fn log_ratio(c1: Point2, s1: &Mat2, c2: Point2, s2: &Mat2, p: Point2) -> f64 {
        ProperGaussian::new(c1, *s1).unwrap().log_density(p) - ProperGaussian::new(c2, *s2).unwrap().log_density(p)
    }

    #[test]
    fn conic_is_the_log_density_ratio() {
        let s1 = Mat2::new(3.0, 0.5, 0.5, 2.0);
        let s2 = Mat2::new(1.0, -0.2, -0.2, 4.0);
        let (c1, c2) = (Point2::new(1.0, 2.0), Point2::new(-3.0, 0.5));
        let k = equal_density_conic(c1, &s1, c2, &s2).unwrap();
        for p in [Point2::ORIGIN, Point2::new(4.0, -7.0), Point2::new(-0.3, 9.0)] {
            assert!((k.eval(p) - log_ratio(c1, &s1, c2, &s2, p)).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_gaussians_are_degenerate() {
        let s = Mat2::new(2.0, 0.3, 0.3, 1.0);
        let c = Point2::new(5.0, 5.0);
        assert!(matches!(equal_density_conic(c, &s, c, &s), Err(Error::DegenerateBoundary)));
    }

    #[test]
    fn equal_isotropic_covariances_give_the_bisector() {
        let s = Mat2::scaled_identity(9.0);
        let k = equal_density_conic(Point2::new(-4.0, 1.0), &s, Point2::new(6.0, 1.0), &s).unwrap();
        assert!(k.is_linear());
        let lines = trace_conic(&k, &window(20.0), 0.5).unwrap();
        assert_eq!(lines.len(), 1);
        for v in lines[0].vertices() {
            assert!((v.x - 1.0).abs() < 1e-6, "{v:?}");
        }
        assert!(!lines[0].is_closed());
    }

    #[test]
    fn equal_anisotropic_covariances_give_a_line() {
        let s = spectral_cov(3.0, 0.5, 0.7);
        let k = equal_density_conic(Point2::new(0.0, 0.0), &s, Point2::new(3.0, -2.0), &s).unwrap();
        assert_eq!((k.a, k.b, k.c), (0.0, 0.0, 0.0));
    }

    /// Roots of the log-density equality on the x-axis for cov I at the
    /// origin vs 4I at (10, 0): 3x² + 20x − (100 + 8 ln 4) = 0.
    fn axis_circle() -> (Point2, f64) {
        let (qa, qb, qc) = (3.0, 20.0, -(100.0 + 8.0 * 4f64.ln()));
        let disc = (qb * qb - 4.0 * qa * qc).sqrt();
        let (r1, r2) = ((-qb - disc) / (2.0 * qa), (-qb + disc) / (2.0 * qa));
        (Point2::new(0.5 * (r1 + r2), 0.0), 0.5 * (r2 - r1))
    }

    #[test]
    fn unequal_isotropic_covariances_give_the_analytic_circle() {
        let k = equal_density_conic(
            Point2::ORIGIN,
            &Mat2::IDENTITY,
            Point2::new(10.0, 0.0),
            &Mat2::scaled_identity(4.0),
        )
        .unwrap();
        let (center, radius) = axis_circle();
        let step = 0.25;
        let lines = trace_conic(&k, &window(30.0), step).unwrap();
        assert_eq!(lines.len(), 1);
        assert!(lines[0].is_closed());
        for v in lines[0].vertices() {
            assert!((v.dist(center) - radius).abs() < step / 2.0);
            assert!(k.eval(*v).abs() < 1e-8);
        }
    }

    #[test]
    fn window_missing_the_curve_is_empty() {
        let k = equal_density_conic(
            Point2::ORIGIN,
            &Mat2::IDENTITY,
            Point2::new(10.0, 0.0),
            &Mat2::scaled_identity(4.0),
        )
        .unwrap();
        let far = BBox::new(Point2::new(100.0, 100.0), Point2::new(120.0, 130.0));
        assert!(trace_conic(&k, &far, 1.0).unwrap().is_empty());
    }

    #[test]
    fn hyperbola_yields_two_branches() {
        let k = equal_density_conic(
            Point2::ORIGIN,
            &Mat2::diag(1.0, 9.0),
            Point2::ORIGIN,
            &Mat2::diag(9.0, 1.0),
        )
        .unwrap();
        let lines = trace_conic(&k, &BBox::new(Point2::new(-10.0, -10.0), Point2::new(10.0, 10.3)), 0.1).unwrap();
        assert_eq!(lines.len(), 2);
        for l in &lines {
            for v in l.vertices() {
                assert!(k.eval(*v).abs() < 1e-8);
            }
        }
    }

    fn pair(c_cs: Point2, c_sb: Point2) -> GaussianPair {
        GaussianPair {
            center_cs: c_cs,
            cov_cs: CovSpectral::isotropic(100.0),
            center_sb: c_sb,
            cov_sb: CovSpectral::isotropic(100.0),
        }
    }

    #[test]
    fn identical_draws_give_zero_width() {
        let draws = vec![pair(Point2::new(-10.0, 0.0), Point2::new(10.0, 0.0)); 40];
        let s = summarize_boundary(&draws, &window(50.0), 2.0).unwrap();
        assert!(!s.vertices.is_empty());
        for v in &s.vertices {
            assert!(v.half_width().abs() < 1e-9);
            assert_eq!(v.excluded, 0);
        }
    }

    #[test]
    fn parallel_bisectors_give_five_km_half_widths() {
        let draws = vec![
            pair(Point2::new(-15.0, 0.0), Point2::new(5.0, 0.0)),
            pair(Point2::new(-5.0, 0.0), Point2::new(15.0, 0.0)),
        ];
        let s = summarize_boundary(&draws, &window(50.0), 2.0).unwrap();
        for v in &s.vertices {
            assert!((v.half_width() - 5.0).abs() < 1e-9, "{v:?}");
        }
    }

    #[test]
    fn draws_without_a_crossing_are_excluded() {
        let mut draws = vec![pair(Point2::new(-10.0, 0.0), Point2::new(10.0, 0.0)); 3];
        // a small circle far from the central line
        draws.push(GaussianPair {
            center_cs: Point2::new(-40.0, 40.0),
            cov_cs: CovSpectral::isotropic(1.0),
            center_sb: Point2::new(-39.0, 40.0),
            cov_sb: CovSpectral::isotropic(4.0),
        });
        let s = summarize_boundary(&draws, &window(50.0), 5.0).unwrap();
        assert!(s.total_excluded() > 0);
        assert!(s.vertices.iter().all(|v| v.used + v.excluded == 4));
    }

    #[test]
    fn axial_median_handles_wraparound() {
        let m = axial_median(&[0.05, PI - 0.05, 0.1, PI - 0.02, 0.02]);
        assert!(m < 0.1 || m > PI - 0.1);
    }

    proptest! {
        #[test]
        fn traced_points_have_equal_density(
            x in -5.0..5.0f64, y in -5.0..5.0f64,
            l1 in 0.0..2.0f64, l2 in 0.0..2.0f64, phi in 0.0..PI,
        ) {
            let s1 = Mat2::scaled_identity(2.0);
            let s2 = spectral_cov(l1, l2, phi);
            let (c1, c2) = (Point2::new(x, y), Point2::new(x + 3.0, y - 1.0));
            let k = equal_density_conic(c1, &s1, c2, &s2).unwrap();
            for line in trace_conic(&k, &window(15.0), 0.5).unwrap() {
                for v in line.vertices() {
                    prop_assert!(log_ratio(c1, &s1, c2, &s2, *v).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn swapping_negates(l1 in 0.0..2.0f64, phi in 0.0..PI) {
            let s1 = spectral_cov(l1, 0.3, phi);
            let s2 = Mat2::IDENTITY;
            let (c1, c2) = (Point2::new(1.0, 0.0), Point2::new(-2.0, 2.0));
            let k = equal_density_conic(c1, &s1, c2, &s2).unwrap();
            let m = equal_density_conic(c2, &s2, c1, &s1).unwrap();
            let n = k.negated();
            for (u, v) in [(m.a, n.a), (m.b, n.b), (m.c, n.c), (m.d, n.d), (m.e, n.e), (m.f, n.f)] {
                prop_assert!((u - v).abs() < 1e-12 * (1.0 + u.abs()));
            }
        }

        #[test]
        fn boundary_is_rigid_equivariant(angle in -PI..PI, sx in -20.0..20.0f64, sy in -20.0..20.0f64) {
            let tf = RigidTransform::new(angle, Point2::new(sx, sy));
            let s1 = Mat2::IDENTITY;
            let s2 = spectral_cov(1.2, 0.1, 0.4);
            let (c1, c2) = (Point2::new(0.0, 0.0), Point2::new(4.0, 1.0));
            let k = equal_density_conic(c1, &s1, c2, &s2).unwrap();
            let r = crate::geometry::rotation(angle);
            let k2 = equal_density_conic(
                tf.apply(c1), &(r * s1 * r.transpose()),
                tf.apply(c2), &(r * s2 * r.transpose()),
            ).unwrap();
            for line in trace_conic(&k, &window(12.0), 0.7).unwrap() {
                for v in line.vertices() {
                    let w = tf.apply(*v);
                    prop_assert!(k2.eval(w).abs() < 1e-8);
                    // mapped vertex lies on the transformed curve within 1e-6 km
                    let g = k2.gradient(w).norm();
                    prop_assert!(k2.eval(w).abs() / g < 1e-6);
                }
            }
        }
    }
}
