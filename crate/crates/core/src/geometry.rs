//! Planar primitives: points, 2×2 matrices, polylines and the per-day
//! feature sets that steps are drawn toward.
//!
//! All coordinates are projected kilometres. Nothing here is geodesic.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Row-major 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub m00: f64,
    pub m01: f64,
    pub m10: f64,
    pub m11: f64,
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);

    pub const fn new(m00: f64, m01: f64, m10: f64, m11: f64) -> Self {
        Mat2 { m00, m01, m10, m11 }
    }

    pub const fn diag(a: f64, b: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, b)
    }

    pub fn scaled_identity(s: f64) -> Self {
        Mat2::diag(s, s)
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m00, self.m10, self.m01, self.m11)
    }

    pub fn det(&self) -> f64 {
        self.m00 * self.m11 - self.m01 * self.m10
    }

    pub fn trace(&self) -> f64 {
        self.m00 + self.m11
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv = 1.0 / det;
        Some(Mat2::new(
            self.m11 * inv,
            -self.m01 * inv,
            -self.m10 * inv,
            self.m00 * inv,
        ))
    }

    pub fn mul_vec(&self, v: Point2) -> Point2 {
        Point2::new(
            self.m00 * v.x + self.m01 * v.y,
            self.m10 * v.x + self.m11 * v.y,
        )
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: Point2) -> f64 {
        v.dot(self.mul_vec(v))
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.m00 * s, self.m01 * s, self.m10 * s, self.m11 * s)
    }

    pub fn symmetrized(&self) -> Mat2 {
        let off = 0.5 * (self.m01 + self.m10);
        Mat2::new(self.m00, off, off, self.m11)
    }

    /// Eigenvalues of the symmetric part, largest first.
    pub fn sym_eigenvalues(&self) -> (f64, f64) {
        let s = self.symmetrized();
        let mean = 0.5 * (s.m00 + s.m11);
        let half_diff = 0.5 * (s.m00 - s.m11);
        let r = half_diff.hypot(s.m01);
        (mean + r, mean - r)
    }

    pub fn max_abs(&self) -> f64 {
        self.m00
            .abs()
            .max(self.m01.abs())
            .max(self.m10.abs())
            .max(self.m11.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.m00.is_finite() && self.m01.is_finite() && self.m10.is_finite() && self.m11.is_finite()
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m00 + o.m00,
            self.m01 + o.m01,
            self.m10 + o.m10,
            self.m11 + o.m11,
        )
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m00 - o.m00,
            self.m01 - o.m01,
            self.m10 - o.m10,
            self.m11 - o.m11,
        )
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.m00 * o.m00 + self.m01 * o.m10,
            self.m00 * o.m01 + self.m01 * o.m11,
            self.m10 * o.m00 + self.m11 * o.m10,
            self.m10 * o.m01 + self.m11 * o.m11,
        )
    }
}

/// Counter-clockwise rotation by `theta` radians.
pub fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// A rotation followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub angle: f64,
    pub shift: Point2,
}

impl RigidTransform {
    pub fn new(angle: f64, shift: Point2) -> Self {
        RigidTransform { angle, shift }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        rotation(self.angle).mul_vec(p) + self.shift
    }

    pub fn apply_polyline(&self, line: &Polyline) -> Polyline {
        Polyline::new(line.vertices().iter().map(|&v| self.apply(v)).collect())
            .expect("rigid transforms preserve segment lengths")
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point2,
    pub max: Point2,
}

impl BBox {
    pub fn new(min: Point2, max: Point2) -> Self {
        BBox { min, max }
    }

    fn around(points: &[Point2]) -> Self {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        BBox { min, max }
    }

    pub fn dist_sq(&self, p: Point2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx * dx + dy * dy
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Segments per bounding-box chunk in the nearest-point prefilter.
const CHUNK: usize = 16;

/// Ordered vertex chain with no zero-length segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    vertices: Vec<Point2>,
    bbox: BBox,
    chunks: Vec<BBox>,
}

impl Polyline {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Geometry(format!(
                "polyline needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::Geometry(format!("non-finite vertex {p:?}")));
        }
        if let Some(i) = vertices.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::Geometry(format!(
                "zero-length segment at vertex {i}"
            )));
        }
        let bbox = BBox::around(&vertices);
        let n_seg = vertices.len() - 1;
        let chunks = (0..n_seg)
            .step_by(CHUNK)
            .map(|s| BBox::around(&vertices[s..=(s + CHUNK).min(n_seg)]))
            .collect();
        Ok(Polyline {
            vertices,
            bbox,
            chunks,
        })
    }

    /// Straight two-vertex polyline.
    pub fn segment(a: Point2, b: Point2) -> Result<Self> {
        Polyline::new(vec![a, b])
    }

    /// Closed regular `n`-gon inscribed in the circle of `radius` about `center`.
    pub fn regular_polygon(center: Point2, radius: f64, n: usize) -> Result<Self> {
        if n < 3 || radius <= 0.0 {
            return Err(Error::Geometry(format!(
                "regular polygon needs n >= 3 and radius > 0 (n = {n}, radius = {radius})"
            )));
        }
        let vertices = (0..=n)
            .map(|k| {
                let phi = 2.0 * PI * (k % n) as f64 / n as f64;
                center + Point2::new(phi.cos(), phi.sin()) * radius
            })
            .collect();
        Polyline::new(vertices)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn num_segments(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn is_closed(&self) -> bool {
        self.vertices.first() == self.vertices.last()
    }
}

/// Identifies one segment of one polyline in a day's feature list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentId {
    pub line: usize,
    pub seg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: Point2,
    pub seg: SegmentId,
    /// Position along the segment in [0, 1].
    pub t: f64,
    pub dist: f64,
}

/// A line through `anchor` with direction angle in `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedLine {
    pub anchor: Point2,
    pub angle: f64,
}

impl OrientedLine {
    pub fn new(anchor: Point2, angle: f64) -> Self {
        OrientedLine {
            anchor,
            angle: normalize_line_angle(angle),
        }
    }

    pub fn through(anchor: Point2, direction: Point2) -> Self {
        OrientedLine::new(anchor, direction.y.atan2(direction.x))
    }

    pub fn direction(&self) -> Point2 {
        Point2::new(self.angle.cos(), self.angle.sin())
    }

    /// Unit normal, rotated a quarter turn counter-clockwise from the direction.
    pub fn normal(&self) -> Point2 {
        Point2::new(-self.angle.sin(), self.angle.cos())
    }

    pub fn distance(&self, p: Point2) -> f64 {
        (p - self.anchor).dot(self.normal()).abs()
    }
}

/// Maps any angle onto `[0, π)`; a line has no preferred sense.
pub fn normalize_line_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(PI);
    // rem_euclid can round up to exactly π for tiny negative inputs
    if a >= PI {
        0.0
    } else {
        a
    }
}

fn project_on_segment(a: Point2, b: Point2, p: Point2) -> (Point2, f64) {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
    let q = if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        a + ab * t
    };
    (q, t)
}

/// Closest point to `p` over every segment of `feature_day`.
///
/// Equidistant candidates resolve to the lowest `SegmentId`.
pub fn nearest_point(feature_day: &[Polyline], p: Point2) -> Result<Projection> {
    let mut best: Option<(f64, Projection)> = None;
    for (li, line) in feature_day.iter().enumerate() {
        if let Some((best_sq, _)) = best {
            if line.bbox.dist_sq(p) > best_sq {
                continue;
            }
        }
        let n_seg = line.num_segments();
        for (ci, chunk) in line.chunks.iter().enumerate() {
            if let Some((best_sq, _)) = best {
                if chunk.dist_sq(p) > best_sq {
                    continue;
                }
            }
            let start = ci * CHUNK;
            for si in start..(start + CHUNK).min(n_seg) {
                let (a, b) = (line.vertices[si], line.vertices[si + 1]);
                let (q, t) = project_on_segment(a, b, p);
                let d_sq = (p - q).norm_sq();
                if best.is_none_or(|(b, _)| d_sq < b) {
                    best = Some((
                        d_sq,
                        Projection {
                            point: q,
                            seg: SegmentId { line: li, seg: si },
                            t,
                            dist: d_sq.sqrt(),
                        },
                    ));
                }
            }
        }
    }
    best.map(|(_, proj)| proj).ok_or(Error::FeatureAbsent(None))
}

/// Tangent line to the feature at the point nearest `p`.
///
/// On a segment interior the tangent is the segment direction. At an interior
/// vertex it is the chord between the two neighbouring vertices; at a polyline
/// end it is the single adjacent segment. Closed polylines have no ends.
pub fn tangent_at(feature_day: &[Polyline], p: Point2) -> Result<OrientedLine> {
    let proj = nearest_point(feature_day, p)?;
    Ok(tangent_of_projection(feature_day, &proj))
}

pub(crate) fn tangent_of_projection(feature_day: &[Polyline], proj: &Projection) -> OrientedLine {
    let line = &feature_day[proj.seg.line];
    let v = &line.vertices;
    let n = v.len();
    let s = proj.seg.seg;
    let vertex = if proj.t == 0.0 {
        Some(s)
    } else if proj.t == 1.0 {
        Some(s + 1)
    } else {
        None
    };
    let direction = match vertex {
        Some(k) if k > 0 && k < n - 1 => v[k + 1] - v[k - 1],
        Some(k) if line.is_closed() && n > 3 && (k == 0 || k == n - 1) => v[1] - v[n - 2],
        _ => v[s + 1] - v[s],
    };
    OrientedLine::through(proj.point, direction)
}

/// Per-day feature geometry. Days are integers; there is no interpolation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynamicFeature {
    days: BTreeMap<i64, Vec<Polyline>>,
    /// Free-form projection note carried through from input files.
    pub crs_note: Option<String>,
}

impl DynamicFeature {
    pub fn new() -> Self {
        Self::default()
    }

    /// The same geometry on every day in `days`.
    pub fn constant(lines: Vec<Polyline>, days: impl IntoIterator<Item = i64>) -> Self {
        let mut f = DynamicFeature::new();
        for d in days {
            f.insert(d, lines.clone());
        }
        f
    }

    pub fn insert(&mut self, day: i64, lines: Vec<Polyline>) {
        self.days.entry(day).or_default().extend(lines);
    }

    pub fn day(&self, day: i64) -> Result<&[Polyline]> {
        match self.days.get(&day) {
            Some(lines) if !lines.is_empty() => Ok(lines),
            _ => Err(Error::FeatureAbsent(Some(day))),
        }
    }

    pub fn has_day(&self, day: i64) -> bool {
        self.days.get(&day).is_some_and(|l| !l.is_empty())
    }

    pub fn days(&self) -> impl Iterator<Item = (i64, &[Polyline])> {
        self.days.iter().map(|(d, l)| (*d, l.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn nearest_point(&self, day: i64, p: Point2) -> Result<Projection> {
        nearest_point(self.day(day)?, p)
    }

    pub fn tangent_at(&self, day: i64, p: Point2) -> Result<OrientedLine> {
        tangent_at(self.day(day)?, p)
    }
}
