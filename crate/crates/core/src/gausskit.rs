//! Bivariate Gaussian factors in precision form.
//!
//! A [`GaussianFactor`] is `exp{log_scale − ½ (x − m)ᵀ Λ (x − m)}` with `Λ`
//! symmetric positive semi-definite. Rank-deficient `Λ` (a straight-line
//! selection term) is a first-class value: it cannot be normalized on its own
//! but the product with any proper factor can, in closed form.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{rotation, Mat2, OrientedLine, Point2, RigidTransform};

/// Eigenvalues above `-PSD_CLAMP` are treated as rounding noise and clamped to zero.
pub const PSD_CLAMP: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFactor {
    precision: Mat2,
    anchor: Point2,
    log_scale: f64,
}

impl GaussianFactor {
    /// Unit-height factor: value 1 at `anchor`.
    pub fn new(precision: Mat2, anchor: Point2) -> Result<Self> {
        Self::with_log_scale(precision, anchor, 0.0)
    }

    pub fn with_log_scale(precision: Mat2, anchor: Point2, log_scale: f64) -> Result<Self> {
        if !precision.is_finite() || !anchor.is_finite() || !log_scale.is_finite() {
            return Err(Error::Param("non-finite Gaussian factor".into()));
        }
        let precision = repair_psd(precision)?;
        Ok(GaussianFactor {
            precision,
            anchor,
            log_scale,
        })
    }

    /// The normalized density `N(x; mean, cov)` as a factor.
    pub fn normal(mean: Point2, cov: Mat2) -> Result<Self> {
        let g = ProperGaussian::new(mean, cov)?;
        Ok(g.as_factor())
    }

    pub fn precision(&self) -> Mat2 {
        self.precision
    }

    pub fn anchor(&self) -> Point2 {
        self.anchor
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn rank(&self) -> usize {
        let (hi, lo) = self.precision.sym_eigenvalues();
        let tol = 1e-12 * hi.abs().max(f64::MIN_POSITIVE);
        usize::from(hi > tol) + usize::from(lo > tol)
    }

    pub fn log_value(&self, x: Point2) -> f64 {
        self.log_scale - 0.5 * self.precision.quad_form(x - self.anchor)
    }

    pub fn transformed(&self, tf: &RigidTransform) -> GaussianFactor {
        let r = rotation(tf.angle);
        GaussianFactor {
            precision: (r * self.precision * r.transpose()).symmetrized(),
            anchor: tf.apply(self.anchor),
            log_scale: self.log_scale,
        }
    }
}

fn repair_psd(m: Mat2) -> Result<Mat2> {
    let scale = m.max_abs().max(1.0);
    if (m.m01 - m.m10).abs() > 1e-12 * scale {
        return Err(Error::Param(format!("precision is not symmetric: {m:?}")));
    }
    let s = m.symmetrized();
    let (hi, lo) = s.sym_eigenvalues();
    if lo < -PSD_CLAMP * scale {
        return Err(Error::Param(format!(
            "precision has negative eigenvalue {lo:e}"
        )));
    }
    if lo >= 0.0 {
        return Ok(s);
    }
    // Rebuild with the small negative eigenvalue set to zero.
    let hi = hi.max(0.0);
    if hi == 0.0 {
        return Ok(Mat2::ZERO);
    }
    // Eigenvector of `hi`.
    let v = if s.m01.abs() > 0.0 {
        Point2::new(hi - s.m11, s.m01)
    } else if s.m00 >= s.m11 {
        Point2::new(1.0, 0.0)
    } else {
        Point2::new(0.0, 1.0)
    };
    let v = v * (1.0 / v.norm());
    Ok(Mat2::new(v.x * v.x, v.x * v.y, v.x * v.y, v.y * v.y).scale(hi))
}

/// Rank-one factor `exp{−d²/(2τ²)}` where `d` is distance to `line`.
pub fn line_factor(line: &OrientedLine, tau2: f64) -> Result<GaussianFactor> {
    if !(tau2 > 0.0) || !tau2.is_finite() {
        return Err(Error::Param(format!("tau2 must be positive, got {tau2}")));
    }
    // Q = diag(τ⁻², 0) penalizes the first axis; turn that axis onto the line normal.
    let r = rotation(line.angle - FRAC_PI_2);
    let q = Mat2::diag(1.0 / tau2, 0.0);
    GaussianFactor::new((r * q * r.transpose()).symmetrized(), line.anchor)
}

/// Bivariate normal with positive-definite covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProperGaussian {
    mean: Point2,
    cov: Mat2,
    precision: Mat2,
    log_det_cov: f64,
}

impl ProperGaussian {
    pub fn new(mean: Point2, cov: Mat2) -> Result<Self> {
        if !mean.is_finite() || !cov.is_finite() {
            return Err(Error::Param("non-finite Gaussian".into()));
        }
        let cov = cov.symmetrized();
        let det = cov.det();
        if !(cov.m00 > 0.0 && det > 0.0) {
            return Err(Error::Param(format!(
                "covariance is not positive definite: {cov:?}"
            )));
        }
        let precision = cov.inverse().ok_or(Error::ImproperProduct)?;
        Ok(ProperGaussian {
            mean,
            cov,
            precision,
            log_det_cov: det.ln(),
        })
    }

    fn from_precision(mean: Point2, precision: Mat2) -> Result<Self> {
        let det = precision.det();
        let cov = precision.inverse().ok_or(Error::ImproperProduct)?.symmetrized();
        Ok(ProperGaussian {
            mean,
            cov,
            precision,
            log_det_cov: -det.ln(),
        })
    }

    pub fn mean(&self) -> Point2 {
        self.mean
    }

    pub fn cov(&self) -> Mat2 {
        self.cov
    }

    pub fn precision(&self) -> Mat2 {
        self.precision
    }

    pub fn log_density(&self, p: Point2) -> f64 {
        -LN_2PI - 0.5 * self.log_det_cov - 0.5 * self.precision.quad_form(p - self.mean)
    }

    pub fn as_factor(&self) -> GaussianFactor {
        GaussianFactor {
            precision: self.precision,
            anchor: self.mean,
            log_scale: -LN_2PI - 0.5 * self.log_det_cov,
        }
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> Mat2 {
        let l00 = self.cov.m00.sqrt();
        let l10 = self.cov.m10 / l00;
        let l11 = (self.cov.m11 - l10 * l10).max(0.0).sqrt();
        Mat2::new(l00, 0.0, l10, l11)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2 {
        let z = Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        self.mean + self.cholesky().mul_vec(z)
    }

    pub fn transformed(&self, tf: &RigidTransform) -> ProperGaussian {
        let r = rotation(tf.angle);
        ProperGaussian::new(tf.apply(self.mean), (r * self.cov * r.transpose()).symmetrized())
            .expect("rotation preserves definiteness")
    }
}

/// Result of multiplying factors together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composed {
    pub gaussian: ProperGaussian,
    /// `log ∫ Π f_k(x) dx` over the plane.
    pub log_norm: f64,
}

/// Multiplies factors and renormalizes.
///
/// Fails with [`Error::ImproperProduct`] when the summed precision is singular.
pub fn compose(factors: &[GaussianFactor]) -> Result<Composed> {
    let mut precision = Mat2::ZERO;
    let mut info = Point2::ORIGIN;
    let mut anchored = 0.0;
    let mut log_scale = 0.0;
    for f in factors {
        let lm = f.precision.mul_vec(f.anchor);
        precision = precision + f.precision;
        info = info + lm;
        anchored += f.anchor.dot(lm);
        log_scale += f.log_scale;
    }
    let det = precision.det();
    let tr = precision.trace();
    if !(det > 1e-14 * tr * tr) || !(tr > 0.0) || !det.is_finite() {
        return Err(Error::ImproperProduct);
    }
    let cov = precision.inverse().ok_or(Error::ImproperProduct)?;
    let mean = cov.mul_vec(info);
    let gaussian = ProperGaussian::from_precision(mean, precision)?;
    let log_norm = log_scale - 0.5 * (anchored - mean.dot(info)) + LN_2PI - 0.5 * det.ln();
    Ok(Composed { gaussian, log_norm })
}

/// Log-density of `N(mean, cov)` at `p`.
pub fn log_density(g: &ProperGaussian, p: Point2) -> f64 {
    g.log_density(p)
}

/// Direction angle in `[0, π)` of the leading eigenvector of a symmetric matrix.
pub fn principal_angle(m: &Mat2) -> f64 {
    let s = m.symmetrized();
    crate::geometry::normalize_line_angle(0.5 * (2.0 * s.m01).atan2(s.m00 - s.m11))
}

/// `R(φ)·diag(e^{λ₁}, e^{λ₂})·R(φ)ᵀ`.
pub fn spectral_cov(log_eig1: f64, log_eig2: f64, angle: f64) -> Mat2 {
    let r = rotation(angle);
    (r * Mat2::diag(log_eig1.exp(), log_eig2.exp()) * r.transpose()).symmetrized()
}
