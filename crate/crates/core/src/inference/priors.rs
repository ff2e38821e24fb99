use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::gausskit::{principal_angle, spectral_cov};
use crate::geometry::{normalize_line_angle, Mat2, Point2};

/// Inverse-gamma with density ∝ x^{−(shape+1)} e^{−scale/x}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        let d = InvGamma { shape, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape > 0.0 && self.scale > 0.0 && self.shape.is_finite() && self.scale.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid inverse-gamma {self:?}")))
        }
    }

    /// Log density up to an additive constant.
    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -(self.shape + 1.0) * x.ln() - self.scale / x
    }

    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.scale / (self.shape - 1.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0 / self.scale).expect("validated");
        1.0 / g.sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal1 {
    pub mean: f64,
    pub sd: f64,
}

impl Normal1 {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        let d = Normal1 { mean, sd };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sd > 0.0 && self.sd.is_finite() && self.mean.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid normal {self:?}")))
        }
    }

    /// Log density up to an additive constant.
    pub fn log_density(&self, x: f64) -> f64 {
        let u = (x - self.mean) / self.sd;
        -0.5 * u * u
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Normal::new(self.mean, self.sd).expect("validated").sample(rng)
    }
}

/// Priors of the stage-2 model.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub sigma2: InvGamma,
    pub tau2: InvGamma,
    pub a: Normal1,
    pub b: Normal1,
    /// Prior probability of the CS label.
    pub p_cs: f64,
    pub center_mean: Point2,
    /// Per-coordinate standard deviation of the center prior (km).
    pub center_sd: f64,
    /// Normal prior on each log-eigenvalue of the center covariances.
    pub log_eig: Normal1,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            sigma2: InvGamma { shape: 6.0, scale: 1125.0 },
            tau2: InvGamma { shape: 6.0, scale: 32000.0 },
            a: Normal1 { mean: 135.0, sd: 14.0 },
            b: Normal1 { mean: 319.0, sd: 14.0 },
            p_cs: 0.5,
            center_mean: Point2::ORIGIN,
            center_sd: 2000.0,
            log_eig: Normal1 { mean: 1e4f64.ln(), sd: 2.0 },
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        self.sigma2.validate()?;
        self.tau2.validate()?;
        self.a.validate()?;
        self.b.validate()?;
        self.log_eig.validate()?;
        if !(self.p_cs > 0.0 && self.p_cs < 1.0) {
            return Err(Error::Config(format!("p_cs must be in (0, 1), got {}", self.p_cs)));
        }
        if !(self.center_sd > 0.0 && self.center_sd.is_finite()) || !self.center_mean.is_finite() {
            return Err(Error::Config("invalid center prior".into()));
        }
        Ok(())
    }

    pub fn center_log_density(&self, c: Point2) -> f64 {
        -0.5 * (c - self.center_mean).norm_sq() / (self.center_sd * self.center_sd)
    }

    pub fn cov_log_density(&self, s: &CovSpectral) -> f64 {
        self.log_eig.log_density(s.log_eig1) + self.log_eig.log_density(s.log_eig2)
    }

    pub fn label_log_prior(&self, cs: bool) -> f64 {
        if cs {
            self.p_cs.ln()
        } else {
            (1.0 - self.p_cs).ln()
        }
    }
}

/// `Σ = R(φ)·diag(e^{λ₁}, e^{λ₂})·R(φ)ᵀ`.
///
/// The sampler walks on unordered `(λ₁, λ₂, φ)`; [`CovSpectral::canonical`]
/// folds to `λ₁ ≥ λ₂`, `φ ∈ [0, π)`, which names the same matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovSpectral {
    pub log_eig1: f64,
    pub log_eig2: f64,
    pub angle: f64,
}

impl CovSpectral {
    pub fn matrix(&self) -> Mat2 {
        spectral_cov(self.log_eig1, self.log_eig2, self.angle)
    }

    pub fn canonical(&self) -> CovSpectral {
        if self.log_eig1 >= self.log_eig2 {
            CovSpectral {
                angle: normalize_line_angle(self.angle),
                ..*self
            }
        } else {
            CovSpectral {
                log_eig1: self.log_eig2,
                log_eig2: self.log_eig1,
                angle: normalize_line_angle(self.angle + 0.5 * PI),
            }
        }
    }

    pub fn from_matrix(m: &Mat2) -> Result<CovSpectral> {
        let (l1, l2) = m.sym_eigenvalues();
        if !(l2 > 0.0) || !m.is_finite() {
            return Err(Error::Param(format!("covariance not positive definite: {m:?}")));
        }
        Ok(CovSpectral {
            log_eig1: l1.ln(),
            log_eig2: l2.ln(),
            angle: principal_angle(m),
        })
    }

    pub fn isotropic(var: f64) -> CovSpectral {
        CovSpectral {
            log_eig1: var.ln(),
            log_eig2: var.ln(),
            angle: 0.0,
        }
    }
}
