use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::data::{mask_diff, season_mask, Evaluator, FitData};
use super::init::initialize;
use super::priors::{CovSpectral, PriorConfig};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::movement::{ModelParams, SubPop};
use crate::rng::derive_seed;
use crate::rsf::Season;

/// Random-walk blocks, in update order.
pub const BLOCK_NAMES: [&str; 8] = [
    "log_sigma2",
    "log_tau2",
    "a",
    "b",
    "center_cs",
    "center_sb",
    "cov_cs",
    "cov_sb",
];
const TARGET_ACCEPT: [f64; 8] = [0.44, 0.44, 0.44, 0.44, 0.23, 0.23, 0.23, 0.23];
const INITIAL_SCALE: [f64; 8] = [0.05, 0.1, 5.0, 5.0, 20.0, 20.0, 0.1, 0.1];

/// Which blocks are updated; the rest stay at their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Updates {
    pub labels: bool,
    pub imputations: bool,
    pub sigma2: bool,
    pub tau2: bool,
    pub season: bool,
    pub centers: bool,
    pub covs: bool,
}

impl Default for Updates {
    fn default() -> Self {
        Updates {
            labels: true,
            imputations: true,
            sigma2: true,
            tau2: true,
            season: true,
            centers: true,
            covs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    /// With `false` the sampler targets the prior.
    pub use_likelihood: bool,
    pub updates: Updates,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 20_000,
            burn_in: 5_000,
            thin: 1,
            chains: 2,
            use_likelihood: true,
            updates: Updates::default(),
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::Config("need at least one chain".into()));
        }
        if self.burn_in > self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) exceeds iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }
}

/// One state of the chain. Covariance spectra are stored as walked
/// (unordered); use [`CovSpectral::canonical`] for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iter: usize,
    pub sigma2: f64,
    pub tau2: f64,
    pub a: f64,
    pub b: f64,
    pub center_cs: Point2,
    pub center_sb: Point2,
    pub cov_cs: CovSpectral,
    pub cov_sb: CovSpectral,
    /// 1 = CS, 0 = SB, in [`FitData`] order.
    pub z: Vec<u8>,
}

impl Draw {
    pub fn from_params(params: &ModelParams, labels: &[SubPop]) -> Result<Draw> {
        Ok(Draw {
            iter: 0,
            sigma2: params.sigma2,
            tau2: params.tau2,
            a: params.season.a,
            b: params.season.b,
            center_cs: params.center_cs,
            center_sb: params.center_sb,
            cov_cs: CovSpectral::from_matrix(&params.cov_cs)?,
            cov_sb: CovSpectral::from_matrix(&params.cov_sb)?,
            z: labels.iter().map(|l| l.z()).collect(),
        })
    }

    /// Parameters of this draw. The season is not re-validated.
    pub fn params(&self) -> ModelParams {
        ModelParams {
            sigma2: self.sigma2,
            tau2: self.tau2,
            season: Season { a: self.a, b: self.b },
            center_cs: self.center_cs,
            center_sb: self.center_sb,
            cov_cs: self.cov_cs.matrix(),
            cov_sb: self.cov_sb.matrix(),
        }
    }

    pub fn labels(&self) -> Vec<SubPop> {
        self.z.iter().map(|&z| if z == 1 { SubPop::Cs } else { SubPop::Sb }).collect()
    }

    /// Same state with sub-populations relabelled.
    pub fn swapped(&self) -> Draw {
        Draw {
            center_cs: self.center_sb,
            center_sb: self.center_cs,
            cov_cs: self.cov_sb,
            cov_sb: self.cov_cs,
            z: self.z.iter().map(|z| 1 - z).collect(),
            ..self.clone()
        }
    }
}

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub chain: usize,
    pub chain_seed: u64,
    pub next_iter: usize,
    pub state: Draw,
    pub imputation: Vec<u32>,
    pub log_scales: [f64; 8],
    pub accepted: [u64; 8],
    pub proposed: [u64; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub ids: Vec<String>,
    pub chain: usize,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub initial: Draw,
    /// Post-burn-in, thinned states.
    pub draws: Vec<Draw>,
    pub checkpoint: Checkpoint,
}

impl PosteriorSamples {
    pub fn acceptance_rates(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, o) in out.iter_mut().enumerate() {
            let p = self.checkpoint.proposed[i];
            *o = if p == 0 { f64::NAN } else { self.checkpoint.accepted[i] as f64 / p as f64 };
        }
        out
    }
}

/// Log-posterior (up to a constant) with each individual at imputation
/// `imputation[i]`. Ignores the `center_CS.x < center_SB.x` constraint, so it
/// is symmetric under [`Draw::swapped`].
pub fn log_posterior(draw: &Draw, data: &FitData, priors: &PriorConfig, imputation: &[u32]) -> Result<f64> {
    let ev = Evaluator::new(&draw.params())?;
    let mut total = log_prior(draw, priors);
    for (i, ind) in data.individuals.iter().enumerate() {
        let z = draw.labels()[i];
        total += priors.label_log_prior(z == SubPop::Cs);
        total += ev.path(&ind.imputations[imputation[i] as usize], z);
    }
    Ok(total)
}

fn log_prior(d: &Draw, p: &PriorConfig) -> f64 {
    p.sigma2.log_density(d.sigma2)
        + p.tau2.log_density(d.tau2)
        + p.a.log_density(d.a)
        + p.b.log_density(d.b)
        + p.center_log_density(d.center_cs)
        + p.center_log_density(d.center_sb)
        + p.cov_log_density(&d.cov_cs)
        + p.cov_log_density(&d.cov_sb)
}

fn season_ok(a: f64, b: f64) -> bool {
    Season { a, b }.is_valid()
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

struct Chain<'a> {
    data: &'a FitData,
    priors: &'a PriorConfig,
    config: &'a McmcConfig,
    base_rng: ChaCha8Rng,
    cp: Checkpoint,
    ll: Vec<f64>,
}

impl<'a> Chain<'a> {
    fn evaluator(&self, d: &Draw) -> Result<Evaluator> {
        Evaluator::new(&d.params())
    }

    fn path_ll(&self, ev: &Evaluator, i: usize, z: SubPop) -> f64 {
        if !self.config.use_likelihood {
            return 0.0;
        }
        let ind = &self.data.individuals[i];
        ev.path(&ind.imputations[self.cp.imputation[i] as usize], z)
    }

    fn label(&self, i: usize) -> SubPop {
        if self.cp.state.z[i] == 1 {
            SubPop::Cs
        } else {
            SubPop::Sb
        }
    }

    fn accept<R: Rng + ?Sized>(&mut self, block: usize, log_ratio: f64, rng: &mut R) -> bool {
        self.cp.proposed[block] += 1;
        let u: f64 = rng.random();
        let ok = !log_ratio.is_nan() && u.ln() < log_ratio;
        if ok {
            self.cp.accepted[block] += 1;
        }
        if self.cp.next_iter < self.config.burn_in {
            let gain = 1.0 / (1.0 + self.cp.next_iter as f64 / 10.0).powf(0.6);
            let a = if ok { 1.0 } else { 0.0 };
            self.cp.log_scales[block] += gain * (a - TARGET_ACCEPT[block]);
        }
        ok
    }

    fn scale(&self, block: usize) -> f64 {
        self.cp.log_scales[block].exp()
    }

    /// Log-likelihood terms under `d` for the individuals selected by `member`.
    fn trial_ll(&self, d: &Draw, member: impl Fn(usize) -> bool) -> Result<Vec<Option<f64>>> {
        let ev = self.evaluator(d)?;
        Ok((0..self.data.len())
            .map(|i| member(i).then(|| self.path_ll(&ev, i, self.label(i))))
            .collect())
    }

    fn mh_update<R: Rng + ?Sized>(
        &mut self,
        block: usize,
        proposal: Draw,
        log_prior_ratio: f64,
        member: impl Fn(usize) -> bool,
        rng: &mut R,
    ) -> Result<()> {
        let trial = match self.trial_ll(&proposal, member) {
            Ok(t) => t,
            // numerically degenerate proposal, e.g. a covariance that is no longer positive definite
            Err(Error::Param(_)) => {
                self.accept(block, f64::NEG_INFINITY, rng);
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let mut delta = 0.0;
        for (i, t) in trial.iter().enumerate() {
            if let Some(v) = t {
                delta += v - self.ll[i];
            }
        }
        if self.accept(block, delta + log_prior_ratio, rng) {
            self.cp.state = proposal;
            for (i, t) in trial.into_iter().enumerate() {
                if let Some(v) = t {
                    self.ll[i] = v;
                }
            }
        }
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        let mut rng = self.base_rng.clone();
        rng.set_stream(self.cp.next_iter as u64);
        let up = self.config.updates;
        let n = self.data.len();
        let cur = self.cp.state.clone();
        let ev = self.evaluator(&cur)?;

        let mut resample = false;
        if up.imputations {
            for i in 0..n {
                let k = self.data.individuals[i].imputations.len();
                if k > 1 {
                    self.cp.imputation[i] = rng.random_range(0..k as u32);
                    resample = true;
                }
            }
        }
        if up.labels {
            for i in 0..n {
                let z = self.label(i);
                let here = if resample { self.path_ll(&ev, i, z) } else { self.ll[i] };
                let there = self.path_ll(&ev, i, z.flip());
                let (l_cs, l_sb) = if z == SubPop::Cs { (here, there) } else { (there, here) };
                let logit = self.priors.label_log_prior(true) - self.priors.label_log_prior(false) + l_cs - l_sb;
                let p_cs = 1.0 / (1.0 + (-logit).exp());
                let u: f64 = rng.random();
                let cs = u < p_cs;
                self.cp.state.z[i] = u8::from(cs);
                self.ll[i] = if cs { l_cs } else { l_sb };
            }
        } else if resample {
            for i in 0..n {
                self.ll[i] = self.path_ll(&ev, i, self.label(i));
            }
        }

        let p = self.priors;
        if up.sigma2 {
            let s = &self.cp.state;
            let prop = Draw {
                sigma2: (s.sigma2.ln() + self.scale(0) * normal(&mut rng)).exp(),
                ..s.clone()
            };
            let r = p.sigma2.log_density(prop.sigma2) - p.sigma2.log_density(s.sigma2) + (prop.sigma2 / s.sigma2).ln();
            self.mh_update(0, prop, r, |_| true, &mut rng)?;
        }
        if up.tau2 {
            let s = &self.cp.state;
            let prop = Draw {
                tau2: (s.tau2.ln() + self.scale(1) * normal(&mut rng)).exp(),
                ..s.clone()
            };
            let r = p.tau2.log_density(prop.tau2) - p.tau2.log_density(s.tau2) + (prop.tau2 / s.tau2).ln();
            self.mh_update(1, prop, r, |_| true, &mut rng)?;
        }
        if up.season {
            for block in [2, 3] {
                let s = self.cp.state.clone();
                let step = self.scale(block) * normal(&mut rng);
                let (a, b) = if block == 2 { (s.a + step, s.b) } else { (s.a, s.b + step) };
                if !season_ok(a, b) {
                    self.accept(block, f64::NEG_INFINITY, &mut rng);
                    continue;
                }
                self.season_update(block, s, a, b, &mut rng)?;
            }
        }
        if up.centers {
            for (block, z) in [(4, SubPop::Cs), (5, SubPop::Sb)] {
                let s = &self.cp.state;
                let jump = Point2::new(normal(&mut rng), normal(&mut rng)) * self.scale(block);
                let mut prop = s.clone();
                let old = if z == SubPop::Cs { s.center_cs } else { s.center_sb };
                let new = old + jump;
                if z == SubPop::Cs {
                    prop.center_cs = new;
                } else {
                    prop.center_sb = new;
                }
                if prop.center_cs.x >= prop.center_sb.x {
                    self.accept(block, f64::NEG_INFINITY, &mut rng);
                    continue;
                }
                let r = p.center_log_density(new) - p.center_log_density(old);
                let labels = self.cp.state.z.clone();
                self.mh_update(block, prop, r, |i| labels[i] == z.z(), &mut rng)?;
            }
        }
        if up.covs {
            for (block, z) in [(6, SubPop::Cs), (7, SubPop::Sb)] {
                let s = &self.cp.state;
                let h = self.scale(block);
                let old = if z == SubPop::Cs { s.cov_cs } else { s.cov_sb };
                let new = CovSpectral {
                    log_eig1: old.log_eig1 + h * normal(&mut rng),
                    log_eig2: old.log_eig2 + h * normal(&mut rng),
                    angle: (old.angle + h * normal(&mut rng)).rem_euclid(std::f64::consts::PI),
                };
                let mut prop = s.clone();
                if z == SubPop::Cs {
                    prop.cov_cs = new;
                } else {
                    prop.cov_sb = new;
                }
                let r = p.cov_log_density(&new) - p.cov_log_density(&old);
                let labels = self.cp.state.z.clone();
                self.mh_update(block, prop, r, |i| labels[i] == z.z(), &mut rng)?;
            }
        }
        self.cp.state.iter = self.cp.next_iter + 1;
        self.cp.next_iter += 1;
        Ok(())
    }

    fn season_update<R: Rng + ?Sized>(&mut self, block: usize, s: Draw, a: f64, b: f64, rng: &mut R) -> Result<()> {
        let old_mask = season_mask(&Season { a: s.a, b: s.b });
        let new_mask = season_mask(&Season { a, b });
        let days = mask_diff(&old_mask, &new_mask);
        let mut deltas = vec![0.0; self.data.len()];
        if self.config.use_likelihood && !days.is_empty() {
            let ev = self.evaluator(&s)?;
            for (i, d) in deltas.iter_mut().enumerate() {
                let ind = &self.data.individuals[i];
                *d = ev.season_delta(&ind.imputations[self.cp.imputation[i] as usize], self.label(i), &new_mask, &days);
            }
        }
        let prior = if block == 2 { &self.priors.a } else { &self.priors.b };
        let (old, new) = if block == 2 { (s.a, a) } else { (s.b, b) };
        let r = deltas.iter().sum::<f64>() + prior.log_density(new) - prior.log_density(old);
        if self.accept(block, r, rng) {
            self.cp.state.a = a;
            self.cp.state.b = b;
            for (l, d) in self.ll.iter_mut().zip(&deltas) {
                *l += d;
            }
        }
        Ok(())
    }
}

fn check_initial(draw: &Draw, data: &FitData, priors: &PriorConfig, config: &McmcConfig, imputation: &[u32]) -> Result<Vec<f64>> {
    let checks = [
        ("sigma2", priors.sigma2.log_density(draw.sigma2)),
        ("tau2", priors.tau2.log_density(draw.tau2)),
        ("a", priors.a.log_density(draw.a)),
        ("b", priors.b.log_density(draw.b)),
        ("center_cs", priors.center_log_density(draw.center_cs)),
        ("center_sb", priors.center_log_density(draw.center_sb)),
        ("cov_cs", priors.cov_log_density(&draw.cov_cs)),
        ("cov_sb", priors.cov_log_density(&draw.cov_sb)),
    ];
    if let Some((name, _)) = checks.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("initial log-prior of {name}")));
    }
    if !season_ok(draw.a, draw.b) {
        return Err(Error::Param(format!("initial season ({}, {}) is invalid", draw.a, draw.b)));
    }
    let ev = Evaluator::new(&draw.params())?;
    let labels = draw.labels();
    let mut ll = Vec::with_capacity(data.len());
    for (i, ind) in data.individuals.iter().enumerate() {
        let v = if config.use_likelihood {
            ev.path(&ind.imputations[imputation[i] as usize], labels[i])
        } else {
            0.0
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "initial log-likelihood of individual `{}` (is the feature missing on an in-season day?)",
                ind.id
            )));
        }
        ll.push(v);
    }
    Ok(ll)
}

/// Start (or continue) one chain and run it to `config.iterations`.
pub fn run_chain(data: &FitData, priors: &PriorConfig, config: &McmcConfig, start: Checkpoint) -> Result<PosteriorSamples> {
    config.validate()?;
    priors.validate()?;
    if start.state.z.len() != data.len() || start.imputation.len() != data.len() {
        return Err(Error::Data("checkpoint does not match the data".into()));
    }
    let ll = check_initial(&start.state, data, priors, config, &start.imputation)?;
    let initial = start.state.clone();
    let mut chain = Chain {
        data,
        priors,
        config,
        base_rng: ChaCha8Rng::seed_from_u64(start.chain_seed),
        cp: start,
        ll,
    };
    let mut draws = Vec::new();
    while chain.cp.next_iter < config.iterations {
        chain.step()?;
        let done = chain.cp.next_iter;
        if done > config.burn_in && (done - config.burn_in - 1) % config.thin == 0 {
            draws.push(chain.cp.state.clone());
        }
    }
    Ok(PosteriorSamples {
        ids: data.ids(),
        chain: chain.cp.chain,
        seed: chain.cp.chain_seed,
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
        initial,
        draws,
        checkpoint: chain.cp,
    })
}

/// Fresh checkpoint for chain `chain` of a run rooted at `seed`.
pub fn start_chain(initial: &Draw, n: usize, seed: u64, chain: usize) -> Checkpoint {
    Checkpoint {
        chain,
        chain_seed: derive_seed(seed, &format!("chain/{chain}")),
        next_iter: 0,
        state: initial.clone(),
        imputation: vec![0; n],
        log_scales: INITIAL_SCALE.map(f64::ln),
        accepted: [0; 8],
        proposed: [0; 8],
    }
}

/// Initialize from the data and run `config.chains` chains.
pub fn mcmc_fit(data: &FitData, priors: &PriorConfig, config: &McmcConfig, seed: u64) -> Result<Vec<PosteriorSamples>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("no individuals to fit".into()));
    }
    let (params, labels) = initialize(data, priors, derive_seed(seed, "init"))?;
    let initial = Draw::from_params(&params, &labels)?;
    (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(data, priors, config, start_chain(&initial, data.len(), seed, c)))
        .collect()
}

/// Probability that the individual belongs to CS given parameters, using the
/// same closed-form step densities as the sampler.
pub fn z_full_conditional(path: &super::data::PathData, params: &ModelParams, p_cs: f64) -> Result<f64> {
    let ev = Evaluator::new(params)?;
    let logit = (p_cs / (1.0 - p_cs)).ln() + ev.path(path, SubPop::Cs) - ev.path(path, SubPop::Sb);
    Ok(1.0 / (1.0 + (-logit).exp()))
}
