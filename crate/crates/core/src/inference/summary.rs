use super::mcmc::{Draw, PosteriorSamples};
use crate::error::{Error, Result};
use crate::stats::quantiles;

/// Posterior median and equal-tailed 95% interval of one quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: &'static str,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ParamSummary {
    pub fn covers(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// Pooled post-burn-in summary of σ_μ², τ², σ_μ, τ, a, b.
pub fn summarize(chains: &[PosteriorSamples]) -> Result<Vec<ParamSummary>> {
    summarize_draws(chains.iter().flat_map(|c| c.draws.iter()))
}

/// As [`summarize`], for draws pooled from any source.
pub fn summarize_draws<'a>(draws: impl IntoIterator<Item = &'a Draw>) -> Result<Vec<ParamSummary>> {
    let draws: Vec<&Draw> = draws.into_iter().collect();
    if draws.is_empty() {
        return Err(Error::Data("no post-burn-in draws to summarize".into()));
    }
    let columns: [(&'static str, fn(&Draw) -> f64); 6] = [
        ("sigma_mu2", |d| d.sigma2),
        ("tau2", |d| d.tau2),
        ("sigma_mu", |d| d.sigma2.sqrt()),
        ("tau", |d| d.tau2.sqrt()),
        ("a", |d| d.a),
        ("b", |d| d.b),
    ];
    Ok(columns
        .iter()
        .map(|(name, f)| {
            let v: Vec<f64> = draws.iter().map(|d| f(d)).collect();
            let q = quantiles(&v, &[0.5, 0.025, 0.975]);
            ParamSummary {
                name,
                median: q[0],
                lo: q[1],
                hi: q[2],
            }
        })
        .collect())
}

/// Posterior mean of each `z_i` (probability of CS), pooled over chains.
pub fn label_probabilities(chains: &[PosteriorSamples]) -> Vec<(String, f64)> {
    let Some(first) = chains.first() else {
        return Vec::new();
    };
    label_probabilities_of(&first.ids, chains.iter().flat_map(|c| c.draws.iter()))
}

/// Share of `draws` with `z_i = 1`, paired with `ids[i]`.
pub fn label_probabilities_of<'a>(ids: &[String], draws: impl IntoIterator<Item = &'a Draw>) -> Vec<(String, f64)> {
    let draws: Vec<&Draw> = draws.into_iter().collect();
    let total = draws.len();
    ids.iter()
        .enumerate()
        .map(|(i, id)| {
            let ones = draws.iter().filter(|d| d.z.get(i) == Some(&1)).count();
            (id.clone(), if total == 0 { f64::NAN } else { ones as f64 / total as f64 })
        })
        .collect()
}
