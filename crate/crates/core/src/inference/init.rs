use rand::Rng;

use super::data::FitData;
use super::priors::{CovSpectral, PriorConfig};
use crate::error::{Error, Result};
use crate::geometry::{Mat2, Point2};
use crate::movement::{ModelParams, SubPop};
use crate::rng::substream;
use crate::rsf::Season;

/// Two-means clustering with k-means++ seeding. Returns the two centers and
/// each point's cluster (0 or 1).
pub fn two_means(points: &[Point2], seed: u64) -> (Point2, Point2, Vec<usize>) {
    assert!(!points.is_empty());
    let mut rng = substream(seed, "kmeans");
    let first = points[rng.random_range(0..points.len())];
    let weights: Vec<f64> = points.iter().map(|p| p.dist(first).powi(2)).collect();
    let total: f64 = weights.iter().sum();
    let second = if total > 0.0 {
        let mut u = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        points[pick]
    } else {
        first
    };
    let mut centers = [first, second];
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let k = usize::from(p.dist(centers[1]) < p.dist(centers[0]));
            changed |= *a != k;
            *a = k;
        }
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<Point2> = points.iter().zip(&assign).filter(|(_, a)| **a == k).map(|(p, _)| *p).collect();
            if !members.is_empty() {
                *c = members.iter().fold(Point2::ORIGIN, |s, p| s + *p) * (1.0 / members.len() as f64);
            }
        }
        if !changed {
            break;
        }
    }
    (centers[0], centers[1], assign)
}

/// Starting values: centers and labels by two-means on per-individual mean
/// positions (the western cluster is CS), covariances from within-cluster
/// spread, σ² from mean squared daily displacement, τ², a, b at prior means.
pub fn initialize(data: &FitData, priors: &PriorConfig, seed: u64) -> Result<(ModelParams, Vec<SubPop>)> {
    if data.is_empty() {
        return Err(Error::Data("no individuals to initialize from".into()));
    }
    let paths: Vec<_> = data.individuals.iter().map(|i| &i.imputations[0]).collect();
    let means: Vec<Point2> = paths.iter().map(|p| p.mean).collect();
    let (mut c0, mut c1, mut assign) = two_means(&means, seed);
    if c1.x < c0.x {
        std::mem::swap(&mut c0, &mut c1);
        assign.iter_mut().for_each(|a| *a = 1 - *a);
    }
    if c1.x - c0.x < 1.0 {
        c0.x -= 0.5;
        c1.x += 0.5;
    }
    // cluster 0 is western, so CS
    let labels: Vec<SubPop> = assign
        .iter()
        .map(|&a| if a == 0 { SubPop::Cs } else { SubPop::Sb })
        .collect();
    let fallback = Mat2::scaled_identity(priors.log_eig.mean.exp());
    let spread = |k: usize, center: Point2| -> Mat2 {
        let mut s = Mat2::ZERO;
        let mut n = 0usize;
        for (path, _) in paths.iter().zip(&assign).filter(|(_, a)| **a == k) {
            for x in path.starts.iter().chain(path.steps.iter().map(|s| &s.x)) {
                let d = *x - center;
                s = s + Mat2::new(d.x * d.x, d.x * d.y, d.y * d.x, d.y * d.y);
                n += 1;
            }
        }
        if n < 3 {
            return fallback;
        }
        let cov = s.scale(1.0 / n as f64).symmetrized();
        match CovSpectral::from_matrix(&cov) {
            Ok(c) if c.log_eig2 > 0.0 => cov,
            _ => fallback,
        }
    };
    let steps: Vec<f64> = paths.iter().filter(|p| p.num_steps() > 0).map(|p| p.mean_sq_step).collect();
    let sigma2 = if steps.is_empty() {
        priors.sigma2.mean().unwrap_or(priors.sigma2.scale)
    } else {
        (steps.iter().sum::<f64>() / steps.len() as f64 / 2.0).max(1e-6)
    };
    let params = ModelParams {
        sigma2,
        tau2: priors.tau2.mean().unwrap_or(priors.tau2.scale),
        season: Season::new(priors.a.mean, priors.b.mean)?,
        center_cs: c0,
        center_sb: c1,
        cov_cs: spread(0, c0),
        cov_sb: spread(1, c1),
    };
    params.validate()?;
    Ok((params, labels))
}
