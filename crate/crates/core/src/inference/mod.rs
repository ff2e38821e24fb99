//! Stage two: MCMC over the hierarchical step model given daily paths.

mod data;
mod init;
mod mcmc;
mod priors;
mod summary;

pub use data::{FitData, Individual, PathData};
pub use init::{initialize, two_means};
pub use mcmc::{
    log_posterior, mcmc_fit, run_chain, start_chain, z_full_conditional, Checkpoint, Draw, McmcConfig,
    PosteriorSamples, Updates, BLOCK_NAMES,
};
pub use priors::{CovSpectral, InvGamma, Normal1, PriorConfig};
pub use summary::{label_probabilities, label_probabilities_of, summarize, summarize_draws, ParamSummary};
