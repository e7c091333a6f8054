//! Adaptive random-walk Metropolis-within-Gibbs over [`LatentState`],
//! multi-chain orchestration and convergence diagnostics.

mod chain;
mod diagnostics;
mod draws;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use chain::{initial_state, run_chain, run_chains};
pub use diagnostics::{effective_sample_size, gelman_rubin, mcse_mean};
pub use draws::{ChainDraws, PosteriorDraws};

/// MCMC run settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Iterations between proposal-scale updates during burn-in.
    #[serde(default = "default_window")]
    pub adapt_window: usize,
    #[serde(default = "default_target")]
    pub target_accept: f64,
}

fn default_window() -> usize {
    50
}

fn default_target() -> f64 {
    0.44
}

impl ChainConfig {
    /// 5 chains × 300000 iterations, burn-in 200000, every 250th kept.
    pub fn production(seed: u64) -> Self {
        ChainConfig {
            n_iter: 300_000,
            burn_in: 200_000,
            thin: 250,
            n_chains: 5,
            seed,
            adapt_window: default_window(),
            target_accept: default_target(),
        }
    }

    /// 2 chains × 30000 iterations, burn-in 20000, every 25th kept.
    pub fn desk(seed: u64) -> Self {
        ChainConfig {
            n_iter: 30_000,
            burn_in: 20_000,
            thin: 25,
            n_chains: 2,
            ..Self::production(seed)
        }
    }

    /// Retained draws per chain, floor((n_iter − burn_in) / thin).
    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.burn_in >= self.n_iter {
            return Err(Error::InvalidInput(format!(
                "need 0 <= burn_in < n_iter, got burn_in={} n_iter={}",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 || self.n_chains == 0 || self.adapt_window == 0 {
            return Err(Error::InvalidInput(
                "thin, n_chains and adapt_window must be >= 1".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidInput("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
