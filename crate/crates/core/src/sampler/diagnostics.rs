use super::draws::PosteriorDraws;
use crate::error::{Error, Result};
use crate::stats::{mean, variance};

pub use crate::stats::effective_sample_size;

/// Split-chain potential scale reduction factor of one parameter. Each
/// chain is cut into two halves (the middle draw is dropped for odd
/// lengths) and the halves are treated as separate chains.
pub fn gelman_rubin(draws: &PosteriorDraws, param: &str) -> Result<f64> {
    let idx = draws.param_index(param)?;
    gelman_rubin_series(&draws.chain_columns(idx))
}

pub(crate) fn gelman_rubin_series(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::TooFewChains {
            needed: 2,
            got: chains.len(),
        });
    }
    let shortest = chains.iter().map(Vec::len).min().unwrap_or(0);
    if shortest < 10 {
        return Err(Error::TooFewDraws {
            needed: 10,
            got: shortest,
        });
    }
    let half = shortest / 2;
    let mut pieces: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c[..shortest];
        pieces.push(&c[..half]);
        pieces.push(&c[shortest - half..]);
    }
    let n = half as f64;
    let m = pieces.len() as f64;
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let w = pieces.iter().map(|p| variance(p)).sum::<f64>() / m;
    let b = n * variance(&means);
    if w <= 0.0 {
        return Ok(if b <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

/// Monte Carlo standard error of the pooled mean, using the summed
/// per-chain effective sample sizes.
pub fn mcse_mean(chains: &[Vec<f64>]) -> f64 {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let ess: f64 = chains.iter().map(|c| effective_sample_size(c)).sum();
    (variance(&pooled) / ess.max(1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn iid_chains_give_r_hat_near_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..1000).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let r = gelman_rubin_series(&chains).unwrap();
        assert!((0.99..=1.05).contains(&r), "{r}");
    }

    #[test]
    fn separated_constant_chains_diverge() {
        let chains = vec![vec![0.0; 50], vec![1.0; 50]];
        assert!(gelman_rubin_series(&chains).unwrap() > 10.0);
        let wiggle = vec![
            (0..50).map(|i| (i % 2) as f64 * 1e-3).collect::<Vec<_>>(),
            (0..50).map(|i| 1.0 + (i % 2) as f64 * 1e-3).collect(),
        ];
        assert!(gelman_rubin_series(&wiggle).unwrap() > 10.0);
    }

    #[test]
    fn mirrored_chain_is_exactly_converged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let half: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
        let chain: Vec<f64> = half.iter().chain(&half).copied().collect();
        let r = gelman_rubin_series(&[chain.clone(), chain]).unwrap();
        assert!(r <= 1.0 + 1e-9, "{r}");
    }

    #[test]
    fn preconditions() {
        assert!(matches!(
            gelman_rubin_series(&[vec![0.0; 100]]),
            Err(Error::TooFewChains { .. })
        ));
        assert!(matches!(
            gelman_rubin_series(&[vec![0.0; 5], vec![0.0; 5]]),
            Err(Error::TooFewDraws { .. })
        ));
    }
}
