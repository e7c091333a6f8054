//! Small numeric helpers shared across modules: order statistics, normal
//! and inverse-gamma log densities, truncated-normal sampling, and
//! autocorrelation-based effective sample size.

use std::f64::consts::{LN_2, PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use libm::{erfc, lgamma as ln_gamma};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Sample median of an unsorted slice. Even lengths average the two
/// central order statistics. Returns `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let lower = v[..mid]
            .iter()
            .copied()
            .max_by(f64::total_cmp)
            .expect("non-empty lower half");
        Some(0.5 * (lower + upper))
    }
}

/// Median in place; reorders `values`.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = lower.iter().copied().max_by(f64::total_cmp).unwrap();
        0.5 * (lower + upper)
    }
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// log Φ(x), accurate in both tails.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else if x > -30.0 {
        (0.5 * erfc(-x / SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic expansion.
        let x2 = x * x;
        -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Log density of N(mean, variance) at x.
#[inline]
pub fn ln_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * variance).ln() - 0.5 * d * d / variance
}

/// Log density of N(mean, sd²) truncated to (0, ∞), including the
/// normalizing constant −log Φ(mean/sd). Zero support below 0.
#[inline]
pub fn ln_trunc_normal_pos_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    ln_normal_pdf(x, mean, sd * sd) - ln_norm_cdf(mean / sd)
}

/// Log density of the inverse-gamma distribution with shape `a` and
/// rate (scale) `b`.
#[inline]
pub fn ln_inv_gamma_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

/// Log density of LN(0, sigma2) at u.
#[inline]
pub fn ln_lognormal0_pdf(u: f64, sigma2: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let lu = u.ln();
    -lu - 0.5 * (2.0 * PI * sigma2).ln() - 0.5 * lu * lu / sigma2
}

/// Draw from N(mean, sd²) truncated to (0, ∞).
///
/// Plain rejection when the mode sits at or above about one standard
/// deviation below zero; otherwise the exponential-proposal rejection
/// sampler of Robert for a standardized lower bound.
pub fn sample_trunc_normal_pos<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    let lower = -mean / sd;
    if lower < 1.0 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > lower {
                return mean + sd * z;
            }
        }
    }
    let alpha = 0.5 * (lower + (lower * lower + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = lower + e / alpha;
        let rho = (-0.5 * (z - alpha).powi(2)).exp();
        if rng.random::<f64>() <= rho {
            return mean + sd * z;
        }
    }
}

/// Draw from the inverse-gamma distribution with shape `a`, rate `b`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let g = rand_distr::Gamma::new(a, 1.0 / b).expect("valid gamma parameters");
    1.0 / g.sample(rng)
}

/// ln C(n, k) − n ln 2, the log binomial(n, 1/2) mass at k.
pub(crate) fn ln_binom_half_pmf(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
        - n as f64 * LN_2
}

/// Effective sample size of a single series using Geyer's initial
/// positive sequence on the autocorrelations.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - m).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
            / c0
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    let tau = tau.max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64 * (n as f64).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn quantile_type7_matches_hand_values() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn ln_norm_cdf_tails() {
        assert!((ln_norm_cdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
        // Φ(3) = 0.99865010196836990...
        let v3 = ln_norm_cdf(3.0);
        assert!((v3 - (-0.001_350_809_964_748_193_8)).abs() < 1e-17, "{v3:e}");
        // Φ(-40) ≈ 3.655893540915e-350 underflows; compare on the log scale.
        let v = ln_norm_cdf(-40.0);
        assert!((v - (-804.608_442_013_754)).abs() < 1e-6, "{v}");
        // continuity at the switch point
        assert!((ln_norm_cdf(-30.0 + 1e-9) - ln_norm_cdf(-30.0 - 1e-9)).abs() < 1e-6);
    }

    #[test]
    fn trunc_normal_samples_positive_and_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_trunc_normal_pos(&mut rng, 5.0, 1.0))
            .collect();
        assert!(draws.iter().all(|&x| x > 0.0));
        assert!((mean(&draws) - 5.0).abs() < 0.05);
        // deep-tail branch: mean −3 sd below zero
        let tail: Vec<f64> = (0..n)
            .map(|_| sample_trunc_normal_pos(&mut rng, -3.0, 1.0))
            .collect();
        assert!(tail.iter().all(|&x| x > 0.0));
        // E[Z | Z > 3] − 3 for a standard normal is φ(3)/Q(3) − 3 ≈ 0.2832
        assert!((mean(&tail) - 0.2832).abs() < 0.01, "{}", mean(&tail));
    }

    #[test]
    fn ess_of_iid_is_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
        let ess = effective_sample_size(&x);
        assert!(ess > 3000.0 && ess < 5000.0, "{ess}");
    }
}
