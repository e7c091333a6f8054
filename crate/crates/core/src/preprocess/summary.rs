use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::ln_binom_half_pmf;

/// Robust summary of one cluster of readings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub median: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
    /// Exact coverage of the reported order-statistic interval.
    pub coverage: f64,
}

/// A cluster summary tagged with the cluster's mid-time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedSummary {
    pub mid_time: f64,
    pub summary: ClusterSummary,
}

/// Coverage 1 − 2·P(B ≤ r − 1) of (x_(r), x_(n+1−r)) for B ~ Bin(n, 1/2).
fn interval_coverage(n: usize, r: usize) -> f64 {
    let tail: f64 = (0..r).map(|k| ln_binom_half_pmf(n as u64, k as u64).exp()).sum();
    1.0 - 2.0 * tail
}

/// Sample median with the distribution-free order-statistic interval
/// (x_(r), x_(n+1−r)), r the largest index whose binomial(n, 1/2)
/// coverage is at least `confidence`.
pub fn summarize_cluster(values: &[f64], confidence: f64) -> Result<ClusterSummary> {
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptyCluster);
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    };

    let mut r = 0;
    let mut coverage = 0.0;
    let mut tail = 0.0;
    for cand in 1..=n.div_ceil(2) {
        tail += ln_binom_half_pmf(n as u64, (cand - 1) as u64).exp();
        let cov = 1.0 - 2.0 * tail;
        if cov >= confidence {
            r = cand;
            coverage = cov;
        } else {
            break;
        }
    }
    if r == 0 {
        log::warn!("cluster of {n} points cannot reach {confidence} coverage; reporting (min, max)");
        r = 1;
        coverage = interval_coverage(n, 1).max(0.0);
    }
    Ok(ClusterSummary {
        median,
        ci_lo: x[r - 1],
        ci_hi: x[n - r],
        n,
        coverage,
    })
}

/// Subtract from each sample median the buffer baseline linearly
/// interpolated in time between the leading and trailing buffer medians.
pub fn baseline_correct(
    samples: &[TimedSummary],
    buffer_first: Option<&TimedSummary>,
    buffer_last: Option<&TimedSummary>,
) -> Result<Vec<f64>> {
    let (first, last) = match (buffer_first, buffer_last) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::MissingBaseline),
    };
    let span = last.mid_time - first.mid_time;
    Ok(samples
        .iter()
        .map(|s| {
            let w = if span != 0.0 {
                (s.mid_time - first.mid_time) / span
            } else {
                0.0
            };
            let base = first.summary.median + w * (last.summary.median - first.summary.median);
            s.summary.median - base
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use num_rational::BigRational;
    use num_traits::{One, ToPrimitive, Zero};
    use proptest::prelude::*;

    fn timed(t: f64, median: f64) -> TimedSummary {
        TimedSummary {
            mid_time: t,
            summary: ClusterSummary {
                median,
                ci_lo: median,
                ci_hi: median,
                n: 1,
                coverage: 0.0,
            },
        }
    }

    fn binom(n: u64, k: u64) -> BigUint {
        let mut acc = BigUint::one();
        for i in 0..k {
            acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
        }
        acc
    }

    /// Exact coverage 1 − 2·Σ_{k<r} C(n,k)/2^n in rational arithmetic.
    fn exact_coverage(n: u64, r: u64) -> BigRational {
        let mut tail = BigUint::zero();
        for k in 0..r {
            tail += binom(n, k);
        }
        let denom = BigUint::one() << n;
        BigRational::one()
            - BigRational::new((tail * 2u32).into(), denom.into())
    }

    #[test]
    fn singleton() {
        let s = summarize_cluster(&[5.0], 0.95).unwrap();
        assert_eq!((s.median, s.ci_lo, s.ci_hi, s.n), (5.0, 5.0, 5.0, 1));
        assert!(matches!(summarize_cluster(&[], 0.95), Err(Error::EmptyCluster)));
    }

    #[test]
    fn one_to_hundred_matches_exact_binomial_table() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summarize_cluster(&v, 0.95).unwrap();
        assert_eq!(s.median, 50.5);
        let target = BigRational::new(95.into(), 100.into());
        let r = (1..=50u64)
            .take_while(|&r| exact_coverage(100, r) >= target)
            .last()
            .unwrap();
        assert_eq!(r, 40);
        assert_eq!((s.ci_lo, s.ci_hi), (r as f64, (101 - r) as f64));
        let cov = exact_coverage(100, r).to_f64().unwrap();
        assert!((s.coverage - cov).abs() < 1e-12);
    }

    #[test]
    fn small_n_exact_r() {
        for n in 6..40u64 {
            let v: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            let s = summarize_cluster(&v, 0.9).unwrap();
            let target = BigRational::new(9.into(), 10.into());
            let r = (1..=n.div_ceil(2))
                .take_while(|&r| exact_coverage(n, r) >= target)
                .last()
                .unwrap();
            assert_eq!(s.ci_lo, r as f64, "n={n}");
        }
    }

    #[test]
    fn symmetric_values() {
        let v: Vec<f64> = (-7..=7).map(f64::from).collect();
        let s = summarize_cluster(&v, 0.95).unwrap();
        assert_eq!(s.median, 0.0);
        assert_eq!(s.ci_lo, -s.ci_hi);
    }

    #[test]
    fn baseline_examples() {
        let samples = [timed(1.0, 3.0), timed(2.0, 7.0)];
        let zero = baseline_correct(&samples, Some(&timed(0.0, 0.0)), Some(&timed(3.0, 0.0))).unwrap();
        assert_eq!(zero, vec![3.0, 7.0]);
        let shifted = baseline_correct(&samples, Some(&timed(0.0, 2.0)), Some(&timed(3.0, 2.0))).unwrap();
        assert_eq!(shifted, vec![1.0, 5.0]);
        let mid = [timed(5.0, 4.0)];
        let drift = baseline_correct(&mid, Some(&timed(0.0, 0.0)), Some(&timed(10.0, 1.0))).unwrap();
        assert_eq!(drift, vec![3.5]);
        assert!(matches!(baseline_correct(&mid, None, Some(&timed(1.0, 0.0))), Err(Error::MissingBaseline)));
    }

    #[test]
    fn buffers_correct_to_zero() {
        let f = timed(0.0, 1.3);
        let l = timed(9.0, 2.1);
        let out = baseline_correct(&[f, l], Some(&f), Some(&l)).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn median_permutation_invariant(mut v in prop::collection::vec(-1e3f64..1e3, 1..50), seed in 0u64..100) {
            let a = summarize_cluster(&v, 0.95).unwrap();
            let n = v.len();
            v.rotate_left(seed as usize % n);
            v.reverse();
            let b = summarize_cluster(&v, 0.95).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a.ci_lo <= a.median && a.median <= a.ci_hi);
        }

        #[test]
        fn median_monotone_equivariant(half in prop::collection::vec(-10.0f64..10.0, 0..20), extra in -10.0f64..10.0) {
            let mut v = half.clone();
            v.extend(half.iter().map(|x| x + 0.5));
            v.push(extra);
            let f = |x: f64| x.exp() + 3.0 * x;
            let m = summarize_cluster(&v, 0.95).unwrap().median;
            let fv: Vec<f64> = v.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(summarize_cluster(&fv, 0.95).unwrap().median, f(m));
        }
    }
}
