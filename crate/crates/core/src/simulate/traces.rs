//! Synthetic instrument traces with known plateaus, injection transients
//! and spikes, for exercising the cleaning pipeline.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::{RawTrace, TraceKind};
use crate::error::Result;
use crate::preprocess::pipeline::TraceCleaning;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSpec {
    /// Plateaus including the leading and trailing buffer.
    pub n_plateaus: usize,
    pub noise_sd: f64,
    pub plateau_len: (usize, usize),
    pub transition_len: (usize, usize),
    /// Step between consecutive sample plateaus, in units of `noise_sd`.
    pub step_sd: (f64, f64),
    /// Fluctuation sd inside a transition, in units of `noise_sd`.
    pub turbulence_sd: (f64, f64),
    pub n_spikes: usize,
    /// Spike height range, in units of `noise_sd`.
    pub spike_sd: (f64, f64),
    pub dt: f64,
}

impl TraceSpec {
    pub fn with_plateaus(n_plateaus: usize) -> Self {
        TraceSpec {
            n_plateaus,
            noise_sd: 1e-7,
            plateau_len: (60, 150),
            transition_len: (10, 30),
            step_sd: (10.0, 60.0),
            turbulence_sd: (20.0, 40.0),
            n_spikes: 5,
            spike_sd: (20.0, 50.0),
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTrace {
    pub trace: RawTrace,
    /// Noise-free level of each plateau.
    pub levels: Vec<f64>,
    /// Per-point plateau index; `None` inside transitions.
    pub plateau: Vec<Option<usize>>,
    /// Transient or spike points that cleaning should remove.
    pub artifact: Vec<bool>,
    /// Non-artifact points whose neighbours are also non-artifact.
    pub stable: Vec<bool>,
    /// Half-open index range of each transition between plateaus.
    pub transitions: Vec<(usize, usize)>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Plateaus sit at increasing multiples of the noise sd starting from a
/// baseline, the trailing buffer returns to the baseline, and each
/// transition is a linear ramp buried in large fluctuations.
pub fn generate_trace<R: Rng + ?Sized>(spec: &TraceSpec, rng: &mut R) -> Result<SyntheticTrace> {
    let s = spec.noise_sd;
    let baseline = 1e-5;
    let k = spec.n_plateaus.max(2);
    let mut levels = vec![baseline];
    for _ in 1..k - 1 {
        let prev = *levels.last().unwrap();
        levels.push(prev + uniform(rng, spec.step_sd) * s);
    }
    levels.push(baseline);

    let mut values = Vec::new();
    let mut plateau = Vec::new();
    let mut transitions = Vec::new();
    for (p, &level) in levels.iter().enumerate() {
        if p > 0 {
            let m = rng.random_range(spec.transition_len.0..=spec.transition_len.1);
            let from = levels[p - 1];
            let amp = uniform(rng, spec.turbulence_sd) * s;
            let start = values.len();
            for i in 0..m {
                let f = (i + 1) as f64 / (m + 1) as f64;
                let z: f64 = rng.sample(StandardNormal);
                values.push(from + f * (level - from) + amp * z);
                plateau.push(None);
            }
            transitions.push((start, values.len()));
        }
        let n = rng.random_range(spec.plateau_len.0..=spec.plateau_len.1);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            values.push(level + s * z);
            plateau.push(Some(p));
        }
    }

    let n = values.len();
    let mut artifact: Vec<bool> = plateau.iter().map(Option::is_none).collect();
    let mut placed = 0;
    while placed < spec.n_spikes {
        let i = rng.random_range(1..n - 1);
        if artifact[i - 1] || artifact[i] || artifact[i + 1] {
            continue;
        }
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        values[i] += sign * uniform(rng, spec.spike_sd) * s;
        artifact[i] = true;
        placed += 1;
    }
    let stable = (0..n)
        .map(|i| {
            !artifact[i] && (i == 0 || !artifact[i - 1]) && (i + 1 == n || !artifact[i + 1])
        })
        .collect();
    let times = (0..n).map(|i| i as f64 * spec.dt).collect();
    Ok(SyntheticTrace {
        trace: RawTrace::single(TraceKind::LightScattering, times, values)?,
        levels,
        plateau,
        artifact,
        stable,
        transitions,
    })
}

/// Counts comparing a cleaning run with the generator's ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CleaningScore {
    pub artifacts: usize,
    pub artifacts_removed: usize,
    pub stable: usize,
    pub stable_removed: usize,
    /// Every recovered cluster boundary falls inside its true transition
    /// widened by `slack` points on each side.
    pub boundaries_ok: bool,
}

impl CleaningScore {
    pub fn add(&mut self, other: &CleaningScore) {
        self.artifacts += other.artifacts;
        self.artifacts_removed += other.artifacts_removed;
        self.stable += other.stable;
        self.stable_removed += other.stable_removed;
    }
}

pub fn score_cleaning(truth: &SyntheticTrace, cleaning: &TraceCleaning, slack: usize) -> CleaningScore {
    let kept = cleaning.trim.kept_mask();
    let mut score = CleaningScore::default();
    for i in 0..kept.len() {
        if truth.artifact[i] {
            score.artifacts += 1;
            score.artifacts_removed += usize::from(!kept[i]);
        }
        if truth.stable[i] {
            score.stable += 1;
            score.stable_removed += usize::from(!kept[i]);
        }
    }
    // a split sits somewhere in the gap between the last kept point of one
    // cluster and the first kept point of the next
    let gaps: Vec<(usize, usize)> = cleaning
        .assignment
        .boundaries()
        .iter()
        .map(|&b| (cleaning.trim.kept[b - 1] + 1, cleaning.trim.kept[b]))
        .collect();
    score.boundaries_ok = gaps.len() == truth.transitions.len()
        && gaps.iter().zip(&truth.transitions).all(|(&(lo, hi), &(start, end))| {
            hi + slack >= start && lo <= end + slack
        });
    score
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masks_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = generate_trace(&TraceSpec::with_plateaus(5), &mut rng).unwrap();
        assert_eq!(t.levels.len(), 5);
        assert_eq!(t.transitions.len(), 4);
        assert_eq!(t.trace.len(), t.artifact.len());
        for (i, s) in t.stable.iter().enumerate() {
            if *s {
                assert!(!t.artifact[i] && t.plateau[i].is_some());
            }
        }
        let spikes = t
            .artifact
            .iter()
            .zip(&t.plateau)
            .filter(|(a, p)| **a && p.is_some())
            .count();
        assert_eq!(spikes, 5);
    }
}
