use crate::domain::RawTrace;
use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// Local absolute time-derivative estimates ŝ at the interior points of a
/// trace (index k here is trace point k + 1).
#[derive(Debug, Clone, PartialEq)]
pub struct InstabilitySeries {
    pub values: Vec<f64>,
}

impl InstabilitySeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn abs_slope(y: &[f64], t: &[f64], i: usize) -> f64 {
    (y[i + 1] - y[i]).abs() / (t[i + 1] - t[i])
}

pub(crate) fn instability_of(y: &[f64], t: &[f64]) -> Result<InstabilitySeries> {
    if y.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: y.len(),
        });
    }
    let values = (1..y.len() - 1)
        .map(|i| 0.5 * (abs_slope(y, t, i) + abs_slope(y, t, i - 1)))
        .collect();
    Ok(InstabilitySeries { values })
}

/// ŝ_i = ( |y_{i+1}−y_i|/(t_{i+1}−t_i) + |y_i−y_{i−1}|/(t_i−t_{i−1}) ) / 2 for
/// every interior point of one channel.
pub fn instability(trace: &RawTrace, channel: usize) -> Result<InstabilitySeries> {
    let y = trace.channel(channel)?;
    instability_of(&y, &trace.times)
}

/// Three-point moving average of ŝ. The two boundary entries use the
/// available two-point mean so the length is preserved.
pub fn smooth_instability(s: &InstabilitySeries) -> Result<InstabilitySeries> {
    let v = &s.values;
    let n = v.len();
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: n });
    }
    let mut out = Vec::with_capacity(n);
    out.push(0.5 * (v[0] + v[1]));
    for i in 1..n - 1 {
        out.push((v[i - 1] + v[i] + v[i + 1]) / 3.0);
    }
    out.push(0.5 * (v[n - 2] + v[n - 1]));
    Ok(InstabilitySeries { values: out })
}

/// Result of trimming one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimOutcome {
    /// Retained trace indices, increasing.
    pub kept: Vec<usize>,
    /// Standardized instability (ŝ − Q50)/IQR for every trace point.
    pub scores: Vec<f64>,
    /// IQR of ŝ was zero; scores use x/0 = +∞ for x > 0 and 0 for x = 0.
    pub degenerate_spread: bool,
}

impl TrimOutcome {
    pub fn kept_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.scores.len()];
        for &i in &self.kept {
            mask[i] = true;
        }
        mask
    }
}

fn standardize(x: f64, center: f64, spread: f64) -> f64 {
    let d = x - center;
    if spread > 0.0 {
        d / spread
    } else if d > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub(crate) fn trim_values(y: &[f64], t: &[f64], tau: f64, use_smoothing: bool) -> Result<TrimOutcome> {
    let raw = instability_of(y, t)?;
    let s = if use_smoothing && raw.len() >= 3 {
        smooth_instability(&raw)?
    } else {
        raw
    };
    let mut sorted = s.values.clone();
    sorted.sort_by(f64::total_cmp);
    let q50 = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let degenerate_spread = !(iqr > 0.0);
    if degenerate_spread {
        log::warn!("instability IQR is zero; only points above the median can be trimmed");
    }

    let n = y.len();
    let mut scores = Vec::with_capacity(n);
    scores.push(standardize(abs_slope(y, t, 0), q50, iqr));
    scores.extend(s.values.iter().map(|&v| standardize(v, q50, iqr)));
    scores.push(standardize(abs_slope(y, t, n - 2), q50, iqr));

    let kept = scores
        .iter()
        .enumerate()
        .filter(|(_, &z)| z <= tau)
        .map(|(i, _)| i)
        .collect();
    Ok(TrimOutcome {
        kept,
        scores,
        degenerate_spread,
    })
}

/// Drop points whose standardized instability (ŝ − Q50(ŝ)) / IQR(ŝ)
/// exceeds `tau`. Endpoints are scored with their single one-sided slope
/// against the same median and IQR.
pub fn trim(trace: &RawTrace, channel: usize, tau: f64, use_smoothing: bool) -> Result<TrimOutcome> {
    let y = trace.channel(channel)?;
    trim_values(&y, &trace.times, tau, use_smoothing)
}
