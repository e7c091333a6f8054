//! End-to-end cleaning of one condition's traces into a [`ConditionData`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::cluster::{agglomerate, ClusterAssignment};
use super::instability::{trim_values, TrimOutcome};
use super::summary::{baseline_correct, summarize_cluster, ClusterSummary, TimedSummary};
use crate::domain::{convert_concentration, ConditionData, LevelObservation, RawTrace, RunData};
use crate::error::{Error, Result};

/// Injection design for one run: nominal concentrations in injection
/// order, between a leading and a trailing buffer-only segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanDesign {
    pub schema_version: u32,
    pub condition_id: String,
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<f64>,
    /// Nominal concentrations, mg/mL.
    pub concentrations_mg_ml: Vec<f64>,
    /// Measured concentrations c^m, mg/mL; the nominal values when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_mg_ml: Option<Vec<f64>>,
    /// Which levels contribute RI readings; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ri_included: Option<Vec<bool>>,
}

fn default_run_id() -> String {
    "run1".to_string()
}

impl CleanDesign {
    pub fn validate(&self) -> Result<()> {
        let n = self.concentrations_mg_ml.len();
        if n == 0 {
            return Err(Error::InvalidInput("design lists no concentrations".into()));
        }
        for &c in &self.concentrations_mg_ml {
            convert_concentration(c)?;
        }
        if let Some(m) = &self.measured_mg_ml {
            if m.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "measured_mg_ml has {} entries, design has {n}",
                    m.len()
                )));
            }
        }
        if let Some(f) = &self.ri_included {
            if f.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "ri_included has {} entries, design has {n}",
                    f.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub tau: f64,
    pub smooth: bool,
    pub confidence: f64,
    /// Channel whose readings are summarized (the 90° detector for LS).
    pub reference_channel: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            tau: super::DEFAULT_TAU,
            smooth: false,
            confidence: 0.95,
            reference_channel: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterRole {
    LeadingBuffer,
    Sample,
    TrailingBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster: usize,
    pub role: ClusterRole,
    /// Design level index for sample clusters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    pub t_start: f64,
    pub t_end: f64,
    pub mid_time: f64,
    pub summary: ClusterSummary,
    /// Baseline-corrected median.
    pub corrected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceCleaning {
    /// Union trim over channels: a point is kept only if every channel keeps it.
    pub trim: TrimOutcome,
    pub assignment: ClusterAssignment,
    pub clusters: Vec<ClusterReport>,
}

impl TraceCleaning {
    pub fn sample_values(&self) -> Vec<f64> {
        self.clusters
            .iter()
            .filter(|c| c.role == ClusterRole::Sample)
            .map(|c| c.corrected)
            .collect()
    }
}

fn union_trim(trace: &RawTrace, cfg: &CleanConfig) -> Result<TrimOutcome> {
    let mut merged: Option<TrimOutcome> = None;
    for j in 0..trace.n_channels() {
        let y = trace.channel(j)?;
        let t = trim_values(&y, &trace.times, cfg.tau, cfg.smooth)?;
        merged = Some(match merged {
            None => t,
            Some(m) => {
                let keep_b = t.kept_mask();
                TrimOutcome {
                    kept: m.kept.into_iter().filter(|&i| keep_b[i]).collect(),
                    scores: m.scores.iter().zip(&t.scores).map(|(a, b)| a.max(*b)).collect(),
                    degenerate_spread: m.degenerate_spread || t.degenerate_spread,
                }
            }
        });
    }
    merged.ok_or_else(|| Error::InvalidInput("trace has no channels".into()))
}

/// Trim, cluster into `n_levels + 2` segments and summarize one trace.
/// The first and last clusters are treated as buffers.
pub fn clean_trace(trace: &RawTrace, n_levels: usize, cfg: &CleanConfig) -> Result<TraceCleaning> {
    if cfg.reference_channel >= trace.n_channels() {
        return Err(Error::InvalidInput(format!(
            "reference channel {} out of range for {} channels",
            cfg.reference_channel,
            trace.n_channels()
        )));
    }
    let trim = union_trim(trace, cfg)?;
    let points: Vec<Vec<f64>> = trim.kept.iter().map(|&i| trace.row(i).to_vec()).collect();
    let k = n_levels + 2;
    let assignment = agglomerate(&points, k)?;

    let mut timed = Vec::with_capacity(k);
    let mut spans = Vec::with_capacity(k);
    for range in assignment.ranges() {
        let idx = &trim.kept[range];
        let values: Vec<f64> = idx
            .iter()
            .map(|&i| trace.row(i)[cfg.reference_channel])
            .collect();
        let summary = summarize_cluster(&values, cfg.confidence)?;
        let t_start = trace.times[idx[0]];
        let t_end = trace.times[*idx.last().unwrap()];
        let mid_time = 0.5 * (t_start + t_end);
        spans.push((t_start, t_end));
        timed.push(TimedSummary { mid_time, summary });
    }
    let corrected = baseline_correct(&timed, timed.first(), timed.last())?;

    let clusters = timed
        .iter()
        .zip(spans)
        .zip(corrected)
        .enumerate()
        .map(|(c, ((ts, (t_start, t_end)), corrected))| {
            let (role, level) = if c == 0 {
                (ClusterRole::LeadingBuffer, None)
            } else if c == k - 1 {
                (ClusterRole::TrailingBuffer, None)
            } else {
                (ClusterRole::Sample, Some(c - 1))
            };
            ClusterReport {
                cluster: c,
                role,
                level,
                t_start,
                t_end,
                mid_time: ts.mid_time,
                summary: ts.summary,
                corrected,
            }
        })
        .collect();
    Ok(TraceCleaning {
        trim,
        assignment,
        clusters,
    })
}

/// Build the condition entry from a cleaned LS trace and optional RI trace.
pub fn assemble_condition(
    design: &CleanDesign,
    ls: &TraceCleaning,
    ri: Option<&TraceCleaning>,
) -> Result<ConditionData> {
    design.validate()?;
    let rayleigh = ls.sample_values();
    let dn = ri.map(|r| r.sample_values());
    let n = design.concentrations_mg_ml.len();
    let measured = design
        .measured_mg_ml
        .as_ref()
        .unwrap_or(&design.concentrations_mg_ml);
    let mut levels = Vec::with_capacity(n);
    for i in 0..n {
        let delta_n = dn.as_ref().map(|d| d[i]);
        let wanted = design.ri_included.as_ref().is_none_or(|f| f[i]);
        let ri_included = wanted && delta_n.is_some_and(|d| d > 0.0);
        if wanted && delta_n.is_some() && !ri_included {
            log::warn!(
                "level {i}: non-positive baseline-corrected RI reading excluded from the fit"
            );
        }
        levels.push(LevelObservation {
            level: i,
            c_meas: convert_concentration(measured[i])?,
            rayleigh: Some(rayleigh[i]),
            delta_n,
            ri_included,
            ls_included: true,
        });
    }
    Ok(ConditionData {
        condition_id: design.condition_id.clone(),
        n0: design.n0,
        runs: vec![RunData {
            run_id: design.run_id.clone(),
            levels,
        }],
    })
}

/// Plot-ready CSV `time,value,kept,cluster` for the reference channel.
pub fn write_points_csv<W: Write>(
    trace: &RawTrace,
    cleaning: &TraceCleaning,
    channel: usize,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "value", "kept", "cluster"])?;
    let mut cluster_of = vec![None; trace.len()];
    for (&i, &label) in cleaning.trim.kept.iter().zip(&cleaning.assignment.labels) {
        cluster_of[i] = Some(label);
    }
    for (i, label) in cluster_of.iter().enumerate() {
        w.write_record([
            trace.times[i].to_string(),
            trace.row(i)[channel].to_string(),
            u8::from(label.is_some()).to_string(),
            label.map(|l| l.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// One row per cluster: `trace,cluster,role,level,t_start,t_end,n,median,ci_lo,ci_hi,corrected`.
pub fn write_cluster_csv<W: Write>(traces: &[(&str, &TraceCleaning)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "trace", "cluster", "role", "level", "t_start", "t_end", "n", "median", "ci_lo", "ci_hi",
        "corrected",
    ])?;
    for (name, cleaning) in traces {
        for c in &cleaning.clusters {
            let role = match c.role {
                ClusterRole::LeadingBuffer => "leading_buffer",
                ClusterRole::Sample => "sample",
                ClusterRole::TrailingBuffer => "trailing_buffer",
            };
            w.write_record([
                name.to_string(),
                c.cluster.to_string(),
                role.to_string(),
                c.level.map(|l| l.to_string()).unwrap_or_default(),
                c.t_start.to_string(),
                c.t_end.to_string(),
                c.summary.n.to_string(),
                c.summary.median.to_string(),
                c.summary.ci_lo.to_string(),
                c.summary.ci_hi.to_string(),
                c.corrected.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
