//! Artifact removal, temporal clustering of stable readings into
//! concentration levels, and robust per-level summaries.

mod cluster;
mod instability;
pub mod pipeline;
mod summary;

pub use cluster::{agglomerate, cluster_merge_cost, merge_penalty, ClusterAssignment};
pub use instability::{instability, smooth_instability, trim, InstabilitySeries, TrimOutcome};
pub use summary::{baseline_correct, summarize_cluster, ClusterSummary, TimedSummary};

/// Default instability threshold τ.
pub const DEFAULT_TAU: f64 = 1.0;
