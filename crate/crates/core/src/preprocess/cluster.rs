use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::median_in_place;

/// Temporally contiguous cluster labels for a sequence of retained points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// One label per point, non-decreasing, covering 0..k.
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    /// Half-open point ranges of each cluster, in label order.
    pub fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.k);
        let mut start = 0;
        for i in 1..=self.labels.len() {
            if i == self.labels.len() || self.labels[i] != self.labels[start] {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// Indices `i` where a new cluster starts at point `i` (excluding 0).
    pub fn boundaries(&self) -> Vec<usize> {
        self.ranges().iter().skip(1).map(|r| r.start).collect()
    }
}

/// Median over channels of |a_j − b_j|.
pub fn merge_penalty(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ChannelMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(penalty(a, b, &mut Vec::with_capacity(a.len())))
}

fn penalty(a: &[f64], b: &[f64], scratch: &mut Vec<f64>) -> f64 {
    if a.len() == 1 {
        return (a[0] - b[0]).abs();
    }
    scratch.clear();
    scratch.extend(a.iter().zip(b).map(|(x, y)| (x - y).abs()));
    median_in_place(scratch)
}

/// Median of the merge penalties over all point pairs (p ∈ A, q ∈ B).
pub fn cluster_merge_cost(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let k = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|p| p.len() != k) {
        return Err(Error::ChannelMismatch {
            left: k,
            right: bad.len(),
        });
    }
    Ok(Coster::default().cost(a, b))
}

#[derive(Default)]
struct Coster {
    pairs: Vec<f64>,
    scratch: Vec<f64>,
}

impl Coster {
    fn cost(&mut self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        self.pairs.clear();
        for p in a {
            for q in b {
                let d = penalty(p, q, &mut self.scratch);
                self.pairs.push(d);
            }
        }
        median_in_place(&mut self.pairs)
    }
}

/// Greedy constrained agglomeration. Every point starts as its own
/// cluster; the temporally adjacent pair with the smallest merge cost is
/// merged until `k` clusters remain. Ties go to the earliest pair.
pub fn agglomerate(points: &[Vec<f64>], k: usize) -> Result<ClusterAssignment> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::TooFewPoints { needed: k.max(1), got: n });
    }
    let channels = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != channels || p.is_empty()) {
        return Err(Error::ChannelMismatch {
            left: channels,
            right: bad.len(),
        });
    }

    // Clusters are contiguous ranges; starts[c] is the first point of
    // cluster c and the cluster ends at starts[c + 1].
    let mut starts: Vec<usize> = (0..n).collect();
    let end = |starts: &[usize], c: usize| if c + 1 < starts.len() { starts[c + 1] } else { n };
    let mut coster = Coster::default();
    // costs[c] is the cost of merging cluster c with cluster c + 1.
    let mut costs: Vec<f64> = (0..n.saturating_sub(1))
        .map(|c| coster.cost(&points[c..c + 1], &points[c + 1..c + 2]))
        .collect();

    while starts.len() > k {
        let mut best = 0;
        for (c, &v) in costs.iter().enumerate().skip(1) {
            if v < costs[best] {
                best = c;
            }
        }
        starts.remove(best + 1);
        costs.remove(best);
        let s = starts[best];
        let e = end(&starts, best);
        if best > 0 {
            let ps = starts[best - 1];
            costs[best - 1] = coster.cost(&points[ps..s], &points[s..e]);
        }
        if best + 1 < starts.len() {
            let ne = end(&starts, best + 1);
            costs[best] = coster.cost(&points[s..e], &points[e..ne]);
        }
    }

    let mut labels = vec![0; n];
    for c in 0..starts.len() {
        for l in &mut labels[starts[c]..end(&starts, c)] {
            *l = c;
        }
    }
    Ok(ClusterAssignment { labels, k })
}
