use serde::{Deserialize, Serialize};

/// Oligomer-mass part of the state, shaped by the hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MwState {
    Fixed,
    /// k_l ∈ {0, 1} per condition.
    Dimer { k: Vec<bool> },
    /// M_w,l per condition.
    Continuous { mw: Vec<f64> },
    Hierarchical { mu: f64, sigma2: f64, mw: Vec<f64> },
}

/// One point in parameter space. Fixed quantities (u under the
/// no-adjustment model, fixed dn/dc or variances) are carried at their
/// fixed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    /// Multiplicative concentration error per observation, in model order.
    pub u: Vec<f64>,
    pub dndc: f64,
    /// A2,l per condition.
    pub a2: Vec<f64>,
    pub mw: MwState,
    pub sigma2_u: f64,
    pub sigma2_r: f64,
    pub sigma2_dn: f64,
}

impl LatentState {
    /// Positivity constraints on u, dn/dc, variances and masses.
    pub fn is_valid(&self) -> bool {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        let mw_ok = match &self.mw {
            MwState::Fixed | MwState::Dimer { .. } => true,
            MwState::Continuous { mw } => mw.iter().all(|&m| pos(m)),
            MwState::Hierarchical { mu, sigma2, mw } => {
                mu.is_finite() && pos(*sigma2) && mw.iter().all(|&m| pos(m))
            }
        };
        mw_ok
            && self.u.iter().all(|&u| pos(u))
            && pos(self.dndc)
            && pos(self.sigma2_u)
            && pos(self.sigma2_r)
            && pos(self.sigma2_dn)
            && self.a2.iter().all(|a| a.is_finite())
    }
}
