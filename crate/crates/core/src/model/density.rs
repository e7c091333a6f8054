use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::state::{LatentState, MwState};
use super::{ModelSpec, MwHypothesis};
use crate::domain::{CleanDataset, PhysicalConstants};
use crate::error::{Error, Result};
use crate::forward::{optical_prefactor, rayleigh_from_kstar};
use crate::stats::{ln_inv_gamma_pdf, ln_lognormal0_pdf, ln_norm_cdf, ln_normal_pdf, ln_trunc_normal_pos_pdf};

const LN_HALF: f64 = -std::f64::consts::LN_2;

/// Identifies one modelled observation (a run/level pair) in outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRef {
    pub condition: String,
    pub run: String,
    pub level: usize,
}

#[derive(Debug, Clone)]
struct Obs {
    cond: usize,
    c_meas: f64,
    rayleigh: Option<f64>,
    delta_n: Option<f64>,
}

/// Subsets of the log posterior that depend on a given block of
/// coordinates; the sampler evaluates only these for single-site updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Scope {
    /// Observation j's likelihood terms and its lognormal prior.
    Obs(usize),
    /// Condition l's likelihood terms, A2 prior and mass prior.
    Condition(usize),
    /// Mass priors of all conditions plus the hyperpriors on μ and σ².
    MwHyper,
    SigmaU,
    SigmaR,
    SigmaDn,
    Global,
}

/// A dataset compiled against a model specification.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    obs: Vec<Obs>,
    refs: Vec<ObservationRef>,
    condition_ids: Vec<String>,
    cond_ranges: Vec<Range<usize>>,
    prefactor: Vec<f64>,
    names: Vec<String>,
}

/// Row offsets of the state when flattened.
pub(crate) const IDX_DNDC: usize = 0;
pub(crate) const IDX_SIGMA2_R: usize = 1;
pub(crate) const IDX_SIGMA2_DN: usize = 2;
pub(crate) const IDX_SIGMA2_U: usize = 3;
pub(crate) const IDX_A2: usize = 4;

impl Model {
    pub fn new(data: &CleanDataset, spec: &ModelSpec) -> Result<Model> {
        spec.validate()?;
        data.validate()?;
        let mut obs = Vec::new();
        let mut refs = Vec::new();
        let mut cond_ranges = Vec::new();
        let mut prefactor = Vec::new();
        for (l, cond) in data.conditions.iter().enumerate() {
            let start = obs.len();
            for run in &cond.runs {
                for lvl in &run.levels {
                    if !(lvl.ls_included || lvl.ri_included) {
                        continue;
                    }
                    obs.push(Obs {
                        cond: l,
                        c_meas: lvl.c_meas,
                        rayleigh: if lvl.ls_included { lvl.rayleigh } else { None },
                        delta_n: if lvl.ri_included { lvl.delta_n } else { None },
                    });
                    refs.push(ObservationRef {
                        condition: cond.condition_id.clone(),
                        run: run.run_id.clone(),
                        level: lvl.level,
                    });
                }
            }
            cond_ranges.push(start..obs.len());
            let constants = PhysicalConstants {
                n0: cond.n0.unwrap_or(spec.constants.n0),
                ..spec.constants
            };
            prefactor.push(optical_prefactor(&constants));
        }
        let condition_ids: Vec<String> =
            data.conditions.iter().map(|c| c.condition_id.clone()).collect();

        let mut names = vec![
            "dndc".to_string(),
            "sigma2_r".to_string(),
            "sigma2_dn".to_string(),
            "sigma2_u".to_string(),
        ];
        names.extend(condition_ids.iter().map(|c| format!("a2[{c}]")));
        match spec.hypothesis {
            MwHypothesis::FixedMultiple { .. } => {}
            MwHypothesis::BernoulliDimer => {
                names.extend(condition_ids.iter().map(|c| format!("k[{c}]")));
            }
            MwHypothesis::UniformContinuous { .. } => {
                names.extend(condition_ids.iter().map(|c| format!("mw[{c}]")));
            }
            MwHypothesis::HierarchicalNormal => {
                names.push("mu_mw".to_string());
                names.push("sigma2_mw".to_string());
                names.extend(condition_ids.iter().map(|c| format!("mw[{c}]")));
            }
        }
        names.extend(
            refs.iter()
                .map(|r| format!("u[{}/{}/{}]", r.condition, r.run, r.level)),
        );

        Ok(Model {
            spec: spec.clone(),
            obs,
            refs,
            condition_ids,
            cond_ranges,
            prefactor,
            names,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    pub fn n_conditions(&self) -> usize {
        self.condition_ids.len()
    }

    pub fn condition_ids(&self) -> &[String] {
        &self.condition_ids
    }

    pub fn observations(&self) -> &[ObservationRef] {
        &self.refs
    }

    pub fn c_meas(&self, j: usize) -> f64 {
        self.obs[j].c_meas
    }

    /// Observed (R^m, Δn^m) of observation j; `None` where not included.
    pub fn observed(&self, j: usize) -> (Option<f64>, Option<f64>) {
        (self.obs[j].rayleigh, self.obs[j].delta_n)
    }

    pub fn adjusts_concentration(&self) -> bool {
        self.spec.adjust_concentration
    }

    /// Names of the flattened state coordinates, see [`Model::state_to_row`].
    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub(crate) fn mw_offset(&self) -> usize {
        IDX_A2 + self.n_conditions()
    }

    /// Column of the first u in a flattened state row.
    pub fn u_offset(&self) -> usize {
        self.names.len() - self.obs.len()
    }

    pub fn state_to_row(&self, s: &LatentState, row: &mut Vec<f64>) {
        row.clear();
        row.extend([s.dndc, s.sigma2_r, s.sigma2_dn, s.sigma2_u]);
        row.extend_from_slice(&s.a2);
        match &s.mw {
            MwState::Fixed => {}
            MwState::Dimer { k } => row.extend(k.iter().map(|&b| f64::from(u8::from(b)))),
            MwState::Continuous { mw } => row.extend_from_slice(mw),
            MwState::Hierarchical { mu, sigma2, mw } => {
                row.push(*mu);
                row.push(*sigma2);
                row.extend_from_slice(mw);
            }
        }
        row.extend_from_slice(&s.u);
    }

    pub fn row_to_state(&self, row: &[f64]) -> Result<LatentState> {
        if row.len() != self.names.len() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} values, model has {} parameters",
                row.len(),
                self.names.len()
            )));
        }
        let nl = self.n_conditions();
        let m = self.mw_offset();
        let mw = match self.spec.hypothesis {
            MwHypothesis::FixedMultiple { .. } => MwState::Fixed,
            MwHypothesis::BernoulliDimer => MwState::Dimer {
                k: row[m..m + nl].iter().map(|&v| v > 0.5).collect(),
            },
            MwHypothesis::UniformContinuous { .. } => MwState::Continuous {
                mw: row[m..m + nl].to_vec(),
            },
            MwHypothesis::HierarchicalNormal => MwState::Hierarchical {
                mu: row[m],
                sigma2: row[m + 1],
                mw: row[m + 2..m + 2 + nl].to_vec(),
            },
        };
        Ok(LatentState {
            u: row[self.u_offset()..].to_vec(),
            dndc: row[IDX_DNDC],
            a2: row[IDX_A2..IDX_A2 + nl].to_vec(),
            mw,
            sigma2_u: row[IDX_SIGMA2_U],
            sigma2_r: row[IDX_SIGMA2_R],
            sigma2_dn: row[IDX_SIGMA2_DN],
        })
    }

    /// M_w of condition l under the state.
    pub fn mw_of(&self, s: &LatentState, l: usize) -> f64 {
        let m = self.spec.constants.monomer_mass;
        match (&self.spec.hypothesis, &s.mw) {
            (MwHypothesis::FixedMultiple { x }, _) => f64::from(*x) * m,
            (_, MwState::Dimer { k }) => (1.0 + f64::from(u8::from(k[l]))) * m,
            (_, MwState::Continuous { mw }) | (_, MwState::Hierarchical { mw, .. }) => mw[l],
            (_, MwState::Fixed) => f64::NAN,
        }
    }

    pub fn kstar_of(&self, s: &LatentState, l: usize) -> f64 {
        self.prefactor[l] * s.dndc * s.dndc
    }

    /// True concentration c = c^m·u of observation j.
    pub fn concentration(&self, s: &LatentState, j: usize) -> f64 {
        if self.spec.adjust_concentration {
            self.obs[j].c_meas * s.u[j]
        } else {
            self.obs[j].c_meas
        }
    }

    /// Model means (R, Δn) of observation j.
    pub fn means(&self, s: &LatentState, j: usize) -> (f64, f64) {
        let l = self.obs[j].cond;
        let c = self.concentration(s, j);
        let r = rayleigh_from_kstar(c, self.mw_of(s, l), s.a2[l], self.kstar_of(s, l));
        (r, c * s.dndc)
    }

    #[inline]
    fn obs_terms(&self, s: &LatentState, j: usize, kstar: f64, mw: f64, a2: f64) -> (f64, f64) {
        let o = &self.obs[j];
        let c = if self.spec.adjust_concentration {
            o.c_meas * s.u[j]
        } else {
            o.c_meas
        };
        let ls = match o.rayleigh {
            Some(rm) => ln_normal_pdf(rm, rayleigh_from_kstar(c, mw, a2, kstar), s.sigma2_r),
            None => 0.0,
        };
        let ri = match o.delta_n {
            Some(dm) => {
                let sd = s.sigma2_dn.sqrt();
                let mean = c * s.dndc;
                ln_normal_pdf(dm, mean, s.sigma2_dn) - ln_norm_cdf(mean / sd)
            }
            None => 0.0,
        };
        (ls, ri)
    }

    fn obs_log_lik(&self, s: &LatentState, j: usize) -> f64 {
        let l = self.obs[j].cond;
        let (a, b) = self.obs_terms(s, j, self.kstar_of(s, l), self.mw_of(s, l), s.a2[l]);
        a + b
    }

    fn condition_log_lik(&self, s: &LatentState, l: usize) -> f64 {
        let kstar = self.kstar_of(s, l);
        let mw = self.mw_of(s, l);
        let a2 = s.a2[l];
        self.cond_ranges[l]
            .clone()
            .map(|j| {
                let (a, b) = self.obs_terms(s, j, kstar, mw, a2);
                a + b
            })
            .sum()
    }

    /// Split log-likelihood sums (Rayleigh part, Δn part).
    fn split_log_lik(&self, s: &LatentState) -> (f64, f64) {
        let mut ls = 0.0;
        let mut ri = 0.0;
        for l in 0..self.n_conditions() {
            let kstar = self.kstar_of(s, l);
            let mw = self.mw_of(s, l);
            for j in self.cond_ranges[l].clone() {
                let (a, b) = self.obs_terms(s, j, kstar, mw, s.a2[l]);
                ls += a;
                ri += b;
            }
        }
        (ls, ri)
    }

    /// Sum of the Gaussian Rayleigh and truncated-normal Δn log-densities
    /// over included observations. −∞ for states outside the support.
    pub fn log_likelihood(&self, s: &LatentState) -> f64 {
        if !s.is_valid() {
            return f64::NEG_INFINITY;
        }
        let (a, b) = self.split_log_lik(s);
        finite_or_neg_inf(a + b)
    }

    fn u_prior(&self, s: &LatentState, j: usize) -> f64 {
        if self.spec.adjust_concentration {
            ln_lognormal0_pdf(s.u[j], s.sigma2_u)
        } else {
            0.0
        }
    }

    fn mass_prior(&self, s: &LatentState, l: usize) -> f64 {
        let m = self.spec.constants.monomer_mass;
        match (&self.spec.hypothesis, &s.mw) {
            (MwHypothesis::FixedMultiple { .. }, _) => 0.0,
            (MwHypothesis::BernoulliDimer, _) => LN_HALF,
            (MwHypothesis::UniformContinuous { lo, hi }, MwState::Continuous { mw }) => {
                if mw[l] > lo * m && mw[l] < hi * m {
                    -((hi - lo) * m).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            (MwHypothesis::HierarchicalNormal, MwState::Hierarchical { mu, sigma2, mw }) => {
                ln_trunc_normal_pos_pdf(mw[l], *mu, sigma2.sqrt())
            }
            _ => f64::NEG_INFINITY,
        }
    }

    fn mass_hyperprior(&self, s: &LatentState) -> f64 {
        let m = self.spec.constants.monomer_mass;
        match &s.mw {
            MwState::Hierarchical { mu, sigma2, .. } => {
                let mu_term = if *mu > m && *mu < 20.0 * m {
                    -(19.0 * m).ln()
                } else {
                    f64::NEG_INFINITY
                };
                mu_term + ln_inv_gamma_pdf(*sigma2, 1.0, (m / 3.0).powi(2))
            }
            _ => 0.0,
        }
    }

    fn condition_prior(&self, s: &LatentState, l: usize) -> f64 {
        let p = &self.spec.priors;
        ln_normal_pdf(s.a2[l], p.a2_mean, p.a2_sd * p.a2_sd) + self.mass_prior(s, l)
    }

    fn sigma_u_prior(&self, s: &LatentState) -> f64 {
        if self.spec.adjust_concentration {
            ln_inv_gamma_pdf(s.sigma2_u, self.spec.priors.a_u, self.spec.priors.b_u)
        } else {
            0.0
        }
    }

    fn sigma_r_prior(&self, s: &LatentState) -> f64 {
        match self.spec.fixed.sigma2_r {
            Some(_) => 0.0,
            None => ln_inv_gamma_pdf(s.sigma2_r, self.spec.priors.a_r, self.spec.priors.b_r),
        }
    }

    fn sigma_dn_prior(&self, s: &LatentState) -> f64 {
        match self.spec.fixed.sigma2_dn {
            Some(_) => 0.0,
            None => ln_inv_gamma_pdf(s.sigma2_dn, self.spec.priors.a_dn, self.spec.priors.b_dn),
        }
    }

    fn dndc_prior(&self, s: &LatentState) -> f64 {
        match self.spec.fixed.dndc {
            Some(_) => 0.0,
            None => ln_trunc_normal_pos_pdf(s.dndc, self.spec.priors.dndc_mean, self.spec.priors.dndc_sd),
        }
    }

    /// Log prior density of all inferred quantities. Fixed quantities
    /// contribute nothing.
    pub fn log_prior(&self, s: &LatentState) -> f64 {
        if !s.is_valid() {
            return f64::NEG_INFINITY;
        }
        let mut total = self.dndc_prior(s) + self.sigma_r_prior(s) + self.sigma_dn_prior(s);
        total += self.sigma_u_prior(s);
        total += (0..self.obs.len()).map(|j| self.u_prior(s, j)).sum::<f64>();
        total += (0..self.n_conditions())
            .map(|l| self.condition_prior(s, l))
            .sum::<f64>();
        total += self.mass_hyperprior(s);
        finite_or_neg_inf(total)
    }

    pub fn log_posterior(&self, s: &LatentState) -> f64 {
        let lp = self.log_prior(s);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        finite_or_neg_inf(lp + self.log_likelihood(s))
    }

    /// Like [`Model::log_posterior`] but reports an invalid state as an error.
    pub fn checked_log_posterior(&self, s: &LatentState) -> Result<f64> {
        let v = self.log_posterior(s);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteDensity(format!("log posterior is {v}")))
        }
    }

    /// The part of the log posterior that changes with the coordinates of
    /// `scope`, up to an additive constant in those coordinates. Assumes
    /// the state is otherwise valid; the sampler only ever moves one
    /// positive coordinate on the log scale.
    pub(crate) fn scoped(&self, s: &LatentState, scope: Scope) -> f64 {
        let v = match scope {
            Scope::Obs(j) => self.obs_log_lik(s, j) + self.u_prior(s, j),
            Scope::Condition(l) => self.condition_log_lik(s, l) + self.condition_prior(s, l),
            Scope::MwHyper => {
                (0..self.n_conditions()).map(|l| self.mass_prior(s, l)).sum::<f64>()
                    + self.mass_hyperprior(s)
            }
            Scope::SigmaU => {
                (0..self.obs.len()).map(|j| self.u_prior(s, j)).sum::<f64>() + self.sigma_u_prior(s)
            }
            Scope::SigmaR => {
                let sum: f64 = (0..self.obs.len())
                    .filter_map(|j| {
                        let o = &self.obs[j];
                        o.rayleigh.map(|rm| {
                            let (r, _) = self.means(s, j);
                            ln_normal_pdf(rm, r, s.sigma2_r)
                        })
                    })
                    .sum();
                sum + self.sigma_r_prior(s)
            }
            Scope::SigmaDn => {
                let sum: f64 = (0..self.obs.len())
                    .filter_map(|j| {
                        let o = &self.obs[j];
                        o.delta_n.map(|dm| {
                            let mean = self.concentration(s, j) * s.dndc;
                            ln_normal_pdf(dm, mean, s.sigma2_dn) - ln_norm_cdf(mean / s.sigma2_dn.sqrt())
                        })
                    })
                    .sum();
                sum + self.sigma_dn_prior(s)
            }
            Scope::Global => return self.log_posterior(s),
        };
        finite_or_neg_inf(v)
    }
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() || v == f64::INFINITY {
        f64::NEG_INFINITY
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ConditionData, LevelObservation, RunData};
    use crate::model::{default_priors, FixedParams, Protein};

    fn level(i: usize, c: f64, r: Option<f64>, dn: Option<f64>) -> LevelObservation {
        LevelObservation {
            level: i,
            c_meas: c,
            rayleigh: r,
            delta_n: dn,
            ri_included: dn.is_some(),
            ls_included: r.is_some(),
        }
    }

    fn dataset(levels: Vec<LevelObservation>) -> CleanDataset {
        CleanDataset {
            conditions: vec![ConditionData {
                condition_id: "a".into(),
                n0: None,
                runs: vec![RunData {
                    run_id: "r".into(),
                    levels,
                }],
            }],
        }
    }

    fn spec() -> ModelSpec {
        ModelSpec::new(
            "M1",
            default_priors(Protein::Lysozyme, false),
            MwHypothesis::FixedMultiple { x: 1 },
            PhysicalConstants::lysozyme(),
        )
    }

    fn state(n_obs: usize) -> LatentState {
        LatentState {
            u: vec![1.0; n_obs],
            dndc: 0.2,
            a2: vec![1e-4],
            mw: MwState::Fixed,
            sigma2_u: 1e-4,
            sigma2_r: 1e-11,
            sigma2_dn: 2e-9,
        }
    }

    #[test]
    fn empty_data_likelihood_is_zero() {
        let m = Model::new(&dataset(vec![]), &spec()).unwrap();
        let s = state(0);
        assert_eq!(m.log_likelihood(&s), 0.0);
        assert_eq!(m.log_posterior(&s), m.log_prior(&s));
    }

    #[test]
    fn gaussian_mode_value() {
        let m0 = Model::new(&dataset(vec![level(0, 0.01, Some(0.0), None)]), &spec()).unwrap();
        let s = state(1);
        let (r, _) = m0.means(&s, 0);
        let m = Model::new(&dataset(vec![level(0, 0.01, Some(r), None)]), &spec()).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI * s.sigma2_r).ln();
        assert!((m.log_likelihood(&s) - expect).abs() < 1e-12);
    }

    #[test]
    fn truncation_normalizer_three_sd() {
        // choose c so the Δn mean sits exactly 3 sd above zero
        let s = state(1);
        let sd = s.sigma2_dn.sqrt();
        let c = 3.0 * sd / s.dndc;
        let m = Model::new(&dataset(vec![level(0, c, None, Some(0.002))]), &spec()).unwrap();
        let untruncated = ln_normal_pdf(0.002, c * s.dndc, s.sigma2_dn);
        // Φ(3) from mpmath: 0.998650101968369896532...
        let ln_phi3 = 0.998_650_101_968_369_9_f64.ln();
        assert!((m.log_likelihood(&s) - (untruncated - ln_phi3)).abs() < 1e-12);
    }

    #[test]
    fn unit_u_and_prior_mean_terms() {
        let m = Model::new(
            &dataset(vec![level(0, 0.01, Some(1e-5), None), level(1, 0.02, Some(2e-5), None)]),
            &spec(),
        )
        .unwrap();
        let mut s = state(2);
        s.a2 = vec![0.0];
        let two_pi = 2.0 * std::f64::consts::PI;
        let p = &m.spec().priors;
        let expect = -(two_pi * s.sigma2_u).ln() // two u terms of −½ log(2πσ²_u)
            - 0.5 * two_pi.ln() // A2 at its prior mean with σ_A2 = 1
            + ln_trunc_normal_pos_pdf(s.dndc, p.dndc_mean, p.dndc_sd)
            + ln_inv_gamma_pdf(s.sigma2_u, p.a_u, p.b_u)
            + ln_inv_gamma_pdf(s.sigma2_r, p.a_r, p.b_r)
            + ln_inv_gamma_pdf(s.sigma2_dn, p.a_dn, p.b_dn);
        assert!((m.log_prior(&s) - expect).abs() < 1e-10);
    }

    #[test]
    fn invalid_state_is_neg_inf() {
        let m = Model::new(&dataset(vec![level(0, 0.01, Some(1e-5), None)]), &spec()).unwrap();
        let mut s = state(1);
        s.u[0] = -1.0;
        assert_eq!(m.log_posterior(&s), f64::NEG_INFINITY);
        assert!(m.checked_log_posterior(&s).is_err());
    }

    #[test]
    fn row_round_trip_all_hypotheses() {
        let data = dataset(vec![level(0, 0.01, Some(1e-5), Some(0.002))]);
        let hyps = [
            (MwHypothesis::FixedMultiple { x: 2 }, MwState::Fixed),
            (MwHypothesis::BernoulliDimer, MwState::Dimer { k: vec![true] }),
            (
                MwHypothesis::UniformContinuous { lo: 1.0, hi: 2.0 },
                MwState::Continuous { mw: vec![20000.0] },
            ),
            (
                MwHypothesis::HierarchicalNormal,
                MwState::Hierarchical {
                    mu: 30000.0,
                    sigma2: 1e7,
                    mw: vec![25000.0],
                },
            ),
        ];
        for (h, mw) in hyps {
            let mut sp = spec();
            sp.hypothesis = h;
            let m = Model::new(&data, &sp).unwrap();
            let mut s = state(1);
            s.mw = mw;
            let mut row = Vec::new();
            m.state_to_row(&s, &mut row);
            assert_eq!(row.len(), m.param_names().len());
            assert_eq!(m.row_to_state(&row).unwrap(), s);
        }
    }

    #[test]
    fn fixed_parameters_drop_their_priors() {
        let data = dataset(vec![level(0, 0.01, Some(1e-5), None)]);
        let mut sp = spec();
        sp.fixed = FixedParams {
            dndc: Some(0.2),
            sigma2_r: Some(1e-11),
            sigma2_dn: Some(2e-9),
        };
        sp.adjust_concentration = false;
        let m = Model::new(&data, &sp).unwrap();
        let s = state(1);
        let p = &sp.priors;
        let expect = ln_normal_pdf(s.a2[0], p.a2_mean, p.a2_sd * p.a2_sd);
        assert!((m.log_prior(&s) - expect).abs() < 1e-12);
    }

    #[test]
    fn scopes_track_full_posterior_differences() {
        let data = dataset(vec![
            level(0, 0.01, Some(3.5e-5), Some(0.002)),
            level(1, 0.02, Some(7.0e-5), Some(0.004)),
        ]);
        let mut sp = spec();
        sp.hypothesis = MwHypothesis::HierarchicalNormal;
        let m = Model::new(&data, &sp).unwrap();
        let base = LatentState {
            mw: MwState::Hierarchical {
                mu: 20000.0,
                sigma2: 1e7,
                mw: vec![15000.0],
            },
            ..state(2)
        };
        let perturbations: Vec<(Scope, Box<dyn Fn(&mut LatentState)>)> = vec![
            (Scope::Obs(1), Box::new(|s| s.u[1] *= 1.01)),
            (Scope::Condition(0), Box::new(|s| s.a2[0] += 1e-4)),
            (
                Scope::Condition(0),
                Box::new(|s| {
                    if let MwState::Hierarchical { mw, .. } = &mut s.mw {
                        mw[0] *= 1.1;
                    }
                }),
            ),
            (
                Scope::MwHyper,
                Box::new(|s| {
                    if let MwState::Hierarchical { mu, sigma2, .. } = &mut s.mw {
                        *mu *= 1.2;
                        *sigma2 *= 0.7;
                    }
                }),
            ),
            (Scope::SigmaU, Box::new(|s| s.sigma2_u *= 1.5)),
            (Scope::SigmaR, Box::new(|s| s.sigma2_r *= 1.5)),
            (Scope::SigmaDn, Box::new(|s| s.sigma2_dn *= 0.5)),
        ];
        for (scope, f) in perturbations {
            let mut t = base.clone();
            f(&mut t);
            let full = m.log_posterior(&t) - m.log_posterior(&base);
            let part = m.scoped(&t, scope) - m.scoped(&base, scope);
            assert!((full - part).abs() < 1e-9 * full.abs().max(1.0), "{scope:?}: {full} vs {part}");
        }
    }
}
