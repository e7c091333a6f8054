//! Posterior summaries, DIC model comparison and posterior predictive
//! checks over retained draws.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LatentState, Model, MwHypothesis};
use crate::sampler::PosteriorDraws;
use crate::stats::{mean, quantile_sorted, sample_trunc_normal_pos, variance};

/// Minimum pooled draws for [`summarize`].
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Moments {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Moments {
            mean: mean(values),
            sd: variance(values).sqrt(),
            q025: quantile_sorted(&sorted, 0.025),
            q50: quantile_sorted(&sorted, 0.5),
            q975: quantile_sorted(&sorted, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionA2 {
    pub condition: String,
    pub a2: Moments,
    /// Share of pooled draws with A2 > 0.
    pub prob_positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub names: Vec<String>,
    pub params: Vec<Moments>,
    pub conditions: Vec<ConditionA2>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Result<&Moments> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }
}

/// Pooled-chain moments of every parameter, plus P(A2 > 0) for each
/// `a2[<condition>]` column.
pub fn summarize(draws: &PosteriorDraws) -> Result<PosteriorSummary> {
    let n = draws.n_pooled();
    if n < MIN_DRAWS {
        return Err(Error::TooFewDraws { needed: MIN_DRAWS, got: n });
    }
    let mut params = Vec::with_capacity(draws.names.len());
    let mut conditions = Vec::new();
    for (i, name) in draws.names.iter().enumerate() {
        let col = draws.pooled(i);
        let m = Moments::of(&col);
        if let Some(cond) = name.strip_prefix("a2[").and_then(|s| s.strip_suffix(']')) {
            conditions.push(ConditionA2 {
                condition: cond.to_string(),
                a2: m,
                prob_positive: col.iter().filter(|&&v| v > 0.0).count() as f64 / n as f64,
            });
        }
        params.push(m);
    }
    Ok(PosteriorSummary {
        names: draws.names.clone(),
        params,
        conditions,
    })
}

/// Table of A2 per condition: `condition,mean,sd,q025,q975,prob_positive`.
pub fn write_a2_csv<W: Write>(summary: &PosteriorSummary, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["condition", "mean", "sd", "q025", "q975", "prob_positive"])?;
    for c in &summary.conditions {
        w.write_record([
            c.condition.clone(),
            c.a2.mean.to_string(),
            c.a2.sd.to_string(),
            c.a2.q025.to_string(),
            c.a2.q975.to_string(),
            c.prob_positive.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// All parameters: `parameter,mean,sd,q025,q50,q975`.
pub fn write_summary_csv<W: Write>(summary: &PosteriorSummary, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["parameter", "mean", "sd", "q025", "q50", "q975"])?;
    for (name, m) in summary.names.iter().zip(&summary.params) {
        w.write_record([
            name.clone(),
            m.mean.to_string(),
            m.sd.to_string(),
            m.q025.to_string(),
            m.q50.to_string(),
            m.q975.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub dbar: f64,
    pub d_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
}

fn check_names(draws: &PosteriorDraws, model: &Model) -> Result<()> {
    if draws.names != model.param_names() {
        return Err(Error::DimensionMismatch(format!(
            "draws have {} columns, model expects {}",
            draws.names.len(),
            model.param_names().len()
        )));
    }
    Ok(())
}

/// Plug-in point for DIC: pooled means of continuous parameters and the
/// modal value of each dimer indicator.
pub fn plug_in_state(draws: &PosteriorDraws, model: &Model) -> Result<LatentState> {
    check_names(draws, model)?;
    let n = draws.n_pooled();
    if n == 0 {
        return Err(Error::TooFewDraws { needed: 1, got: 0 });
    }
    let mut row: Vec<f64> = (0..draws.names.len()).map(|i| mean(&draws.pooled(i))).collect();
    if matches!(model.spec().hypothesis, MwHypothesis::BernoulliDimer) {
        for c in model.condition_ids() {
            let i = model.param_index(&format!("k[{c}]"))?;
            // ties go to the monomer
            row[i] = if row[i] > 0.5 { 1.0 } else { 0.0 };
        }
    }
    model.row_to_state(&row)
}

/// Deviance D = −2·log-likelihood with u treated as parameters.
/// `dic = 2·dbar − d_at_mean`.
pub fn dic(draws: &PosteriorDraws, model: &Model) -> Result<DicReport> {
    check_names(draws, model)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for row in draws.rows() {
        let s = model.row_to_state(row)?;
        total += -2.0 * model.log_likelihood(&s);
        n += 1;
    }
    let dbar = total / n.max(1) as f64;
    let d_at_mean = -2.0 * model.log_likelihood(&plug_in_state(draws, model)?);
    if !dbar.is_finite() || !d_at_mean.is_finite() {
        return Err(Error::NonFiniteDeviance);
    }
    let p_d = dbar - d_at_mean;
    Ok(DicReport {
        dbar,
        d_at_mean,
        p_d,
        dic: dbar + p_d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reading {
    Rayleigh,
    DeltaN,
}

impl Reading {
    pub fn label(self) -> &'static str {
        match self {
            Reading::Rayleigh => "rayleigh",
            Reading::DeltaN => "delta_n",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcValue {
    pub condition: String,
    pub run: String,
    pub level: usize,
    pub reading: Reading,
    /// Share of replicates at or below the observed value.
    pub pvalue: f64,
}

/// Posterior predictive p-values P(y_rep ≤ y_obs) of every included
/// reading, replicating once per retained draw.
pub fn ppc_pvalues<R: Rng + ?Sized>(draws: &PosteriorDraws, model: &Model, rng: &mut R) -> Result<Vec<PpcValue>> {
    check_names(draws, model)?;
    let n_obs = model.n_obs();
    let mut below_r = vec![0usize; n_obs];
    let mut below_dn = vec![0usize; n_obs];
    let mut n = 0usize;
    for row in draws.rows() {
        let s = model.row_to_state(row)?;
        let sd_r = s.sigma2_r.sqrt();
        let sd_dn = s.sigma2_dn.sqrt();
        for j in 0..n_obs {
            let (r_obs, dn_obs) = model.observed(j);
            let (r_mean, dn_mean) = model.means(&s, j);
            if let Some(y) = r_obs {
                let z: f64 = rng.sample(StandardNormal);
                if r_mean + sd_r * z <= y {
                    below_r[j] += 1;
                }
            }
            if let Some(y) = dn_obs {
                if sample_trunc_normal_pos(rng, dn_mean, sd_dn) <= y {
                    below_dn[j] += 1;
                }
            }
        }
        n += 1;
    }
    let n = n.max(1) as f64;
    let mut out = Vec::new();
    for (j, r) in model.observations().iter().enumerate() {
        let (r_obs, dn_obs) = model.observed(j);
        for (present, count, reading) in [
            (r_obs.is_some(), below_r[j], Reading::Rayleigh),
            (dn_obs.is_some(), below_dn[j], Reading::DeltaN),
        ] {
            if present {
                out.push(PpcValue {
                    condition: r.condition.clone(),
                    run: r.run.clone(),
                    level: r.level,
                    reading,
                    pvalue: count as f64 / n,
                });
            }
        }
    }
    Ok(out)
}

/// `level,condition,pvalue,run,reading`.
pub fn write_ppc_csv<W: Write>(values: &[PpcValue], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["level", "condition", "pvalue", "run", "reading"])?;
    for v in values {
        w.write_record([
            v.level.to_string(),
            v.condition.clone(),
            v.pvalue.to_string(),
            v.run.clone(),
            v.reading.label().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRatio {
    pub condition: String,
    pub run: String,
    pub level: usize,
    pub ratio: Moments,
}

/// Posterior of c/c^m = u for every modelled observation.
pub fn concentration_ratios(draws: &PosteriorDraws, model: &Model) -> Result<Vec<ConcentrationRatio>> {
    check_names(draws, model)?;
    if draws.n_pooled() == 0 {
        return Err(Error::TooFewDraws { needed: 1, got: 0 });
    }
    let off = model.u_offset();
    Ok(model
        .observations()
        .iter()
        .enumerate()
        .map(|(j, r)| ConcentrationRatio {
            condition: r.condition.clone(),
            run: r.run.clone(),
            level: r.level,
            ratio: Moments::of(&draws.pooled(off + j)),
        })
        .collect())
}

/// `condition,run,level,mean,sd,q025,q975`.
pub fn write_ratios_csv<W: Write>(ratios: &[ConcentrationRatio], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["condition", "run", "level", "mean", "sd", "q025", "q975"])?;
    for r in ratios {
        w.write_record([
            r.condition.clone(),
            r.run.clone(),
            r.level.to_string(),
            r.ratio.mean.to_string(),
            r.ratio.sd.to_string(),
            r.ratio.q025.to_string(),
            r.ratio.q975.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::ChainDraws;
    use proptest::prelude::*;

    fn one_param(name: &str, values: Vec<f64>) -> PosteriorDraws {
        PosteriorDraws {
            names: vec![name.to_string()],
            chains: vec![ChainDraws {
                iters: (0..values.len()).collect(),
                log_post: vec![0.0; values.len()],
                draws: values.into_iter().map(|v| vec![v]).collect(),
                acceptance: vec![],
            }],
        }
    }

    #[test]
    fn degenerate_draws() {
        let s = summarize(&one_param("a2[x]", vec![2.5; 200])).unwrap();
        let m = s.get("a2[x]").unwrap();
        assert_eq!((m.mean, m.sd, m.q025, m.q50, m.q975), (2.5, 0.0, 2.5, 2.5, 2.5));
        assert_eq!(s.conditions[0].prob_positive, 1.0);
    }

    #[test]
    fn symmetric_signs_give_half() {
        let v: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let s = summarize(&one_param("a2[x]", v)).unwrap();
        assert_eq!(s.conditions[0].prob_positive, 0.5);
    }

    #[test]
    fn too_few_draws() {
        assert!(matches!(
            summarize(&one_param("a", vec![0.0; 99])),
            Err(Error::TooFewDraws { .. })
        ));
    }

    #[test]
    fn gaussian_draws_match_moments() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (mu, sd) = (35.521e-5, 1.263e-5);
        let v: Vec<f64> = (0..10_000)
            .map(|_| mu + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let s = summarize(&one_param("a2[x]", v)).unwrap();
        let m = s.conditions[0].a2;
        assert!((m.mean - mu).abs() < 4.0 * sd / 100.0);
        assert!((m.sd / sd - 1.0).abs() < 0.03);
        assert!((m.q025 - (mu - 1.96 * sd)).abs() < 0.1 * sd);
        assert!((m.q975 - (mu + 1.96 * sd)).abs() < 0.1 * sd);
        assert_eq!(s.conditions[0].prob_positive, 1.0);
    }

    proptest! {
        #[test]
        fn quantiles_are_ordered(v in proptest::collection::vec(-1e3f64..1e3, 100..300)) {
            let s = summarize(&one_param("p", v)).unwrap();
            let m = s.params[0];
            prop_assert!(m.q025 <= m.q50 && m.q50 <= m.q975);
        }
    }
}
