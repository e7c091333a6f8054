//! Synthetic data from the generative model and the factorial simulation
//! study of bias, coverage and interval width for A2.

pub mod traces;

use std::io::Write;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ConditionData, CleanDataset, LevelObservation, PhysicalConstants, RunData};
use crate::error::{Error, Result};
use crate::forward::{rayleigh, OpticalParams};
use crate::inference::summarize;
use crate::model::{default_priors, Model, ModelSpec, MwHypothesis, PriorConfig, Protein, SCHEMA_VERSION};
use crate::sampler::{gelman_rubin, run_chains, ChainConfig};
use crate::stats::sample_trunc_normal_pos;

/// Nominal concentrations of one replicate run, mg/mL.
pub const NOMINAL_MG_ML: [f64; 14] = [
    2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0,
];

/// Fits whose A2 R̂ exceeds this are excluded from cell metrics.
pub const RHAT_EXCLUDE: f64 = 1.2;

/// Ground truth shared by every simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub constants: PhysicalConstants,
    pub sigma2_r: f64,
    pub sigma2_dn: f64,
    pub dndc: f64,
    pub nominal_mg_ml: Vec<f64>,
    /// Only the first `ri_levels` levels carry an RI reading.
    pub ri_levels: usize,
}

impl Default for SimTruth {
    fn default() -> Self {
        SimTruth {
            constants: PhysicalConstants::lysozyme(),
            sigma2_r: 1e-11,
            sigma2_dn: 2e-9,
            dndc: 0.20,
            nominal_mg_ml: NOMINAL_MG_ML.to_vec(),
            ri_levels: 8,
        }
    }
}

/// σ_u for a relative concentration error p (0.05 for 5%): log(1+p)/1.96.
pub fn sigma_u_from_error(p: f64) -> f64 {
    (1.0 + p).ln() / 1.96
}

/// Study priors: the case-study values with the dn/dc prior centred at 0.195.
pub fn simulation_priors() -> PriorConfig {
    PriorConfig {
        dndc_mean: 0.195,
        ..default_priors(Protein::Lysozyme, false)
    }
}

/// Draw one dataset from the generative model: per replicate and level
/// u ~ LN(0, σ_u²), c = c^m·u, R^m ~ N(R(c), σ²_R) and, for the first
/// `ri_levels` levels, Δn^m ~ TN(c·dn/dc, σ²_Δn).
pub fn generate_dataset<R: Rng + ?Sized>(
    truth: &SimTruth,
    a2: f64,
    sigma_u: f64,
    n_replicates: usize,
    rng: &mut R,
) -> Result<CleanDataset> {
    generate_with_factors(truth, a2, sigma_u, n_replicates, rng).map(|(d, _)| d)
}

/// [`generate_dataset`] that also returns the true u of every level, in
/// run then level order.
pub fn generate_with_factors<R: Rng + ?Sized>(
    truth: &SimTruth,
    a2: f64,
    sigma_u: f64,
    n_replicates: usize,
    rng: &mut R,
) -> Result<(CleanDataset, Vec<f64>)> {
    let mut factors = Vec::with_capacity(n_replicates * truth.nominal_mg_ml.len());
    let optics = OpticalParams::new(truth.dndc, truth.constants);
    let mw = truth.constants.monomer_mass;
    let sd_r = truth.sigma2_r.sqrt();
    let sd_dn = truth.sigma2_dn.sqrt();
    let mut runs = Vec::with_capacity(n_replicates);
    for rep in 0..n_replicates {
        let mut levels = Vec::with_capacity(truth.nominal_mg_ml.len());
        for (i, &nominal) in truth.nominal_mg_ml.iter().enumerate() {
            let c_meas = crate::domain::convert_concentration(nominal)?;
            let z: f64 = rng.sample(StandardNormal);
            let u = (sigma_u * z).exp();
            factors.push(u);
            let c = c_meas * u;
            let e: f64 = rng.sample(StandardNormal);
            let r = rayleigh(c, mw, a2, &optics) + sd_r * e;
            let with_ri = i < truth.ri_levels;
            let dn = with_ri.then(|| sample_trunc_normal_pos(rng, c * truth.dndc, sd_dn));
            levels.push(LevelObservation {
                level: i,
                c_meas,
                rayleigh: Some(r),
                delta_n: dn,
                ri_included: with_ri,
                ls_included: true,
            });
        }
        runs.push(RunData {
            run_id: format!("rep{}", rep + 1),
            levels,
        });
    }
    let data = CleanDataset {
        conditions: vec![ConditionData {
            condition_id: "sim".to_string(),
            n0: None,
            runs,
        }],
    };
    Ok((data, factors))
}

/// Prior on σ²_u used when fitting simulated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorRegime {
    /// IG(1 + 1/(2σ²_u), 1/2), the inverse-χ² prior whose mean is the
    /// true σ²_u.
    Informative,
    /// IG(1 + 1/(2 + 2σ²_u), 1/2). Its mean is 1 + σ²_u, not σ²_u.
    InformativeAsPrinted,
    /// IG(1, σ²_u)
    Intermediate,
    /// IG(1, (log 1.4 / 1.96)²)
    Weakly,
    /// Measured concentration taken as the truth (u ≡ 1).
    NoAdjustment,
}

impl PriorRegime {
    pub fn label(self) -> &'static str {
        match self {
            PriorRegime::Informative => "informative",
            PriorRegime::InformativeAsPrinted => "informative_as_printed",
            PriorRegime::Intermediate => "intermediate",
            PriorRegime::Weakly => "weakly",
            PriorRegime::NoAdjustment => "no_adjustment",
        }
    }
}

/// The σ²_u prior of a regime, applied on top of `base`. The boolean is
/// `false` for the no-adjustment model.
pub fn prior_for_regime(regime: PriorRegime, true_sigma_u2: f64, base: PriorConfig) -> (PriorConfig, bool) {
    match regime {
        PriorRegime::Informative => (
            PriorConfig {
                a_u: 1.0 + 1.0 / (2.0 * true_sigma_u2),
                b_u: 0.5,
                ..base
            },
            true,
        ),
        PriorRegime::InformativeAsPrinted => (
            PriorConfig {
                a_u: 1.0 + 1.0 / (2.0 + 2.0 * true_sigma_u2),
                b_u: 0.5,
                ..base
            },
            true,
        ),
        PriorRegime::Intermediate => (
            PriorConfig {
                a_u: 1.0,
                b_u: true_sigma_u2,
                ..base
            },
            true,
        ),
        PriorRegime::Weakly => (
            PriorConfig {
                a_u: 1.0,
                b_u: (1.4f64.ln() / 1.96).powi(2),
                ..base
            },
            true,
        ),
        PriorRegime::NoAdjustment => (base, false),
    }
}

/// Factorial design over A2, concentration error, σ²_u prior and the
/// number of replicate runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub schema_version: u32,
    pub a2_values: Vec<f64>,
    /// Relative concentration errors, e.g. 0.05 for 5%.
    pub error_levels: Vec<f64>,
    pub prior_regimes: Vec<PriorRegime>,
    pub replicate_counts: Vec<usize>,
    pub n_monte_carlo: usize,
    #[serde(default)]
    pub truth: SimTruth,
    #[serde(default)]
    pub seed: u64,
}

impl SimDesign {
    /// The full 8 × 4 × 4 × 4 study with 20 repetitions per cell.
    pub fn full(seed: u64) -> Self {
        SimDesign {
            schema_version: SCHEMA_VERSION,
            a2_values: vec![1e-2, -1e-2, 1e-3, -1e-3, 1e-4, -1e-4, 1e-5, -1e-5],
            error_levels: vec![0.01, 0.05, 0.10, 0.20],
            prior_regimes: vec![
                PriorRegime::Informative,
                PriorRegime::Intermediate,
                PriorRegime::Weakly,
                PriorRegime::NoAdjustment,
            ],
            replicate_counts: vec![1, 2, 5, 10],
            n_monte_carlo: 20,
            truth: SimTruth::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.a2_values.iter().any(|a| *a == 0.0 || !a.is_finite()) {
            return Err(Error::InvalidInput("a2 values must be finite and non-zero".into()));
        }
        if self.error_levels.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidInput("error levels must be >= 0".into()));
        }
        if self.replicate_counts.contains(&0) || self.n_monte_carlo == 0 {
            return Err(Error::InvalidInput(
                "replicate counts and n_monte_carlo must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.a2_values.len() * self.error_levels.len() * self.prior_regimes.len() * self.replicate_counts.len()
    }

    /// All cells, A2 slowest and replicate count fastest.
    pub fn cells(&self) -> Vec<SimCell> {
        let mut out = Vec::with_capacity(self.n_cells());
        for &a2 in &self.a2_values {
            for &error in &self.error_levels {
                for &regime in &self.prior_regimes {
                    for &n_replicates in &self.replicate_counts {
                        out.push(SimCell {
                            index: out.len(),
                            a2,
                            error,
                            regime,
                            n_replicates,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimCell {
    pub index: usize,
    pub a2: f64,
    pub error: f64,
    pub regime: PriorRegime,
    pub n_replicates: usize,
}

impl SimCell {
    pub fn sigma_u(&self) -> f64 {
        sigma_u_from_error(self.error)
    }

    /// The M1 fit used for this cell.
    pub fn model_spec(&self, truth: &SimTruth) -> ModelSpec {
        let s2 = self.sigma_u().powi(2);
        let (priors, adjust) = prior_for_regime(self.regime, s2, simulation_priors());
        let mut spec = ModelSpec::new(
            format!("cell{}", self.index),
            priors,
            MwHypothesis::FixedMultiple { x: 1 },
            truth.constants,
        );
        spec.adjust_concentration = adjust;
        spec
    }
}

/// Outcome of one simulated fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub posterior_mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub r_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimCellResult {
    pub relative_bias: f64,
    pub coverage_95: f64,
    pub relative_width: f64,
    pub n_completed: usize,
    /// Fits dropped because A2's R̂ exceeded [`RHAT_EXCLUDE`].
    pub n_rhat_excluded: usize,
    /// Fits that failed outright (e.g. no valid starting state).
    pub n_failed: usize,
}

/// Aggregate completed repetitions: mean of (mean − A2)/A2, the share of
/// 95% intervals containing A2, and mean interval width over |A2|. The
/// bias is relative to the signed A2, so a downward shift of the estimate
/// shows as a negative bias for positive A2 and a positive one for
/// negative A2.
pub fn metrics(a2_true: f64, reps: &[RepResult]) -> Result<SimCellResult> {
    if reps.is_empty() {
        return Err(Error::NoCompletedReps);
    }
    let n = reps.len() as f64;
    let scale = a2_true.abs();
    let bias = reps.iter().map(|r| (r.posterior_mean - a2_true) / a2_true).sum::<f64>() / n;
    let covered = reps
        .iter()
        .filter(|r| r.q025 <= a2_true && a2_true <= r.q975)
        .count();
    let width = reps.iter().map(|r| (r.q975 - r.q025) / scale).sum::<f64>() / n;
    Ok(SimCellResult {
        relative_bias: bias,
        coverage_95: covered as f64 / n,
        relative_width: width,
        n_completed: reps.len(),
        n_rhat_excluded: 0,
        n_failed: 0,
    })
}

/// Fit one dataset and extract the A2 summary.
pub fn fit_rep(data: &CleanDataset, spec: &ModelSpec, cfg: &ChainConfig) -> Result<RepResult> {
    let model = Model::new(data, spec)?;
    let draws = run_chains(&model, cfg)?;
    let name = format!("a2[{}]", model.condition_ids()[0]);
    let r_hat = if cfg.n_chains >= 2 {
        gelman_rubin(&draws, &name)?
    } else {
        1.0
    };
    let summary = summarize(&draws)?;
    let a2 = summary.get(&name)?;
    Ok(RepResult {
        posterior_mean: a2.mean,
        q025: a2.q025,
        q975: a2.q975,
        r_hat,
    })
}

fn rep_rng(seed: u64, cell: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 32) | rep as u64);
    rng
}

/// Generate and fit repetition `rep` of `cell`.
pub fn run_rep(cell: &SimCell, truth: &SimTruth, cfg: &ChainConfig, seed: u64, rep: usize) -> Result<RepResult> {
    let mut rng = rep_rng(seed, cell.index, rep);
    let data = generate_dataset(truth, cell.a2, cell.sigma_u(), cell.n_replicates, &mut rng)?;
    let fit_cfg = ChainConfig {
        seed: rng.next_u64(),
        ..*cfg
    };
    fit_rep(&data, &cell.model_spec(truth), &fit_cfg)
}

fn reduce(cell: &SimCell, outcomes: &[Result<RepResult>]) -> Result<SimCellResult> {
    let mut kept = Vec::new();
    let mut excluded = 0;
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok(r) if r.r_hat.is_finite() && r.r_hat <= RHAT_EXCLUDE => kept.push(*r),
            Ok(_) => excluded += 1,
            Err(e) => {
                log::warn!("cell {} repetition failed: {e}", cell.index);
                failed += 1;
            }
        }
    }
    let mut out = metrics(cell.a2, &kept)?;
    out.n_rhat_excluded = excluded;
    out.n_failed = failed;
    Ok(out)
}

/// Run every repetition of one cell sequentially.
pub fn run_cell(cell: &SimCell, truth: &SimTruth, cfg: &ChainConfig, n_monte_carlo: usize, seed: u64) -> Result<SimCellResult> {
    let outcomes: Vec<Result<RepResult>> = (0..n_monte_carlo)
        .map(|rep| run_rep(cell, truth, cfg, seed, rep))
        .collect();
    reduce(cell, &outcomes)
}

/// A finished cell, in design order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: SimCell,
    /// `None` when no repetition completed.
    pub result: Option<SimCellResult>,
    pub n_monte_carlo: usize,
    /// Summed wall-clock seconds of the cell's repetitions.
    pub runtime_s: f64,
}

/// Run the selected cells (all when `only` is `None`) with every
/// (cell, repetition) pair as one task on a pool of `workers` threads.
/// Results do not depend on scheduling.
pub fn run_design(design: &SimDesign, cfg: &ChainConfig, only: Option<&[usize]>, workers: usize) -> Result<Vec<CellReport>> {
    design.validate()?;
    cfg.validate()?;
    let cells: Vec<SimCell> = design
        .cells()
        .into_iter()
        .filter(|c| only.is_none_or(|o| o.contains(&c.index)))
        .collect();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..design.n_monte_carlo).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let outcomes: Vec<(Result<RepResult>, f64)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, r)| {
                let t0 = Instant::now();
                let out = run_rep(&cells[c], &design.truth, cfg, design.seed, r);
                (out, t0.elapsed().as_secs_f64())
            })
            .collect()
    });
    let n = design.n_monte_carlo;
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let chunk = &outcomes[c * n..(c + 1) * n];
            let results: Vec<Result<RepResult>> = chunk
                .iter()
                .map(|(o, _)| o.as_ref().map(|r| *r).map_err(|e| Error::InvalidInput(e.to_string())))
                .collect();
            CellReport {
                cell: *cell,
                result: reduce(cell, &results).ok(),
                n_monte_carlo: n,
                runtime_s: chunk.iter().map(|(_, t)| t).sum(),
            }
        })
        .collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Deterministic per-cell results:
/// `cell,a2,error,prior,replicates,relative_bias,coverage_95,relative_width,n_completed,n_monte_carlo,n_rhat_excluded,n_failed`.
pub fn write_cells_csv<W: Write>(reports: &[CellReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "cell",
        "a2",
        "error",
        "prior",
        "replicates",
        "relative_bias",
        "coverage_95",
        "relative_width",
        "n_completed",
        "n_monte_carlo",
        "n_rhat_excluded",
        "n_failed",
    ])?;
    for r in reports {
        let res = r.result.as_ref();
        w.write_record([
            r.cell.index.to_string(),
            r.cell.a2.to_string(),
            r.cell.error.to_string(),
            r.cell.regime.label().to_string(),
            r.cell.n_replicates.to_string(),
            fmt_opt(res.map(|x| x.relative_bias)),
            fmt_opt(res.map(|x| x.coverage_95)),
            fmt_opt(res.map(|x| x.relative_width)),
            res.map_or(0, |x| x.n_completed).to_string(),
            r.n_monte_carlo.to_string(),
            res.map_or(0, |x| x.n_rhat_excluded).to_string(),
            res.map_or(r.n_monte_carlo, |x| x.n_failed).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Wall-clock timings, kept apart from the reproducible results: `cell,runtime_s`.
pub fn write_runtime_csv<W: Write>(reports: &[CellReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cell", "runtime_s"])?;
    for r in reports {
        w.write_record([r.cell.index.to_string(), format!("{:.3}", r.runtime_s)])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
