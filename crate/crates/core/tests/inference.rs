use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sls_bayes::domain::{ConditionData, CleanDataset, LevelObservation, PhysicalConstants, RunData};
use sls_bayes::forward::{rayleigh, OpticalParams};
use sls_bayes::inference::{concentration_ratios, dic, ppc_pvalues, summarize, write_ppc_csv, Reading};
use sls_bayes::model::{default_priors, FixedParams, LatentState, Model, ModelSpec, MwHypothesis, MwState, Protein};
use sls_bayes::sampler::{run_chains, ChainConfig, ChainDraws, PosteriorDraws};
use sls_bayes::simulate::{generate_with_factors, sigma_u_from_error, simulation_priors, SimTruth};
use sls_bayes::stats::mean;

const SIGMA2_R: f64 = 1e-11;

fn rayleigh_only(a2: f64, seed: u64) -> (CleanDataset, f64) {
    let constants = PhysicalConstants::lysozyme();
    let optics = OpticalParams::new(0.2, constants);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels = Vec::new();
    let mut data_precision = 0.0;
    for (i, nominal) in sls_bayes::simulate::NOMINAL_MG_ML.iter().enumerate() {
        let c = nominal / 1000.0;
        let a = rayleigh(c, constants.monomer_mass, 0.0, &optics);
        let b = a - rayleigh(c, constants.monomer_mass, 1.0, &optics);
        data_precision += b * b / SIGMA2_R;
        let z: f64 = rng.sample(StandardNormal);
        levels.push(LevelObservation {
            level: i,
            c_meas: c,
            rayleigh: Some(a - b * a2 + SIGMA2_R.sqrt() * z),
            delta_n: None,
            ri_included: false,
            ls_included: true,
        });
    }
    let data = CleanDataset {
        conditions: vec![ConditionData {
            condition_id: "x".into(),
            n0: None,
            runs: vec![RunData {
                run_id: "r".into(),
                levels,
            }],
        }],
    };
    (data, data_precision)
}

fn reduced_spec() -> ModelSpec {
    let mut spec = ModelSpec::new(
        "reduced",
        default_priors(Protein::Lysozyme, false),
        MwHypothesis::FixedMultiple { x: 1 },
        PhysicalConstants::lysozyme(),
    );
    spec.adjust_concentration = false;
    spec.fixed = FixedParams {
        dndc: Some(0.2),
        sigma2_r: Some(SIGMA2_R),
        sigma2_dn: Some(2e-9),
    };
    spec
}

fn constant_draws(model: &Model, s: &LatentState, n: usize) -> PosteriorDraws {
    let mut row = Vec::new();
    model.state_to_row(s, &mut row);
    PosteriorDraws {
        names: model.param_names().to_vec(),
        chains: vec![ChainDraws {
            iters: (0..n).collect(),
            draws: vec![row; n],
            log_post: vec![0.0; n],
            acceptance: vec![],
        }],
    }
}

fn point(a2: f64, n_obs: usize) -> LatentState {
    LatentState {
        u: vec![1.0; n_obs],
        dndc: 0.2,
        a2: vec![a2],
        mw: MwState::Fixed,
        sigma2_u: 1e-4,
        sigma2_r: SIGMA2_R,
        sigma2_dn: 2e-9,
    }
}

#[test]
fn degenerate_draws_have_no_effective_parameters() {
    let (data, _) = rayleigh_only(1e-3, 1);
    let model = Model::new(&data, &reduced_spec()).unwrap();
    let s = point(9e-4, model.n_obs());
    let d = dic(&constant_draws(&model, &s, 200), &model).unwrap();
    assert!(d.p_d.abs() <= 1e-12 * d.dbar.abs(), "p_d {}", d.p_d);
    assert!((d.dic + 2.0 * model.log_likelihood(&s)).abs() < 1e-9 * d.dic.abs());
    assert!((d.dic - (2.0 * d.dbar - d.d_at_mean)).abs() <= 1e-12 * d.dic.abs());
}

#[test]
fn conjugate_effective_parameter_count() {
    let (data, precision) = rayleigh_only(1e-3, 2);
    let model = Model::new(&data, &reduced_spec()).unwrap();
    let cfg = ChainConfig {
        n_iter: 22_000,
        burn_in: 2_000,
        thin: 5,
        n_chains: 2,
        ..ChainConfig::desk(2)
    };
    let draws = run_chains(&model, &cfg).unwrap();
    let d = dic(&draws, &model).unwrap();
    // posterior variance / likelihood variance
    let post_var = 1.0 / (precision + 1.0);
    let expected = post_var * precision;
    assert!((d.p_d - expected).abs() < 0.15, "p_d {} vs {expected}", d.p_d);
}

#[test]
fn ppc_median_and_extreme_observations() {
    let (mut data, _) = rayleigh_only(1e-3, 3);
    let constants = PhysicalConstants::lysozyme();
    let optics = OpticalParams::new(0.2, constants);
    let levels = &mut data.conditions[0].runs[0].levels;
    let c0 = levels[0].c_meas;
    levels[0].rayleigh = Some(rayleigh(c0, constants.monomer_mass, 1e-3, &optics));
    levels[1].rayleigh = Some(1.0);
    let model = Model::new(&data, &reduced_spec()).unwrap();
    let draws = constant_draws(&model, &point(1e-3, model.n_obs()), 4000);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = ppc_pvalues(&draws, &model, &mut rng).unwrap();
    assert_eq!(p.len(), model.n_obs());
    assert!(p.iter().all(|v| v.reading == Reading::Rayleigh));
    assert!((p[0].pvalue - 0.5).abs() < 0.05, "{}", p[0].pvalue);
    assert_eq!(p[1].pvalue, 1.0);

    let mut out = Vec::new();
    write_ppc_csv(&p, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("level,condition,pvalue"));
    assert_eq!(text.lines().count(), p.len() + 1);
}

#[test]
fn ratios_track_true_concentration_errors() {
    let truth = SimTruth::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (data, u_true) =
        generate_with_factors(&truth, 1e-3, sigma_u_from_error(0.05), 5, &mut rng).unwrap();
    let spec = ModelSpec::new(
        "M1",
        sls_bayes::model::PriorConfig {
            a_u: 1.0,
            b_u: sigma_u_from_error(0.05).powi(2),
            ..simulation_priors()
        },
        MwHypothesis::FixedMultiple { x: 1 },
        truth.constants,
    );
    let model = Model::new(&data, &spec).unwrap();
    let draws = run_chains(&model, &ChainConfig::desk(6)).unwrap();
    let ratios = concentration_ratios(&draws, &model).unwrap();
    assert_eq!(ratios.len(), u_true.len());
    let off = model.u_offset();
    for j in 0..ratios.len() {
        assert!(draws.pooled(off + j).iter().all(|&v| v > 0.0));
    }
    let est: Vec<f64> = ratios.iter().map(|r| r.ratio.mean).collect();
    let (mx, my) = (mean(&est), mean(&u_true));
    let cov: f64 = est.iter().zip(&u_true).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = est.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = u_true.iter().map(|b| (b - my).powi(2)).sum();
    let r = cov / (vx * vy).sqrt();
    assert!(r > 0.5, "pearson r {r}");

    let s = summarize(&draws).unwrap();
    assert_eq!(s.conditions.len(), 1);
    assert!(s.conditions[0].prob_positive > 0.99);
}

#[test]
fn ratios_are_one_without_adjustment() {
    let (data, _) = rayleigh_only(1e-3, 7);
    let model = Model::new(&data, &reduced_spec()).unwrap();
    let draws = constant_draws(&model, &point(1e-3, model.n_obs()), 100);
    for r in concentration_ratios(&draws, &model).unwrap() {
        assert_eq!(r.ratio.mean, 1.0);
    }
}
