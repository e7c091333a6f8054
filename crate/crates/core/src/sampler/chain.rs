use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use super::draws::{ChainDraws, PosteriorDraws};
use super::ChainConfig;
use crate::error::{Error, Result};
use crate::model::{LatentState, Model, MwHypothesis, MwState, Scope};
use crate::stats::{sample_inv_gamma, sample_trunc_normal_pos};

const INIT_ATTEMPTS: usize = 1000;
const VAR_FLOOR: f64 = 1e-16;
const VAR_CEIL: f64 = 1e2;
/// The concentration factors stay at their starting values for the first
/// burn_in / PIN_DIVISOR iterations. Released early, they can trade places
/// with A2 across the two branches of the Rayleigh parabola and strand
/// the chain in a mode with inflated noise variances.
const PIN_DIVISOR: usize = 10;
const NEWTON_SWEEPS: usize = 20;

/// One scalar coordinate of the sampler, with the transform it is moved
/// on. Positive quantities are moved on the log scale.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Coord {
    LogU(usize),
    A2(usize),
    LogMw(usize),
    MuMw,
    LogSigma2Mw,
    LogSigma2U,
    LogDndc,
    LogSigma2R,
    LogSigma2Dn,
    Flip(usize),
}

impl Coord {
    fn scope(self) -> Scope {
        match self {
            Coord::LogU(j) => Scope::Obs(j),
            Coord::A2(l) | Coord::LogMw(l) | Coord::Flip(l) => Scope::Condition(l),
            Coord::MuMw | Coord::LogSigma2Mw => Scope::MwHyper,
            Coord::LogSigma2U => Scope::SigmaU,
            Coord::LogDndc => Scope::Global,
            Coord::LogSigma2R => Scope::SigmaR,
            Coord::LogSigma2Dn => Scope::SigmaDn,
        }
    }

    fn is_log(self) -> bool {
        !matches!(self, Coord::A2(_) | Coord::MuMw | Coord::Flip(_))
    }

    /// Value on the transformed (proposal) scale.
    fn get(self, s: &LatentState) -> f64 {
        let raw = match self {
            Coord::LogU(j) => s.u[j],
            Coord::A2(l) => s.a2[l],
            Coord::LogMw(l) => match &s.mw {
                MwState::Continuous { mw } | MwState::Hierarchical { mw, .. } => mw[l],
                _ => unreachable!("mass coordinate without continuous masses"),
            },
            Coord::MuMw => match &s.mw {
                MwState::Hierarchical { mu, .. } => *mu,
                _ => unreachable!(),
            },
            Coord::LogSigma2Mw => match &s.mw {
                MwState::Hierarchical { sigma2, .. } => *sigma2,
                _ => unreachable!(),
            },
            Coord::LogSigma2U => s.sigma2_u,
            Coord::LogDndc => s.dndc,
            Coord::LogSigma2R => s.sigma2_r,
            Coord::LogSigma2Dn => s.sigma2_dn,
            Coord::Flip(_) => unreachable!("discrete coordinate has no scale"),
        };
        if self.is_log() {
            raw.ln()
        } else {
            raw
        }
    }

    fn set(self, s: &mut LatentState, y: f64) {
        let v = if self.is_log() { y.exp() } else { y };
        match self {
            Coord::LogU(j) => s.u[j] = v,
            Coord::A2(l) => s.a2[l] = v,
            Coord::LogMw(l) => match &mut s.mw {
                MwState::Continuous { mw } | MwState::Hierarchical { mw, .. } => mw[l] = v,
                _ => unreachable!(),
            },
            Coord::MuMw => {
                if let MwState::Hierarchical { mu, .. } = &mut s.mw {
                    *mu = v;
                }
            }
            Coord::LogSigma2Mw => {
                if let MwState::Hierarchical { sigma2, .. } = &mut s.mw {
                    *sigma2 = v;
                }
            }
            Coord::LogSigma2U => s.sigma2_u = v,
            Coord::LogDndc => s.dndc = v,
            Coord::LogSigma2R => s.sigma2_r = v,
            Coord::LogSigma2Dn => s.sigma2_dn = v,
            Coord::Flip(_) => unreachable!(),
        }
    }

    fn flip(self, s: &mut LatentState) {
        if let (Coord::Flip(l), MwState::Dimer { k }) = (self, &mut s.mw) {
            k[l] = !k[l];
        }
    }

    /// Name of the state parameter this coordinate moves.
    fn param_name(self, model: &Model) -> String {
        let mw = model.mw_offset();
        let idx = match self {
            Coord::LogDndc => 0,
            Coord::LogSigma2R => 1,
            Coord::LogSigma2Dn => 2,
            Coord::LogSigma2U => 3,
            Coord::A2(l) => 4 + l,
            Coord::Flip(l) => mw + l,
            Coord::LogMw(l) => match model.spec().hypothesis {
                MwHypothesis::HierarchicalNormal => mw + 2 + l,
                _ => mw + l,
            },
            Coord::MuMw => mw,
            Coord::LogSigma2Mw => mw + 1,
            Coord::LogU(j) => model.u_offset() + j,
        };
        model.param_names()[idx].clone()
    }
}

fn coordinates(model: &Model) -> Vec<Coord> {
    let spec = model.spec();
    let mut out = Vec::new();
    if spec.adjust_concentration {
        out.extend((0..model.n_obs()).map(Coord::LogU));
    }
    for l in 0..model.n_conditions() {
        out.push(Coord::A2(l));
        match spec.hypothesis {
            MwHypothesis::FixedMultiple { .. } => {}
            MwHypothesis::BernoulliDimer => out.push(Coord::Flip(l)),
            MwHypothesis::UniformContinuous { .. } | MwHypothesis::HierarchicalNormal => {
                out.push(Coord::LogMw(l))
            }
        }
    }
    if spec.hypothesis == MwHypothesis::HierarchicalNormal {
        out.push(Coord::MuMw);
        out.push(Coord::LogSigma2Mw);
    }
    if spec.adjust_concentration {
        out.push(Coord::LogSigma2U);
    }
    if spec.fixed.dndc.is_none() {
        out.push(Coord::LogDndc);
    }
    if spec.fixed.sigma2_r.is_none() {
        out.push(Coord::LogSigma2R);
    }
    if spec.fixed.sigma2_dn.is_none() {
        out.push(Coord::LogSigma2Dn);
    }
    out
}

fn clamp_var(v: f64) -> f64 {
    v.clamp(VAR_FLOOR, VAR_CEIL)
}

fn draw_state<R: Rng + ?Sized>(model: &Model, rng: &mut R) -> LatentState {
    let spec = model.spec();
    let p = &spec.priors;
    let m = spec.constants.monomer_mass;
    let nl = model.n_conditions();

    let sigma2_u = if spec.adjust_concentration {
        clamp_var(sample_inv_gamma(rng, p.a_u, p.b_u))
    } else {
        p.b_u
    };
    let u_dist = Normal::new(0.0, sigma2_u.sqrt()).expect("finite sd");
    let u = (0..model.n_obs())
        .map(|_| {
            if spec.adjust_concentration {
                u_dist.sample(rng).exp()
            } else {
                1.0
            }
        })
        .collect();
    let dndc = spec
        .fixed
        .dndc
        .unwrap_or_else(|| sample_trunc_normal_pos(rng, p.dndc_mean, p.dndc_sd));
    let a2 = (0..nl)
        .map(|_| p.a2_mean + p.a2_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let sigma2_r = spec
        .fixed
        .sigma2_r
        .unwrap_or_else(|| clamp_var(sample_inv_gamma(rng, p.a_r, p.b_r)));
    let sigma2_dn = spec
        .fixed
        .sigma2_dn
        .unwrap_or_else(|| clamp_var(sample_inv_gamma(rng, p.a_dn, p.b_dn)));
    let mw = match spec.hypothesis {
        MwHypothesis::FixedMultiple { .. } => MwState::Fixed,
        MwHypothesis::BernoulliDimer => MwState::Dimer {
            k: (0..nl).map(|_| rng.random_bool(0.5)).collect(),
        },
        MwHypothesis::UniformContinuous { lo, hi } => MwState::Continuous {
            mw: (0..nl).map(|_| rng.random_range(lo * m..hi * m)).collect(),
        },
        MwHypothesis::HierarchicalNormal => {
            let mu = rng.random_range(m..20.0 * m);
            let sigma2 = sample_inv_gamma(rng, 1.0, (m / 3.0).powi(2));
            let sd = sigma2.sqrt();
            MwState::Hierarchical {
                mu,
                sigma2,
                mw: (0..nl).map(|_| sample_trunc_normal_pos(rng, mu, sd)).collect(),
            }
        }
    };
    LatentState {
        u,
        dndc,
        a2,
        mw,
        sigma2_u,
        sigma2_r,
        sigma2_dn,
    }
}

/// Random starting state drawn from the priors (variances clamped to
/// [1e-16, 1e2]); retried until the log posterior is finite.
pub fn initial_state<R: Rng + ?Sized>(model: &Model, rng: &mut R) -> Result<LatentState> {
    for _ in 0..INIT_ATTEMPTS {
        let s = draw_state(model, rng);
        if model.log_posterior(&s).is_finite() {
            return Ok(s);
        }
    }
    Err(Error::InitializationFailure {
        attempts: INIT_ATTEMPTS,
    })
}

/// Log density on the transformed scale of `c`, including the log-Jacobian
/// of the exp transform.
fn target(model: &Model, s: &LatentState, c: Coord, y: f64) -> f64 {
    let jac = if c.is_log() { y } else { 0.0 };
    model.scoped(s, c.scope()) + jac
}

/// Proposal standard deviation from the local curvature of the
/// conditional log density, 2.4 conditional standard deviations.
fn curvature_scale(model: &Model, s: &mut LatentState, c: Coord) -> f64 {
    let y = c.get(s);
    let h = if c.is_log() { 1e-3 } else { 1e-6 * y.abs().max(1e-3) };
    let f0 = target(model, s, c, y);
    c.set(s, y + h);
    let fp = target(model, s, c, y + h);
    c.set(s, y - h);
    let fm = target(model, s, c, y - h);
    c.set(s, y);
    let d2 = (fp - 2.0 * f0 + fm) / (h * h);
    let fallback = if c.is_log() { 0.1 } else { 1e-3 * y.abs().max(1e-6) };
    if d2.is_finite() && d2 < 0.0 {
        (2.4 / (-d2).sqrt()).clamp(1e-12, 10.0 * fallback.max(1.0))
    } else {
        fallback
    }
}

/// Full-state log density on the transformed scale.
fn full_target(model: &Model, s: &LatentState, coords: &[Coord]) -> f64 {
    let jac: f64 = coords.iter().filter(|c| c.is_log()).map(|c| c.get(s)).sum();
    model.log_posterior(s) + jac
}

/// Joint Gaussian random-walk move over every continuous coordinate, with
/// the covariance estimated from burn-in draws and frozen afterwards.
struct BlockMove {
    coords: Vec<Coord>,
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    chol: Option<DMatrix<f64>>,
    log_lambda: f64,
    window_accepts: usize,
    window_tries: usize,
    kept_accepts: usize,
    kept_tries: usize,
}

const BLOCK_TARGET: f64 = 0.234;

impl BlockMove {
    fn new(coords: Vec<Coord>) -> Self {
        let d = coords.len();
        BlockMove {
            coords,
            n: 0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
            chol: None,
            log_lambda: 0.0,
            window_accepts: 0,
            window_tries: 0,
            kept_accepts: 0,
            kept_tries: 0,
        }
    }

    fn current(&self, s: &LatentState) -> DVector<f64> {
        DVector::from_iterator(self.coords.len(), self.coords.iter().map(|c| c.get(s)))
    }

    fn observe(&mut self, s: &LatentState) {
        let y = self.current(s);
        self.n += 1;
        let delta = &y - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &y - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn refresh(&mut self) {
        let d = self.coords.len();
        if self.n < (20 * d).max(200) {
            return;
        }
        let mut cov = &self.m2 / (self.n - 1) as f64;
        for i in 0..d {
            cov[(i, i)] += 1e-6 * cov[(i, i)] + 1e-300;
        }
        cov *= 2.38 * 2.38 / d as f64;
        if let Some(c) = cov.cholesky() {
            self.chol = Some(c.l());
        }
    }

    fn step(&mut self, model: &Model, s: &mut LatentState, rng: &mut ChaCha8Rng, burning: bool) {
        let Some(l) = &self.chol else { return };
        let y = self.current(s);
        let old = full_target(model, s, &self.coords);
        let z = DVector::from_iterator(y.len(), (0..y.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y_new = &y + (l * z) * self.log_lambda.exp();
        for (c, v) in self.coords.iter().zip(y_new.iter()) {
            c.set(s, *v);
        }
        let new = full_target(model, s, &self.coords);
        let ok = new.is_finite() && rng.random::<f64>().ln() < new - old;
        if !ok {
            for (c, v) in self.coords.iter().zip(y.iter()) {
                c.set(s, *v);
            }
        }
        if burning {
            self.window_tries += 1;
            self.window_accepts += usize::from(ok);
        } else {
            self.kept_tries += 1;
            self.kept_accepts += usize::from(ok);
        }
    }

    fn adapt(&mut self, gain: f64) {
        if self.window_tries > 0 {
            let rate = self.window_accepts as f64 / self.window_tries as f64;
            self.log_lambda += gain * (rate - BLOCK_TARGET);
        }
        self.window_accepts = 0;
        self.window_tries = 0;
    }
}

/// One damped Newton step on coordinate `c` of the conditional log
/// density, kept only if it increases the density.
fn newton_step(model: &Model, s: &mut LatentState, c: Coord) {
    let y = c.get(s);
    let h = if c.is_log() { 1e-3 } else { 1e-6 * y.abs().max(1e-3) };
    let f0 = target(model, s, c, y);
    c.set(s, y + h);
    let fp = target(model, s, c, y + h);
    c.set(s, y - h);
    let fm = target(model, s, c, y - h);
    c.set(s, y);
    let g = (fp - fm) / (2.0 * h);
    let d2 = (fp - 2.0 * f0 + fm) / (h * h);
    if !(f0.is_finite() && g.is_finite() && d2.is_finite() && d2 < 0.0) {
        return;
    }
    let mut step = -g / d2;
    if c.is_log() {
        step = step.clamp(-5.0, 5.0);
    }
    for _ in 0..20 {
        c.set(s, y + step);
        if target(model, s, c, y + step) > f0 {
            return;
        }
        step *= 0.5;
    }
    c.set(s, y);
}

struct CoordState {
    coord: Coord,
    log_scale: f64,
    window_accepts: usize,
    window_tries: usize,
    kept_accepts: usize,
    kept_tries: usize,
}

/// Run a single chain from `state` with its own RNG.
pub fn run_chain(model: &Model, cfg: &ChainConfig, mut state: LatentState, rng: &mut ChaCha8Rng) -> ChainDraws {
    // Move the random start towards the bulk before any Metropolis step;
    // the concentration factors stay put for the same reason they are
    // pinned below.
    let order = coordinates(model);
    for _ in 0..NEWTON_SWEEPS {
        for &c in &order {
            if !matches!(c, Coord::Flip(_) | Coord::LogU(_) | Coord::LogSigma2U) {
                newton_step(model, &mut state, c);
            }
        }
    }
    let mut coords: Vec<CoordState> = order
        .into_iter()
        .map(|coord| {
            let scale = match coord {
                Coord::Flip(_) => 1.0,
                _ => curvature_scale(model, &mut state, coord),
            };
            CoordState {
                coord,
                log_scale: scale.ln(),
                window_accepts: 0,
                window_tries: 0,
                kept_accepts: 0,
                kept_tries: 0,
            }
        })
        .collect();

    let mut draws = Vec::with_capacity(cfg.retained());
    let mut log_post = Vec::with_capacity(cfg.retained());
    let mut iters = Vec::with_capacity(cfg.retained());
    let mut row = Vec::new();
    let mut window = 0usize;

    let continuous: Vec<Coord> = coords
        .iter()
        .map(|cs| cs.coord)
        .filter(|c| !matches!(c, Coord::Flip(_)))
        .collect();
    let mut block = (continuous.len() >= 2).then(|| BlockMove::new(continuous));
    let pinned_until = cfg.burn_in / PIN_DIVISOR;
    // covariance learning starts once the early transient has passed
    let learn_from = (cfg.burn_in / 4).max(pinned_until);
    for it in 1..=cfg.n_iter {
        let burning = it <= cfg.burn_in;
        let pinned = it <= pinned_until;
        for cs in coords.iter_mut() {
            if pinned && matches!(cs.coord, Coord::LogU(_) | Coord::LogSigma2U) {
                continue;
            }
            let accepted = match cs.coord {
                Coord::Flip(_) => {
                    let scope = cs.coord.scope();
                    let old = model.scoped(&state, scope);
                    cs.coord.flip(&mut state);
                    let new = model.scoped(&state, scope);
                    let ok = rng.random::<f64>().ln() < new - old;
                    if !ok {
                        cs.coord.flip(&mut state);
                    }
                    ok
                }
                c => {
                    let y = c.get(&state);
                    let old = target(model, &state, c, y);
                    let z: f64 = rng.sample(StandardNormal);
                    let y_new = y + cs.log_scale.exp() * z;
                    c.set(&mut state, y_new);
                    let new = target(model, &state, c, y_new);
                    let ok = new.is_finite() && rng.random::<f64>().ln() < new - old;
                    if !ok {
                        c.set(&mut state, y);
                    }
                    ok
                }
            };
            if burning {
                cs.window_tries += 1;
                cs.window_accepts += usize::from(accepted);
            } else {
                cs.kept_tries += 1;
                cs.kept_accepts += usize::from(accepted);
            }
        }

        if let Some(b) = block.as_mut() {
            if !pinned {
                b.step(model, &mut state, rng, burning);
            }
            if burning && it > learn_from {
                b.observe(&state);
            }
        }

        if burning && it % cfg.adapt_window == 0 {
            window += 1;
            let gain = 3.0 / (window as f64).sqrt();
            if let Some(b) = block.as_mut() {
                b.adapt(gain);
                b.refresh();
            }
            for cs in coords.iter_mut() {
                if matches!(cs.coord, Coord::Flip(_)) {
                    continue;
                }
                let rate = cs.window_accepts as f64 / cs.window_tries.max(1) as f64;
                cs.log_scale += gain * (rate - cfg.target_accept);
                cs.window_accepts = 0;
                cs.window_tries = 0;
            }
        }

        if !burning && (it - cfg.burn_in) % cfg.thin == 0 {
            debug_assert!(state.is_valid(), "retained draw violates the support");
            model.state_to_row(&state, &mut row);
            draws.push(row.clone());
            log_post.push(model.log_posterior(&state));
            iters.push(it);
        }
    }

    let mut acceptance: Vec<(String, f64)> = coords
        .iter()
        .map(|cs| {
            let rate = cs.kept_accepts as f64 / cs.kept_tries.max(1) as f64;
            (cs.coord.param_name(model), rate)
        })
        .collect();
    if let Some(b) = block.filter(|b| b.kept_tries > 0) {
        acceptance.push(("block".to_string(), b.kept_accepts as f64 / b.kept_tries as f64));
    }
    ChainDraws {
        iters,
        draws,
        log_post,
        acceptance,
    }
}

/// Run `cfg.n_chains` independent chains in parallel. Chain `i` uses the
/// ChaCha8 stream `i` of `cfg.seed`, so results do not depend on thread
/// scheduling.
pub fn run_chains(model: &Model, cfg: &ChainConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let chains: Result<Vec<ChainDraws>> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let init = initial_state(model, &mut rng)?;
            Ok(run_chain(model, cfg, init, &mut rng))
        })
        .collect();
    Ok(PosteriorDraws {
        names: model.param_names().to_vec(),
        chains: chains?,
    })
}
