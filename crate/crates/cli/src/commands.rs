use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sls_bayes::domain::{ingest_trace, CleanDataset, PhysicalConstants, TraceKind};
use sls_bayes::inference::{
    concentration_ratios, dic, ppc_pvalues, summarize, write_a2_csv, write_ppc_csv, write_ratios_csv,
    write_summary_csv, DicReport, Reading,
};
use sls_bayes::model::{default_priors, Model, ModelSpec, Protein};
use sls_bayes::preprocess::pipeline::{
    assemble_condition, clean_trace, write_cluster_csv, write_points_csv, CleanConfig, CleanDesign,
};
use sls_bayes::sampler::{gelman_rubin, run_chains, ChainConfig, PosteriorDraws};
use sls_bayes::simulate::{run_design, write_cells_csv, write_runtime_csv, SimDesign};

use crate::error::{CliError, CliResult, Context};
use crate::manifest::{RunDir, CONFIG_FILE};

/// Fits with any split R̂ at or above this fail the convergence gate.
pub const RHAT_GATE: f64 = 1.1;

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Args)]
pub struct ChainArgs {
    #[arg(long, default_value_t = 5)]
    pub chains: usize,
    #[arg(long, default_value_t = 300_000)]
    pub iters: usize,
    #[arg(long, default_value_t = 200_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 250)]
    pub thin: usize,
}

impl ChainArgs {
    pub fn config(&self, seed: u64) -> CliResult<ChainConfig> {
        let cfg = ChainConfig {
            n_iter: self.iters,
            burn_in: self.burnin,
            thin: self.thin,
            n_chains: self.chains,
            ..ChainConfig::production(seed)
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CleanArgs {
    /// Light-scattering trace CSV (time column then one column per detector).
    #[arg(long)]
    pub ls: PathBuf,
    /// Refractive-index trace CSV.
    #[arg(long)]
    pub ri: Option<PathBuf>,
    /// Injection design JSON.
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Moving-average smoothing of the instability statistic.
    #[arg(long)]
    pub smooth: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Cleaned dataset JSON; repeat to pool conditions or runs.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// ModelSpec JSON file, or one of the built-in names M1..M4.
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// At least two models, as for `fit --model`.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Simulation design JSON.
    #[arg(long)]
    pub design: PathBuf,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Overrides the design's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Comma-separated cell indices to run; all cells when absent.
    #[arg(long, value_delimiter = ',')]
    pub cells: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PpcArgs {
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Output directory of a previous `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanRunConfig {
    pub schema_version: u32,
    pub design: CleanDesign,
    pub clean: CleanConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub schema_version: u32,
    pub model: ModelSpec,
    pub chain: ChainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub schema_version: u32,
    pub models: Vec<ModelSpec>,
    pub chain: ChainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub schema_version: u32,
    pub design: SimDesign,
    pub chain: ChainConfig,
    pub cells: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcConfig {
    pub schema_version: u32,
    pub fit: FitConfig,
    pub seed: u64,
}

fn read_text(path: &Path, what: &str) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{what} {}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> CliResult<T> {
    let text = read_text(path, what)?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{what} {}: {e}", path.display())))
}

fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_with<F>(dir: &Path, name: &str, f: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> sls_bayes::Result<()>,
{
    let path = dir.join(name);
    let mut w = create_file(&path)?;
    f(&mut w).ctx(|| format!("writing {}", path.display()))?;
    w.flush().map_err(|e| CliError::io(&path, e))
}

/// Built-in names M1..M4 give the lysozyme candidates with default priors;
/// anything else is read as a ModelSpec JSON file.
pub fn resolve_model(arg: &str) -> CliResult<ModelSpec> {
    let builtin = ModelSpec::lysozyme_candidates(
        default_priors(Protein::Lysozyme, false),
        PhysicalConstants::lysozyme(),
    );
    if let Some(spec) = builtin.into_iter().find(|s| s.name == arg) {
        return Ok(spec);
    }
    let path = Path::new(arg);
    let text = read_text(path, "model config")?;
    ModelSpec::from_json(&text).map_err(|e| CliError::Usage(format!("model config {arg}: {e}")))
}

/// Concatenate datasets; conditions sharing an id have their runs pooled.
pub fn load_datasets(paths: &[PathBuf]) -> CliResult<CleanDataset> {
    let mut merged = CleanDataset::default();
    for p in paths {
        let text = read_text(p, "dataset")?;
        let d = CleanDataset::from_json(&text).ctx(|| format!("dataset {}", p.display()))?;
        for cond in d.conditions {
            match merged
                .conditions
                .iter_mut()
                .find(|c| c.condition_id == cond.condition_id)
            {
                Some(existing) => {
                    if existing.n0 != cond.n0 {
                        return Err(CliError::Usage(format!(
                            "condition `{}` has conflicting n0 values",
                            cond.condition_id
                        )));
                    }
                    for run in cond.runs {
                        if existing.runs.iter().any(|r| r.run_id == run.run_id) {
                            return Err(CliError::Usage(format!(
                                "run `{}` of condition `{}` appears twice",
                                run.run_id, cond.condition_id
                            )));
                        }
                        existing.runs.push(run);
                    }
                }
                None => merged.conditions.push(cond),
            }
        }
    }
    merged.validate().ctx(|| "merged dataset".into())?;
    Ok(merged)
}

pub fn cmd_clean(args: &CleanArgs) -> CliResult<CleanDataset> {
    let design: CleanDesign = parse_json(&args.design, "design")?;
    design
        .validate()
        .map_err(|e| CliError::Usage(format!("design {}: {e}", args.design.display())))?;
    if !(args.tau > 0.0 && args.tau.is_finite()) {
        return Err(CliError::Usage(format!("--tau must be > 0, got {}", args.tau)));
    }
    let cfg = CleanConfig {
        tau: args.tau,
        smooth: args.smooth,
        ..CleanConfig::default()
    };
    let n = design.concentrations_mg_ml.len();

    let ls = ingest_trace(&args.ls, TraceKind::LightScattering).ctx(|| args.ls.display().to_string())?;
    let ls_clean = clean_trace(&ls, n, &cfg).ctx(|| format!("cleaning {}", args.ls.display()))?;
    let ri = match &args.ri {
        Some(p) => {
            let t = ingest_trace(p, TraceKind::RefractiveIndex).ctx(|| p.display().to_string())?;
            let c = clean_trace(&t, n, &cfg).ctx(|| format!("cleaning {}", p.display()))?;
            Some((t, c))
        }
        None => None,
    };
    let condition = assemble_condition(&design, &ls_clean, ri.as_ref().map(|(_, c)| c))
        .ctx(|| "assembling condition".into())?;
    let dataset = CleanDataset {
        conditions: vec![condition],
    };
    dataset.validate().ctx(|| "cleaned dataset".into())?;

    let mut inputs = vec![args.ls.clone(), args.design.clone()];
    inputs.extend(args.ri.clone());
    let mut run = RunDir::create(&args.out, &inputs)?;
    run.write_config(&CleanRunConfig {
        schema_version: CONFIG_SCHEMA,
        design,
        clean: cfg,
    })?;
    let json = dataset.to_json().ctx(|| "serializing dataset".into())?;
    run.write_bytes("dataset.json", format!("{json}\n").as_bytes())?;
    write_with(&run.path, "ls_points.csv", |w| write_points_csv(&ls, &ls_clean, cfg.reference_channel, w))?;
    let mut tables = vec![("ls", &ls_clean)];
    if let Some((t, c)) = &ri {
        write_with(&run.path, "ri_points.csv", |w| write_points_csv(t, c, cfg.reference_channel, w))?;
        tables.push(("ri", c));
    }
    write_with(&run.path, "clusters.csv", |w| write_cluster_csv(&tables, w))?;
    run.finish("clean", None)?;
    Ok(dataset)
}

/// Split R̂ of every parameter; empty with fewer than two chains.
pub fn rhat_table(draws: &PosteriorDraws) -> CliResult<Vec<(String, f64)>> {
    if draws.n_chains() < 2 {
        log::warn!("R̂ needs at least two chains; convergence is not checked");
        return Ok(Vec::new());
    }
    draws
        .names
        .iter()
        .map(|n| Ok((n.clone(), gelman_rubin(draws, n).ctx(|| format!("R̂ of {n}"))?)))
        .collect()
}

fn write_rhat_csv<W: Write>(table: &[(String, f64)], writer: W) -> sls_bayes::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["parameter", "rhat"])?;
    for (n, r) in table {
        w.write_record([n.clone(), r.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_acceptance_csv<W: Write>(draws: &PosteriorDraws, writer: W) -> sls_bayes::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["chain", "coordinate", "rate"])?;
    for (k, chain) in draws.chains.iter().enumerate() {
        for (n, r) in &chain.acceptance {
            w.write_record([(k + 1).to_string(), n.clone(), r.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DicRow {
    pub model: String,
    pub report: DicReport,
}

fn write_dic_csv<W: Write>(rows: &[DicRow], writer: W) -> sls_bayes::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "dbar", "p_d", "dic"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.report.dbar.to_string(),
            r.report.p_d.to_string(),
            r.report.dic.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub draws: PosteriorDraws,
    pub rhat: Vec<(String, f64)>,
    pub dic: DicReport,
}

impl FitOutcome {
    pub fn worst_rhat(&self) -> Option<(&str, f64)> {
        self.rhat
            .iter()
            .map(|(n, r)| (n.as_str(), if r.is_nan() { f64::INFINITY } else { *r }))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn converged(&self) -> bool {
        self.worst_rhat().is_none_or(|(_, r)| r < RHAT_GATE)
    }
}

/// Sample one model and write its draws, summaries and diagnostics into `dir`.
fn fit_into(dir: &Path, data: &CleanDataset, spec: &ModelSpec, cfg: &ChainConfig) -> CliResult<FitOutcome> {
    let model = Model::new(data, spec).ctx(|| format!("model {}", spec.name))?;
    let draws = run_chains(&model, cfg).ctx(|| format!("sampling {}", spec.name))?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let spec_json = spec.to_json().ctx(|| "serializing model".into())?;
    let spec_path = dir.join("model.json");
    fs::write(&spec_path, format!("{spec_json}\n")).map_err(|e| CliError::io(&spec_path, e))?;
    let draws_dir = dir.join("draws");
    draws.write_dir(&draws_dir).ctx(|| draws_dir.display().to_string())?;
    let summary = summarize(&draws).ctx(|| "summarizing draws".into())?;
    write_with(dir, "summary.csv", |w| write_summary_csv(&summary, w))?;
    write_with(dir, "a2.csv", |w| write_a2_csv(&summary, w))?;
    let ratios = concentration_ratios(&draws, &model).ctx(|| "concentration ratios".into())?;
    write_with(dir, "ratios.csv", |w| write_ratios_csv(&ratios, w))?;
    let rhat = rhat_table(&draws)?;
    write_with(dir, "rhat.csv", |w| write_rhat_csv(&rhat, w))?;
    write_with(dir, "acceptance.csv", |w| write_acceptance_csv(&draws, w))?;
    let report = dic(&draws, &model).ctx(|| format!("DIC of {}", spec.name))?;
    let row = DicRow {
        model: spec.name.clone(),
        report,
    };
    write_with(dir, "dic.csv", |w| write_dic_csv(std::slice::from_ref(&row), w))?;
    Ok(FitOutcome {
        draws,
        rhat,
        dic: report,
    })
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<FitOutcome> {
    let data = load_datasets(&args.data)?;
    let spec = resolve_model(&args.model)?;
    let cfg = args.chain.config(args.seed)?;
    let mut inputs = args.data.clone();
    if Path::new(&args.model).is_file() {
        inputs.push(PathBuf::from(&args.model));
    }
    let mut run = RunDir::create(&args.out, &inputs)?;
    let config = FitConfig {
        schema_version: CONFIG_SCHEMA,
        model: spec.clone(),
        chain: cfg,
    };
    run.write_config(&config)?;
    let outcome = fit_into(&args.out, &data, &spec, &cfg)?;
    run.finish("fit", Some(args.seed))?;
    if !outcome.converged() && !args.allow_nonconverged {
        let (name, r) = outcome.worst_rhat().unwrap();
        return Err(CliError::NotConverged(format!(
            "R̂ of {name} is {r:.3} (gate {RHAT_GATE}); rerun longer or pass --allow-nonconverged"
        )));
    }
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct Comparison {
    /// Ascending by DIC.
    pub rows: Vec<DicRow>,
    pub failures: Vec<(String, String)>,
}

pub fn cmd_compare(args: &CompareArgs) -> CliResult<Comparison> {
    if args.models.len() < 2 {
        return Err(CliError::Usage("compare needs at least two --model values".into()));
    }
    let data = load_datasets(&args.data)?;
    let mut specs: Vec<ModelSpec> = args.models.iter().map(|m| resolve_model(m)).collect::<CliResult<_>>()?;
    for i in 1..specs.len() {
        let base = specs[i].name.clone();
        let mut k = 2;
        while specs[..i].iter().any(|s| s.name == specs[i].name) {
            specs[i].name = format!("{base}-{k}");
            k += 1;
        }
    }
    let cfg = args.chain.config(args.seed)?;
    let mut inputs = args.data.clone();
    inputs.extend(args.models.iter().map(PathBuf::from).filter(|p| p.is_file()));
    let mut run = RunDir::create(&args.out, &inputs)?;
    run.write_config(&CompareConfig {
        schema_version: CONFIG_SCHEMA,
        models: specs.clone(),
        chain: cfg,
    })?;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let model_cfg = ChainConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg
        };
        let dir = args.out.join("models").join(&spec.name);
        match fit_into(&dir, &data, spec, &model_cfg) {
            Ok(out) => {
                if !out.converged() {
                    let (n, r) = out.worst_rhat().unwrap();
                    log::warn!("{}: R̂ of {n} is {r:.3}", spec.name);
                }
                rows.push(DicRow {
                    model: spec.name.clone(),
                    report: out.dic,
                });
            }
            Err(e) => {
                log::warn!("{}: {e}", spec.name);
                failures.push((spec.name.clone(), e.to_string()));
            }
        }
    }
    rows.sort_by(|a, b| a.report.dic.total_cmp(&b.report.dic));
    write_with(&run.path, "dic.csv", |w| write_dic_csv(&rows, w))?;
    if !failures.is_empty() {
        let path = run.file("failures.csv");
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        let res: csv::Result<()> = (|| {
            w.write_record(["model", "error"])?;
            for (m, e) in &failures {
                w.write_record([m, e])?;
            }
            w.flush()?;
            Ok(())
        })();
        res.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    run.finish("compare", Some(args.seed))?;
    match rows.len() {
        0 => Err(CliError::Core {
            context: "compare".into(),
            source: sls_bayes::Error::NonFiniteDeviance,
        }),
        1 => {
            log::warn!("only one model survived; the comparison has a single row");
            Ok(Comparison { rows, failures })
        }
        _ => Ok(Comparison { rows, failures }),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<Vec<sls_bayes::simulate::CellReport>> {
    let mut design: SimDesign = parse_json(&args.design, "simulation design")?;
    if let Some(seed) = args.seed {
        design.seed = seed;
    }
    design
        .validate()
        .map_err(|e| CliError::Usage(format!("design {}: {e}", args.design.display())))?;
    if let Some(cells) = &args.cells {
        if let Some(bad) = cells.iter().find(|&&c| c >= design.n_cells()) {
            return Err(CliError::Usage(format!(
                "cell {bad} out of range, design has {} cells",
                design.n_cells()
            )));
        }
    }
    let cfg = args.chain.config(design.seed)?;
    let mut run = RunDir::create(&args.out, std::slice::from_ref(&args.design))?;
    run.write_config(&SimulateConfig {
        schema_version: CONFIG_SCHEMA,
        design: design.clone(),
        chain: cfg,
        cells: args.cells.clone(),
    })?;
    let reports = run_design(&design, &cfg, args.cells.as_deref(), args.workers).ctx(|| "simulation".into())?;
    for r in &reports {
        match &r.result {
            None => log::warn!("cell {}: no repetition completed", r.cell.index),
            Some(res) if res.n_failed + res.n_rhat_excluded > 0 => log::warn!(
                "cell {}: {} failed, {} excluded by R̂",
                r.cell.index,
                res.n_failed,
                res.n_rhat_excluded
            ),
            _ => {}
        }
    }
    write_with(&run.path, "cells.csv", |w| write_cells_csv(&reports, w))?;
    write_with(&run.path, "cells_runtime.csv", |w| write_runtime_csv(&reports, w))?;
    run.finish("simulate", Some(design.seed))?;
    Ok(reports)
}

pub fn cmd_ppc(args: &PpcArgs) -> CliResult<Vec<sls_bayes::inference::PpcValue>> {
    if fs::canonicalize(&args.out).ok() == fs::canonicalize(&args.fit).ok() && args.out.exists() {
        return Err(CliError::Usage("--out must differ from the fit directory".into()));
    }
    let config: FitConfig = parse_json(&args.fit.join(CONFIG_FILE), "fit config")?;
    let data = load_datasets(&args.data)?;
    let model = Model::new(&data, &config.model).ctx(|| "model".into())?;
    let draws_dir = args.fit.join("draws");
    let draws = PosteriorDraws::read_dir(&draws_dir).ctx(|| draws_dir.display().to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let values = ppc_pvalues(&draws, &model, &mut rng).ctx(|| "posterior predictive check".into())?;

    let mut inputs = args.data.clone();
    inputs.push(args.fit.join(CONFIG_FILE));
    for k in 1..=draws.n_chains() {
        inputs.push(draws_dir.join(format!("chain_{k}.csv")));
    }
    let mut run = RunDir::create(&args.out, &inputs)?;
    run.write_config(&PpcConfig {
        schema_version: CONFIG_SCHEMA,
        fit: config,
        seed: args.seed,
    })?;
    for (reading, name) in [(Reading::Rayleigh, "ppc_rayleigh.csv"), (Reading::DeltaN, "ppc_delta_n.csv")] {
        let part: Vec<_> = values.iter().filter(|v| v.reading == reading).cloned().collect();
        write_with(&run.path, name, |w| write_ppc_csv(&part, w))?;
    }
    run.finish("ppc", Some(args.seed))?;
    Ok(values)
}
