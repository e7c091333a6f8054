use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sls_bayes::domain::CleanDataset;
use sls_bayes::inference::{summarize, write_summary_csv};
use sls_bayes::sampler::PosteriorDraws;
use sls_bayes::simulate::traces::{generate_trace, TraceSpec};
use sls_bayes::simulate::{generate_dataset, sigma_u_from_error, SimDesign, SimTruth};
use sls_cli::commands::{
    cmd_clean, cmd_compare, cmd_fit, cmd_ppc, cmd_simulate, ChainArgs, CleanArgs, CompareArgs, FitArgs, PpcArgs,
    SimulateArgs,
};
use sls_cli::manifest::{verify, MANIFEST_FILE};

fn sls() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sls"))
}

fn short_chain() -> ChainArgs {
    ChainArgs {
        chains: 2,
        iters: 3_000,
        burnin: 2_000,
        thin: 5,
    }
}

fn write_trace(dir: &Path, plateaus: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = generate_trace(&TraceSpec::with_plateaus(plateaus), &mut rng).unwrap();
    let path = dir.join("ls.csv");
    t.trace.write_csv(fs::File::create(&path).unwrap()).unwrap();
    path
}

fn write_design(dir: &Path, levels: usize) -> PathBuf {
    let conc: Vec<f64> = (1..=levels).map(|i| i as f64).collect();
    let path = dir.join("design.json");
    let json = serde_json::json!({
        "schema_version": 1,
        "condition_id": "cond",
        "concentrations_mg_ml": conc,
    });
    fs::write(&path, json.to_string()).unwrap();
    path
}

fn write_dataset(dir: &Path, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate_dataset(&SimTruth::default(), 5e-4, sigma_u_from_error(0.05), 2, &mut rng).unwrap();
    let path = dir.join("data.json");
    fs::write(&path, data.to_json().unwrap()).unwrap();
    path
}

fn clean_args(dir: &Path, tau: f64, out: &str) -> CleanArgs {
    CleanArgs {
        ls: write_trace(dir, 5, 11),
        ri: None,
        design: write_design(dir, 3),
        out: dir.join(out),
        tau,
        smooth: false,
    }
}

fn kept_column(points: &Path) -> Vec<bool> {
    let mut r = csv::Reader::from_path(points).unwrap();
    r.records().map(|rec| &rec.unwrap()[2] == "1").collect()
}

#[test]
fn clean_writes_dataset_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let args = clean_args(dir.path(), 1.0, "clean");
    let status = sls()
        .args(["clean", "--ls"])
        .arg(&args.ls)
        .arg("--design")
        .arg(&args.design)
        .arg("--out")
        .arg(&args.out)
        .status()
        .unwrap();
    assert!(status.success());
    let data = CleanDataset::load(args.out.join("dataset.json")).unwrap();
    assert_eq!(data.conditions[0].runs[0].levels.len(), 3);
    let clusters = fs::read_to_string(args.out.join("clusters.csv")).unwrap();
    assert_eq!(clusters.lines().count(), 1 + 5);
    assert_eq!(verify(&args.out).unwrap().command, "clean");
}

#[test]
fn missing_design_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let ls = write_trace(dir.path(), 4, 1);
    let out = sls()
        .args(["clean", "--ls"])
        .arg(&ls)
        .args(["--design", "/definitely/not/here.json", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").join(MANIFEST_FILE).exists());
}

#[test]
fn stricter_tau_keeps_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    cmd_clean(&clean_args(dir.path(), 1.0, "loose")).unwrap();
    cmd_clean(&clean_args(dir.path(), 0.5, "strict")).unwrap();
    let loose = kept_column(&dir.path().join("loose/ls_points.csv"));
    let strict = kept_column(&dir.path().join("strict/ls_points.csv"));
    assert!(strict.iter().zip(&loose).all(|(s, l)| !s || *l));
    assert!(strict.iter().filter(|k| **k).count() < loose.iter().filter(|k| **k).count());
}

fn fit_args(dir: &Path, data: PathBuf, out: &str, seed: u64) -> FitArgs {
    FitArgs {
        data: vec![data],
        model: "M1".into(),
        chain: short_chain(),
        seed,
        out: dir.join(out),
        allow_nonconverged: true,
    }
}

#[test]
fn fit_outputs_round_trip_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 3);
    let a = fit_args(dir.path(), data.clone(), "a", 5);
    cmd_fit(&a).unwrap();
    cmd_fit(&FitArgs { out: dir.path().join("b"), ..a.clone() }).unwrap();

    let draws = PosteriorDraws::read_dir(&a.out.join("draws")).unwrap();
    let mut again = Vec::new();
    write_summary_csv(&summarize(&draws).unwrap(), &mut again).unwrap();
    assert_eq!(fs::read(a.out.join("summary.csv")).unwrap(), again);
    let rhat = fs::read_to_string(a.out.join("rhat.csv")).unwrap();
    assert_eq!(rhat.lines().count(), draws.names.len() + 1);
    let m = verify(&a.out).unwrap();
    assert_eq!((m.command.as_str(), m.seed), ("fit", Some(5)));
    assert_eq!(m.inputs.len(), 1);

    for f in ["summary.csv", "a2.csv", "ratios.csv", "rhat.csv", "dic.csv", "draws/chain_1.csv", "draws/chain_2.csv"] {
        assert_eq!(
            fs::read(a.out.join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn unconverged_fit_exits_4_but_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 4);
    let out = dir.path().join("fit");
    let status = sls()
        .args(["fit", "--model", "M1", "--chains", "2", "--iters", "110", "--burnin", "10", "--thin", "1"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(out.join("summary.csv").exists());
    verify(&out).unwrap();
}

#[test]
fn ppc_tables_follow_inclusion_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = write_dataset(dir.path(), 6);
    let fit = fit_args(dir.path(), data_path.clone(), "fit", 2);
    cmd_fit(&fit).unwrap();
    let args = PpcArgs {
        data: vec![data_path.clone()],
        fit: fit.out.clone(),
        seed: 9,
        out: dir.path().join("ppc"),
    };
    cmd_ppc(&args).unwrap();
    let data = CleanDataset::load(&data_path).unwrap();
    let levels = || data.conditions.iter().flat_map(|c| &c.runs).flat_map(|r| &r.levels);
    let n_ls = levels().filter(|l| l.ls_included).count();
    let n_ri = levels().filter(|l| l.ri_included).count();
    let rows = |f: &str| fs::read_to_string(args.out.join(f)).unwrap().lines().count() - 1;
    assert_eq!(rows("ppc_rayleigh.csv"), n_ls);
    assert_eq!(rows("ppc_delta_n.csv"), n_ri);

    let first = fs::read(args.out.join("ppc_rayleigh.csv")).unwrap();
    cmd_ppc(&PpcArgs { out: dir.path().join("ppc2"), ..args.clone() }).unwrap();
    assert_eq!(first, fs::read(dir.path().join("ppc2/ppc_rayleigh.csv")).unwrap());

    let same = PpcArgs { out: fit.out.clone(), ..args };
    assert_eq!(cmd_ppc(&same).unwrap_err().exit_code(), 2);
}

#[test]
fn compare_ranks_and_deduplicates_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), 7);
    let args = CompareArgs {
        data: vec![data],
        models: vec!["M2".into(), "M1".into(), "M1".into()],
        chain: short_chain(),
        seed: 3,
        out: dir.path().join("cmp"),
    };
    let cmp = cmd_compare(&args).unwrap();
    let names: Vec<&str> = cmp.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names.len(), 3);
    assert_eq!(names[2], "M2");
    assert!(names.contains(&"M1-2"));
    let dics: Vec<f64> = cmp.rows.iter().map(|r| r.report.dic).collect();
    assert!(dics.windows(2).all(|w| w[0] <= w[1]));
    let text = fs::read_to_string(args.out.join("dic.csv")).unwrap();
    assert!(text.starts_with("model,dbar,p_d,dic\n"));
    assert!(args.out.join("models/M1-2/draws/chain_1.csv").exists());

    let one = CompareArgs {
        models: vec!["M1".into()],
        out: dir.path().join("one"),
        ..args
    };
    assert_eq!(cmd_compare(&one).unwrap_err().exit_code(), 2);
}

#[test]
fn simulate_filters_cells_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let design = SimDesign {
        a2_values: vec![1e-3],
        error_levels: vec![0.05],
        replicate_counts: vec![2],
        n_monte_carlo: 2,
        ..SimDesign::full(4)
    };
    let path = dir.path().join("design.json");
    fs::write(&path, serde_json::to_string(&design).unwrap()).unwrap();
    let args = SimulateArgs {
        design: path,
        chain: short_chain(),
        seed: None,
        workers: 1,
        cells: Some(vec![0, 2]),
        out: dir.path().join("sim"),
    };
    let reports = cmd_simulate(&args).unwrap();
    assert_eq!(reports.len(), 2);
    let csv = fs::read_to_string(args.out.join("cells.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    cmd_simulate(&SimulateArgs { out: dir.path().join("sim2"), ..args.clone() }).unwrap();
    assert_eq!(csv, fs::read_to_string(dir.path().join("sim2/cells.csv")).unwrap());

    let bad = SimulateArgs {
        cells: Some(vec![99]),
        out: dir.path().join("bad"),
        ..args
    };
    assert_eq!(cmd_simulate(&bad).unwrap_err().exit_code(), 2);
}
