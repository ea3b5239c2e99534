use std::path::Path;
use std::process::Command;

use fmo_bench::output::{self, FinalFluence};
use fmo_bench::{run_benchmark, summarize, BenchmarkConfig};
use fmo_core::optim::Termination;

fn config(out: &Path, cache: &Path, optimizers: &str) -> BenchmarkConfig {
    let text = format!(
        r#"{{"cases": ["multi_ptv"], "optimizers": {optimizers}, "output_directory": {:?},
            "cache_directory": {:?}, "repetitions": 2}}"#,
        out, cache
    );
    BenchmarkConfig::from_json_str(&text).unwrap()
}

fn cost_column(path: &Path) -> Vec<u64> {
    output::read_trace_csv(path).unwrap().iter().map(|r| r.cost.to_bits()).collect()
}

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fmo-bench"))
}

#[test]
fn three_iterations_give_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = config(&out, &dir.path().join("cache"), r#"[{"id": "LBFGS", "max_iterations": 3}]"#);
    let summary = run_benchmark(&cfg).unwrap();
    let traces: Vec<_> = std::fs::read_dir(out.join("traces"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .collect();
    assert_eq!(traces.len(), 1);
    let records = output::read_trace_csv(&output::trace_path(&out, "multi_ptv", "LBFGS")).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.windows(2).all(|w| w[1].iteration == w[0].iteration + 1));
    assert_eq!(summary.rows.len(), 1);
    assert!(out.join("summary.json").is_file());
    assert!(output::goals_path(&out, "multi_ptv").is_file());
    assert!(output::dvh_path(&out, "multi_ptv", "LBFGS").is_file());
}

#[test]
fn repeated_runs_with_cached_matrix_match() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let opts = r#"[{"id": "NewtonCG", "max_iterations": 5}, {"id": "Adam", "max_iterations": 20}]"#;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_benchmark(&config(&a, &cache, opts)).unwrap();
    assert!(cache.join("multi_ptv.bin").is_file());
    run_benchmark(&config(&b, &cache, opts)).unwrap();
    for opt in ["NewtonCG", "Adam"] {
        let ca = cost_column(&output::trace_path(&a, "multi_ptv", opt));
        let cb = cost_column(&output::trace_path(&b, "multi_ptv", opt));
        assert_eq!(ca, cb, "{opt}");
    }
}

#[test]
fn summary_from_files_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let opts = r#"[{"id": "CG", "max_iterations": 15}, {"id": "Rprop", "max_iterations": 40}, "NewtonCG"]"#;
    let summary = run_benchmark(&config(&out, &dir.path().join("cache"), opts)).unwrap();
    let from_files = summarize(&output::read_traces(&out).unwrap());
    assert_eq!(from_files, summary);
    assert_eq!(output::read_summary(&out).unwrap(), summary);
}

#[test]
fn numerical_failure_is_recorded_and_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let opts = r#"[{"id": "Adam", "learning_rate": 1e200, "max_iterations": 50, "label": "Adam-huge"},
                   {"id": "GD", "max_iterations": 5}]"#;
    let summary = run_benchmark(&config(&out, &dir.path().join("cache"), opts)).unwrap();
    let bad = summary.row("multi_ptv", "Adam-huge").unwrap();
    assert_eq!(bad.termination, Termination::NumericalFailure);
    assert!(bad.final_cost.is_finite());
    let gd = summary.row("multi_ptv", "GD").unwrap();
    assert_eq!(gd.iterations, 5);
    assert!(gd.final_cost < gd.initial_cost);
}

#[test]
fn final_fluence_and_dvh_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_benchmark(&config(&out, &dir.path().join("cache"), r#"[{"id": "LBFGS", "max_iterations": 10}]"#)).unwrap();
    let fin: FinalFluence = output::read_json(&output::final_path(&out, "multi_ptv", "LBFGS")).unwrap();
    let records = output::read_trace_csv(&output::trace_path(&out, "multi_ptv", "LBFGS")).unwrap();
    assert_eq!(fin.final_cost, records.last().unwrap().cost);
    assert_eq!(fin.goal_checks.len(), 6);
    let mut r = csv::Reader::from_path(output::dvh_path(&out, "multi_ptv", "LBFGS")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["structure", "dose_gy", "volume_fraction"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    for name in ["body", "PTV_center", "PTV_superior", "PTV_inferior"] {
        let first = rows.iter().find(|row| &row[0] == name).unwrap();
        assert_eq!(&first[1], "0.0");
        assert_eq!(&first[2], "1.0");
    }

    let cli_csv = dir.path().join("cli.csv");
    let status = bench()
        .args(["dvh", "--case", "multi_ptv", "--trace"])
        .arg(output::trace_path(&out, "multi_ptv", "LBFGS"))
        .arg("--out")
        .arg(&cli_csv)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(
        std::fs::read(&cli_csv).unwrap(),
        std::fs::read(output::dvh_path(&out, "multi_ptv", "LBFGS")).unwrap()
    );
    let report = String::from_utf8_lossy(&status.stdout);
    assert!(report.contains("PTV_center min"), "{report}");
}

#[test]
fn list_optimizers() {
    let o = bench().arg("list-optimizers").output().unwrap();
    assert!(o.status.success());
    let names: Vec<String> = String::from_utf8(o.stdout).unwrap().lines().map(String::from).collect();
    assert_eq!(names.len(), 15);
    for n in ["GD", "CG", "NewtonCG", "BFGS", "LBFGS", "Adam", "RAdam", "NAdam", "Adadelta", "Adamax", "RMSprop", "Rprop"] {
        assert!(names.iter().any(|x| x == n), "{n}");
    }
}

#[test]
fn list_cases() {
    let o = bench().arg("list-cases").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for n in ["multi_ptv", "head_neck", "prostate", "icm_prostate"] {
        assert!(text.lines().any(|l| l.starts_with(n)), "{n}");
    }
}

#[test]
fn missing_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bench()
        .args(["run", "--config"])
        .arg(dir.path().join("nope.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        format!(r#"{{"cases": ["prostate"], "optimizers": [{{"id": "Adam", "beta_one": 0.8}}], "output_directory": {out:?}}}"#),
    )
    .unwrap();
    let o = bench().args(["run", "--config"]).arg(&path).output().unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("beta_one"), "{err}");
    assert!(!out.exists());
}

#[test]
fn thread_cap_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"cases": ["prostate"], "optimizers": ["Adam"]}"#).unwrap();
    let o = bench()
        .env(fmo_bench::THREADS_ENV, "0")
        .args(["run", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains(fmo_bench::THREADS_ENV));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn export_matrix_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.bin");
    let o = bench().args(["export-matrix", "--case", "multi_ptv", "--out"]).arg(&path).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = fmo_core::dose::DoseInfluenceMatrix::read_triplets(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(m.n_voxels(), 48 * 48 * 48);
    let header = std::fs::read(&path).unwrap();
    assert_eq!(header.len(), 24 + 24 * m.nnz());
}

#[test]
fn default_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.json");
    let cfg = BenchmarkConfig::from_file(&path).unwrap();
    assert_eq!(cfg.cases.len(), 4);
    assert_eq!(cfg.optimizers.len(), 15);
    assert_eq!(cfg.repetitions, 3);
}
