use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use envdiag::harness::{generate_dataset, ScenarioModel, ScenarioSpec, Violation};
use envdiag::rng::stream;
use envdiag::PlotKind;
use envdiag_cli::{run_diagnose, run_power_study, PowerStudyConfig, RunConfig};

fn envdiag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_envdiag")).args(args).output().unwrap()
}

/// Writes one simulated scenario dataset as `x,y[,group]`.
fn scenario_csv(dir: &Path, model: ScenarioModel, violation: Violation, n: usize, seed: u64) -> PathBuf {
    let s = ScenarioSpec::new(model, violation, n);
    let d = generate_dataset(&s, &mut stream(seed, &[])).unwrap();
    let grouped = d.group().is_some();
    let mut text = String::from(if grouped { "x,y,group\n" } else { "x,y\n" });
    for i in 0..d.n() {
        text.push_str(&format!("{},{}", d.x()[(i, 1)], d.y()[i]));
        if let Some(g) = d.group() {
            text.push_str(&format!(",s{}", g[i]));
        }
        text.push('\n');
    }
    let path = dir.join(format!("{model}-{violation}-{seed}.csv"));
    std::fs::write(&path, text).unwrap();
    path
}

fn read_envelope_csv(path: &Path) -> Vec<[f64; 5]> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["grid", "observed", "center", "lower", "upper"]
    );
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            std::array::from_fn(|j| rec[j].parse().unwrap())
        })
        .collect()
}

fn config(data: PathBuf, out: PathBuf) -> RunConfig {
    RunConfig {
        data_path: Some(data),
        b: 99,
        seed: 5,
        output_dir: out,
        ..RunConfig::default()
    }
}

#[test]
fn default_plots_write_consistent_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = scenario_csv(tmp.path(), ScenarioModel::ALm, Violation::NullOk, 40, 1);
    let artifacts = run_diagnose(&config(data, tmp.path().join("out"))).unwrap();
    let kinds: Vec<PlotKind> = artifacts.iter().map(|a| a.kind).collect();
    assert_eq!(kinds, [PlotKind::ResVsFits, PlotKind::Qq]);
    for a in &artifacts {
        let rows = read_envelope_csv(&a.csv_path);
        let expected = if a.kind == PlotKind::Qq { 40 } else { 64 };
        assert_eq!(rows.len(), expected);
        for [_, _, center, lower, upper] in rows {
            assert!(lower <= center && center <= upper);
        }
        let svg = std::fs::read_to_string(&a.svg_path).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let bands = doc
            .descendants()
            .filter(|n| n.has_tag_name("path") && n.attribute("class") == Some("band"))
            .count();
        assert_eq!(bands, 1);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 5);
    assert_eq!(manifest["plots"].as_array().unwrap().len(), 2);
}

#[test]
fn scale_location_alone_gives_one_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = scenario_csv(tmp.path(), ScenarioModel::BGlm, Violation::NullOk, 40, 2);
    let mut c = config(data, tmp.path().join("out"));
    c.model = envdiag::ModelKind::Poisson;
    c.plots = vec!["scale_location".parse().unwrap()];
    let artifacts = run_diagnose(&c).unwrap();
    assert_eq!(artifacts.len(), 1);
    assert_eq!(artifacts[0].kind, PlotKind::ScaleLocation);
    assert!(artifacts[0].svg_path.ends_with("scale-location.svg"));
}

#[test]
fn overdispersed_counts_leave_the_qq_band_at_the_top() {
    let tmp = tempfile::tempdir().unwrap();
    let data = scenario_csv(tmp.path(), ScenarioModel::BGlm, Violation::Mixture, 80, 3);
    let mut c = config(data, tmp.path().join("out"));
    c.model = envdiag::ModelKind::Poisson;
    c.plots = vec![PlotKind::Qq];
    let artifacts = run_diagnose(&c).unwrap();
    assert!(artifacts[0].reject);
    let rows = read_envelope_csv(&artifacts[0].csv_path);
    let above = rows[rows.len() - 8..].iter().filter(|r| r[1] > r[4]).count();
    assert!(above > 0, "no upper-tail residual above the band");
}

#[test]
fn glmm_runs_from_a_group_column() {
    let tmp = tempfile::tempdir().unwrap();
    let data = scenario_csv(tmp.path(), ScenarioModel::CGlmm, Violation::NullOk, 40, 4);
    let out = tmp.path().join("out");
    let o = envdiag(&[
        "diagnose",
        "--data",
        data.to_str().unwrap(),
        "--model",
        "poisson-ri",
        "--group",
        "group",
        "--B",
        "39",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("qq.csv").exists() && out.join("res-vs-fits.svg").exists());

    let o = envdiag(&["fit", "--data", data.to_str().unwrap(), "--model", "poisson-ri", "--group", "group"]);
    let fit: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(fit["n_groups"], 5);
    assert!(fit["omega"].as_f64().is_some());
}

#[test]
fn rejection_still_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = scenario_csv(tmp.path(), ScenarioModel::ALm, Violation::Quadratic, 80, 5);
    let out = tmp.path().join("out");
    let o = envdiag(&["diagnose", "--data", data.to_str().unwrap(), "--plots", "res-vs-fits", "--B", "99", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("reject=true"));
}

#[test]
fn failures_exit_nonzero_and_leave_nothing_behind() {
    let tmp = tempfile::tempdir().unwrap();
    let data = scenario_csv(tmp.path(), ScenarioModel::ALm, Violation::NullOk, 40, 6);

    let out = tmp.path().join("missing-column");
    let o = envdiag(&["diagnose", "--data", data.to_str().unwrap(), "--response", "z", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("\"z\""));
    assert!(!out.exists());

    // the second plot cannot be written, so the first must be removed again
    let out = tmp.path().join("blocked");
    std::fs::create_dir_all(out.join("qq.svg")).unwrap();
    let o = envdiag(&["diagnose", "--data", data.to_str().unwrap(), "--B", "19", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let left: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left, ["qq.svg"]);

    let o = envdiag(&["diagnose", "--data", data.to_str().unwrap(), "--B", "5"]);
    assert!(!o.status.success());
}

#[test]
fn non_numeric_cell_is_reported_with_coordinates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bad.csv");
    std::fs::write(&data, "x,y\n0,1\n1,NA\n2,3\n").unwrap();
    let o = envdiag(&["fit", "--data", data.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 2") && err.contains("\"NA\""), "{err}");
}

#[test]
fn invalid_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_envdiag"))
        .args(["fit", "--data", "nowhere.csv"])
        .env("ENVDIAG_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

fn study(json: &str, out: &Path) -> PowerStudyConfig {
    let mut c: PowerStudyConfig = serde_json::from_str(json).unwrap();
    c.output_dir = out.to_path_buf();
    c
}

#[test]
fn single_null_cell_power_study() {
    let tmp = tempfile::tempdir().unwrap();
    let c = study(
        r#"{"scenarios": [{"model": "a-lm", "violation": "null-ok", "n": 40, "n_datasets": 50, "B": 49, "seed": 8}]}"#,
        tmp.path(),
    );
    let (table, files) = run_power_study(&c).unwrap();
    assert_eq!(table.rows.len(), 5);
    assert!(table.rows.iter().all(|r| r.rate <= 0.2));
    assert_eq!(files.len(), 2);
    let csv = std::fs::read_to_string(tmp.path().join("power.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenarios"][0]["spec"]["seed"], 8);
}

#[test]
fn grid_of_two_scenarios_gives_ten_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("study.json");
    std::fs::write(
        &config,
        r#"{"grid": {"models": ["a-lm"], "violations": ["null-ok", "mixture"], "n": [20]},
            "n_datasets": 10, "B": 19, "seed": 1, "output_dir": "power"}"#,
    )
    .unwrap();
    let o = envdiag(&["power-study", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("power/power.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}
