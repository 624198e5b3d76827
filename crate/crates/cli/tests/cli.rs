//! End-to-end runs of the `litdark` binary: exit codes, written files and
//! reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use litdark::bundled;

fn litdark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_litdark"))
        .args(args)
        .env_remove(litdark::THREADS_ENV)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn bundled_path(id: &str) -> String {
    bundled::scenario_dir().join(format!("{id}.toml")).display().to_string()
}

/// Writes the smoke scenario with `edit` applied and returns its path.
fn edited_smoke(dir: &Path, edit: impl Fn(&str) -> String) -> String {
    let text = bundled::text("smoke").unwrap();
    let edited = edit(text);
    assert_ne!(edited, text, "edit had no effect");
    let p = dir.join("edited.toml");
    fs::write(&p, edited).unwrap();
    p.display().to_string()
}

fn out_dir(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn zero_paths_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = litdark(&["simulate", "--scenario", &bundled_path("fig10"), "--paths", "0", "--out", &out_dir(tmp.path(), "o")]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn unknown_key_is_a_schema_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let s = edited_smoke(tmp.path(), |t| t.replace("beta = 1e-3\n", "beta = 1e-3\ncolour = 1.0\n"));
    let out = litdark(&["solve", "--scenario", &s, "--out", &out_dir(tmp.path(), "o")]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("colour"), "{}", stderr(&out));
}

#[test]
fn missing_scenario_file_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = out_dir(tmp.path(), "nowhere.toml");
    let out = litdark(&["solve", "--scenario", &missing, "--out", &out_dir(tmp.path(), "o")]);
    assert_eq!(code(&out), 1);
}

#[test]
fn swapped_comparison_pair_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let s = edited_smoke(tmp.path(), |t| t.replace("low = 6.0, high = 0.5", "low = 0.5, high = 6.0"));
    let out = litdark(&["validate", "--scenario", &s, "--suite", "comparison", "--out", &out_dir(tmp.path(), "o")]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let ok = litdark(&["validate", "--scenario", &bundled_path("smoke"), "--suite", "comparison", "--out", &out_dir(tmp.path(), "p")]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
}

#[test]
fn forced_unstable_step_is_a_numerical_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let s = edited_smoke(tmp.path(), |t| t.replace("n_t = 8\n", "n_t = 8\nsubsteps = 1\n"));
    let out = litdark(&["solve", "--scenario", &s, "--out", &out_dir(tmp.path(), "o")]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn unknown_suite_and_figure_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = litdark(&["validate", "--scenario", &bundled_path("smoke"), "--suite", "nope", "--out", &out_dir(tmp.path(), "o")]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope"));
    let out = litdark(&["reproduce", "fig12", "--out", &out_dir(tmp.path(), "r")]);
    assert_eq!(code(&out), 2);
    let out = litdark(&["frobnicate"]);
    assert_eq!(code(&out), 2);
}

fn read_all(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p.strip_prefix(dir).unwrap().to_path_buf(), bytes)
        })
        .collect();
    v.sort();
    v
}

#[test]
fn same_seed_gives_identical_files_and_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = bundled_path("fig10");
    let run = |name: &str, seed: &str| {
        let o = out_dir(tmp.path(), name);
        let out = litdark(&["simulate", "--scenario", &scenario, "--paths", "50", "--seed", seed, "--out", &o]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        read_all(Path::new(&o))
    };
    let a = run("a", "3");
    let b = run("b", "3");
    let c = run("c", "4");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let manifest = &a.iter().find(|(p, _)| p == Path::new("manifest.json")).expect("manifest").1;
    let json: serde_json::Value = serde_json::from_slice(manifest).unwrap();
    assert_eq!(json["seed"], 3);
    assert_eq!(json["paths"], 50);
    assert!(json["scenario_sha256"].as_str().unwrap().len() == 64);
    assert!(a.iter().any(|(p, _)| p.extension().is_some_and(|e| e == "csv")));
}

#[test]
fn thread_count_from_the_environment_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = bundled_path("smoke");
    let mut seen = Vec::new();
    for threads in ["1", "3"] {
        let o = out_dir(tmp.path(), threads);
        let out = Command::new(env!("CARGO_BIN_EXE_litdark"))
            .args(["evaluate", "--scenario", &scenario, "--out", &o])
            .env(litdark::THREADS_ENV, threads)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        seen.push(read_all(Path::new(&o)));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn solve_writes_diagnostics_and_containers() {
    let tmp = tempfile::tempdir().unwrap();
    let o = out_dir(tmp.path(), "o");
    let out = litdark(&["solve", "--scenario", &bundled_path("smoke"), "--out", &o]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let diag: serde_json::Value = serde_json::from_slice(&fs::read(Path::new(&o).join("diagnostics.json")).unwrap()).unwrap();
    let residual = diag["residual"].as_f64().unwrap();
    assert!(residual.is_finite() && residual >= 0.0);
    assert!(diag["substeps"].as_u64().unwrap() >= 1);
    assert!(diag["cfl_ratio"].as_f64().unwrap() <= 1.0);
    for f in ["value.bin", "policy.bin", "manifest.json"] {
        assert!(Path::new(&o).join(f).is_file(), "{f}");
    }
}

fn csv_header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

#[test]
fn reproduce_writes_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let o = out_dir(tmp.path(), "r");
    for fig in ["fig1", "fig8", "fig11_left"] {
        let out = litdark(&["reproduce", fig, "--out", &o]);
        assert_eq!(code(&out), 0, "{fig}: {}", stderr(&out));
    }
    let root = Path::new(&o);

    let prices = root.join("fig1/prices.csv");
    assert_eq!(csv_header(&prices), ["time", "bid", "mid", "ask"]);
    for row in csv::Reader::from_path(&prices).unwrap().records() {
        let row = row.unwrap();
        let v: Vec<f64> = row.iter().map(|c| c.parse().unwrap()).collect();
        assert!(v[1] <= v[2] && v[2] <= v[3]);
    }

    let surfaces: Vec<_> = fs::read_dir(root.join("fig8"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("surface_"))
        .collect();
    let expected = bundled::load("fig8").unwrap().file.figure.slice_times.len();
    assert_eq!(surfaces.len(), expected);
    for s in &surfaces {
        assert_eq!(csv_header(s), ["s_b", "delta", "nu", "eta"]);
    }

    let strategies = fs::read_dir(root.join("fig11_left"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_str().unwrap().starts_with("strategy_"))
        .count();
    assert!(strategies > 0);
    assert!(root.join("fig11_left/manifest.json").is_file());
}
