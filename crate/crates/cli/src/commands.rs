//! Subcommand implementations. Each writes into an output directory and
//! finishes with a manifest listing every file it produced.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use litdark_core::policy::{Interpolation, PolicyFn};
use litdark_core::sim::{simulate_paths, ForcedFill, PathRecord};
use litdark_core::solver::Solution;
use serde::Serialize;

use crate::bundled;
use crate::error::CliError;
use crate::output::{surface_rows, write_paths, write_table, Container, Manifest, SliceAxis};
use crate::scenario::{FigureKind, Scenario};
use crate::suites::{self, Suite, SuiteReport};

fn write_json<T: Serialize>(file: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(file)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn prepare(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))
}

/// Simulates paths with no trading and writes them as CSV.
pub fn simulate(scenario: &Scenario, out: &Path) -> Result<Manifest, CliError> {
    prepare(out)?;
    let mut manifest = Manifest::new("simulate", scenario);
    let paths = suites::idle_paths(scenario, None)?;
    for f in write_paths(out, "paths", &paths, scenario.file.outputs.long_format)? {
        manifest.record(out, &f);
    }
    manifest.write(out)?;
    Ok(manifest)
}

#[derive(Debug, Serialize)]
struct DiagnosticsFile {
    substeps: usize,
    dt: f64,
    max_dt: f64,
    cfl_ratio: f64,
    clamp_counts: [u64; 4],
    residual: f64,
    value_at_start: f64,
}

fn write_solution(scenario: &Scenario, sol: &Solution, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    if scenario.file.outputs.container {
        for (name, c) in [
            ("value.bin", Container::from_value(&sol.value)),
            ("policy.bin", Container::from_policy(&sol.policy)),
        ] {
            let f = out.join(name);
            c.write(&f)?;
            manifest.record(out, &f);
        }
    }
    let d = &sol.diagnostics;
    let st = scenario.start;
    let k = sol.value.grid.slice_at(st.t);
    let diag = DiagnosticsFile {
        substeps: d.substeps,
        dt: d.dt,
        max_dt: d.max_dt,
        cfl_ratio: d.cfl_ratio,
        clamp_counts: d.clamp_counts,
        residual: d.residual,
        value_at_start: st.w + sol.value.interpolate(k, st.x, st.s_b, st.delta),
    };
    let f = out.join("diagnostics.json");
    write_json(&f, &diag)?;
    manifest.record(out, &f);
    Ok(())
}

/// Solves the control problem and writes containers and diagnostics.
pub fn solve(scenario: &Scenario, out: &Path) -> Result<(Manifest, Solution), CliError> {
    prepare(out)?;
    let mut manifest = Manifest::new("solve", scenario);
    let sol = suites::solve(scenario)?;
    write_solution(scenario, &sol, out, &mut manifest)?;
    manifest.write(out)?;
    Ok((manifest, sol))
}

#[derive(Debug, Serialize)]
pub struct Evaluation {
    pub grid_value: f64,
    pub mc_mean: f64,
    pub mc_std_error: f64,
    pub paths: usize,
}

/// Monte Carlo value of the solved policy from the scenario start.
pub fn evaluate(scenario: &Scenario, out: &Path) -> Result<(Manifest, Evaluation), CliError> {
    prepare(out)?;
    let mut manifest = Manifest::new("evaluate", scenario);
    let (grid_value, mc) = suites::dp_values(scenario, None)?;
    let eval = Evaluation {
        grid_value,
        mc_mean: mc.mean,
        mc_std_error: mc.std_error,
        paths: scenario.require_sim()?.n_paths,
    };
    let f = out.join("evaluation.json");
    write_json(&f, &eval)?;
    manifest.record(out, &f);
    manifest.write(out)?;
    Ok((manifest, eval))
}

/// Runs one suite and writes its report. A failed suite is returned as a
/// report with `passed == false`; the caller decides the exit code.
pub fn validate(scenario: &Scenario, suite: Suite, out: &Path) -> Result<(Manifest, SuiteReport), CliError> {
    prepare(out)?;
    let mut manifest = Manifest::new(&format!("validate --suite {suite}"), scenario);
    let report = suites::run_suite(suite, scenario, None)?;
    let f = out.join(format!("validate_{suite}.json"));
    write_json(&f, &report)?;
    manifest.record(out, &f);
    manifest.write(out)?;
    Ok((manifest, report))
}

/// Writes the plot data of a figure. Each panel goes to its own
/// subdirectory named after the bundled scenario.
pub fn reproduce(figure: &str, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut dirs = Vec::new();
    for id in bundled::figure_panels(figure)? {
        let scenario = bundled::load(id)?;
        let dir = out.join(id);
        reproduce_scenario(&scenario, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Writes the plot data described by the `[figure]` table of a scenario.
pub fn reproduce_scenario(scenario: &Scenario, out: &Path) -> Result<Manifest, CliError> {
    prepare(out)?;
    let kind = scenario
        .file
        .figure
        .kind
        .ok_or_else(|| CliError::Schema("missing `figure.kind`".into()))?;
    let mut manifest = Manifest::new("reproduce", scenario);
    match kind {
        FigureKind::PriceSeries => price_series(scenario, out, &mut manifest)?,
        FigureKind::LitSurfaces => surfaces(scenario, out, &mut manifest, false)?,
        FigureKind::LitDarkSurfaces => surfaces(scenario, out, &mut manifest, true)?,
        FigureKind::InventoryStrategy => inventory_strategy(scenario, out, &mut manifest)?,
        FigureKind::InventoryPaths => inventory_paths(scenario, out, &mut manifest)?,
    }
    manifest.write(out)?;
    Ok(manifest)
}

fn price_series(scenario: &Scenario, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let paths = suites::idle_paths(scenario, Some(1))?;
    let rows: Vec<Vec<f64>> = paths[0]
        .times
        .iter()
        .zip(&paths[0].states)
        .map(|(t, s)| vec![*t, s.s_b, s.mid(), s.ask()])
        .collect();
    let f = out.join("prices.csv");
    write_table(&f, &["time", "bid", "mid", "ask"], &rows)?;
    manifest.record(out, &f);
    Ok(())
}

fn slices(scenario: &Scenario) -> Result<Vec<usize>, CliError> {
    let g = scenario.require_grid()?;
    let times = &scenario.file.figure.slice_times;
    if times.is_empty() {
        return Err(CliError::Schema("`figure.slice_times` is empty".into()));
    }
    Ok(times.iter().map(|&t| g.slice_at(t)).collect())
}

fn time_tag(t: f64) -> String {
    format!("t{t:05.1}").replace('.', "_")
}

fn surfaces(scenario: &Scenario, out: &Path, manifest: &mut Manifest, dark: bool) -> Result<(), CliError> {
    let sol = suites::solve(scenario)?;
    let g = &sol.policy.grid;
    let i = g.x.nearest(scenario.file.figure.inventory.unwrap_or(scenario.start.x));
    for k in slices(scenario)? {
        let arrays: Vec<&[f64]> = if dark {
            vec![&sol.policy.nu, &sol.policy.eta]
        } else {
            vec![&sol.policy.nu]
        };
        let (_, rows) = surface_rows(g, [SliceAxis::S, SliceAxis::D], [(SliceAxis::T, k), (SliceAxis::X, i)], &arrays);
        let header: &[&str] = if dark { &["s_b", "delta", "nu", "eta"] } else { &["s_b", "delta", "nu"] };
        let f = out.join(format!("surface_{}.csv", time_tag(g.time(k))));
        write_table(&f, header, &rows)?;
        manifest.record(out, &f);
    }
    Ok(())
}

fn inventory_strategy(scenario: &Scenario, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let sol = suites::solve(scenario)?;
    let g = &sol.policy.grid;
    let j = g.s.nearest(scenario.start.s_b);
    let l = g.d.nearest(scenario.start.delta);
    for k in slices(scenario)? {
        let rows: Vec<Vec<f64>> = (0..g.x.len())
            .map(|i| {
                vec![
                    g.x.nodes()[i],
                    sol.policy.nu_at(k, i, j, l),
                    sol.policy.eta_at(k, i, j, l),
                    sol.value.at(k, i, j, l),
                ]
            })
            .collect();
        let f = out.join(format!("strategy_{}.csv", time_tag(g.time(k))));
        write_table(&f, &["x", "nu", "eta", "u"], &rows)?;
        manifest.record(out, &f);
    }
    if !scenario.file.figure.fill_times.is_empty() {
        fill_paths(scenario, sol, out, manifest)?;
    }
    Ok(())
}

fn inventory_rows(rec: &PathRecord) -> Vec<Vec<f64>> {
    rec.times
        .iter()
        .zip(&rec.states)
        .zip(&rec.controls)
        .map(|((t, s), c)| vec![*t, s.x, c.nu, c.eta])
        .collect()
}

fn inventory_paths(scenario: &Scenario, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let sol = suites::solve(scenario)?;
    fill_paths(scenario, sol, out, manifest)?;
    price_series(scenario, out, manifest)
}

/// Inventory paths of the solved policy with no fill, full fills and
/// partial fills at the figure's fill times.
fn fill_paths(scenario: &Scenario, sol: Solution, out: &Path, manifest: &mut Manifest) -> Result<(), CliError> {
    let policy = PolicyFn::new(sol.policy, Interpolation::Multilinear);
    let base = scenario.require_sim()?.clone();
    let fig = &scenario.file.figure;
    let mut variants: Vec<(&str, Vec<ForcedFill>)> = vec![("no_fill", Vec::new())];
    let full = fig.fill_times.iter().map(|&time| ForcedFill { time, fraction: 1.0 }).collect();
    variants.push(("full_fill", full));
    if let Some(fraction) = fig.partial_fraction {
        let partial = fig.fill_times.iter().map(|&time| ForcedFill { time, fraction }).collect();
        variants.push(("partial_fill", partial));
    }
    for (name, fills) in variants {
        let mut cfg = base.clone();
        cfg.n_paths = 1;
        cfg.forced_fills = fills;
        let paths = simulate_paths(&scenario.model, &policy, scenario.start, &cfg)?;
        let f = out.join(format!("inventory_{name}.csv"));
        write_table(&f, &["time", "x", "nu", "eta"], &inventory_rows(&paths[0]))?;
        manifest.record(out, &f);
    }
    Ok(())
}
