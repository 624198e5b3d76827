//! Acceptance gates, one PASS/FAIL line per criterion. Every instance comes
//! from a bundled scenario file.

#[allow(dead_code)]
#[path = "../../core/tests/support/bellman.rs"]
mod bellman;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use litdark::bundled;
use litdark::suites::{self, run_suite, Suite, SuiteReport, FLATNESS_TOLERANCE, ORDERING_ALLOWANCE, SCALING_BAND};
use litdark::{CliError, Scenario};
use litdark_core::full::solve_full;
use litdark_core::policy::{cross_section_variation, roundtrip_analysis, Interior};
use litdark_core::{solve_backward, GridSpec};

const BELLMAN_TOL: f64 = 1e-12;
const REDUCTION_TOL: f64 = 1e-8;
const MC_PATHS: usize = 10_000;

type Outcome = Result<(bool, String), CliError>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn scenario(id: &str) -> Result<Scenario, CliError> {
    bundled::load(id)
}

fn suite(s: Suite, id: &str, paths: Option<usize>) -> Result<SuiteReport, CliError> {
    run_suite(s, &scenario(id)?, paths)
}

fn failures(r: &SuiteReport) -> String {
    r.notes.iter().filter(|n| n.starts_with("FAIL")).cloned().collect::<Vec<_>>().join("; ")
}

fn bellman_oracle() -> Outcome {
    let s = scenario("oracle_bellman")?;
    let grid = s.require_grid()?;
    let sol = solve_backward(&s.model, &s.objective, grid)?;
    let oracle = bellman::enumerate(&s.model, &s.objective, grid, grid.horizon);
    let mut worst: f64 = 0.0;
    for node in 0..grid.slice_len() {
        worst = worst
            .max((sol.value.u[node] - oracle.u[node]).abs())
            .max((sol.policy.nu[node] - oracle.nu[node]).abs())
            .max((sol.policy.eta[node] - oracle.eta[node]).abs());
    }
    let ok = sol.diagnostics.substeps == 1 && worst <= BELLMAN_TOL;
    Ok((ok, format!("largest gap {worst:.3e} over value and controls")))
}

fn cash_reduction() -> Outcome {
    let s = scenario("oracle_cash")?;
    let w = s.cash_axis()?;
    let full = solve_full(&s.model, &s.objective, s.require_grid()?, &w)?;
    let g = GridSpec {
        substeps: Some(full.substeps),
        ..s.require_grid()?.clone()
    };
    let reduced = solve_backward(&s.model, &s.objective, &g)?;
    let mut worst: f64 = 0.0;
    for k in 0..g.n_t {
        for i in 0..g.x.len() {
            for j in 0..g.s.len() {
                for l in 0..g.d.len() {
                    for (q, &wq) in w.nodes().iter().enumerate() {
                        let gap = full.at(k, i, j, l, q) - (wq + reduced.value.at(k, i, j, l));
                        worst = worst.max(gap.abs());
                    }
                }
            }
        }
    }
    Ok((worst <= REDUCTION_TOL, format!("largest gap {worst:.3e}")))
}

fn dp_consistency() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for id in ["fig5_left", "fig5_right"] {
        let r = suite(Suite::DpConsistency, id, None)?;
        ok &= r.passed;
        detail.push(format!(
            "{id} grid {:.1} MC {:.1} +/- {:.1}",
            r.metrics["grid_value"], r.metrics["mc_mean"], r.metrics["mc_std_error"]
        ));
    }
    Ok((ok, detail.join(", ")))
}

fn comparison() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for id in ["fig5_left", "fig6_left", "fig11_left"] {
        let r = suite(Suite::Comparison, id, None)?;
        ok &= r.passed;
        detail.push(format!("{id} {} of {}", r.metrics["violations"], r.metrics["nodes"]));
    }
    Ok((ok, format!("violations: {}", detail.join(", "))))
}

fn martingale_and_counts(moments: &SuiteReport) -> Outcome {
    let poisson = suite(Suite::Poisson, "fig10", Some(MC_PATHS))?;
    let z: Vec<String> = moments
        .metrics
        .iter()
        .filter(|(k, _)| k.starts_with("mean_z_h"))
        .map(|(k, v)| format!("{}={v:.2}", &k["mean_z_".len()..]))
        .collect();
    let mean_ok = z.len() == 3 && !moments.notes.iter().any(|n| n.starts_with("FAIL") && n.contains("E[S_b"));
    let p_min = poisson
        .metrics
        .iter()
        .filter(|(k, _)| k.ends_with("_p"))
        .map(|(_, v)| *v)
        .fold(1.0, f64::min);
    let ok = mean_ok && poisson.passed;
    let mut detail = format!("z {}; smallest chi-square p {p_min:.3}", z.join(" "));
    if !ok {
        detail.push_str(&format!("; {} {}", failures(moments), failures(&poisson)));
    }
    Ok((ok, detail))
}

fn moment_scaling(moments: &SuiteReport) -> Outcome {
    let ratios: Vec<(String, f64)> = moments
        .metrics
        .iter()
        .filter(|(k, _)| k.starts_with("scaling_ratio_h"))
        .map(|(k, v)| (k["scaling_ratio_".len()..].to_string(), *v))
        .collect();
    let ok = !ratios.is_empty() && ratios.iter().all(|(_, r)| (SCALING_BAND.0..=SCALING_BAND.1).contains(r));
    let detail: Vec<String> = ratios.iter().map(|(h, r)| format!("{h}: {r:.3}")).collect();
    Ok((ok, format!("ratio to linear {}", detail.join(", "))))
}

fn flatness() -> Outcome {
    let flat = suite(Suite::BertsimasLo, "fig2_left", None)?;
    let mut ok = flat.passed;
    let mut detail = vec![format!("fig2_left {:.2}%", 100.0 * flat.metrics["max_variation"])];
    for id in ["fig3_left", "fig4_left"] {
        let s = scenario(id)?;
        let sol = suites::solve(&s)?;
        let v = cross_section_variation(&sol.policy, &Interior::for_grid(&sol.policy.grid));
        ok &= v.max_variation > FLATNESS_TOLERANCE;
        detail.push(format!("{id} {:.2}%", 100.0 * v.max_variation));
    }
    Ok((ok, format!("variation {}", detail.join(", "))))
}

fn monotonicity() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for id in ["fig5_left", "fig5_right", "fig6_left", "fig6_right", "fig7_left", "fig7_right"] {
        let r = suite(Suite::ParameterOrdering, id, None)?;
        ok &= r.passed && r.metrics["violation_fraction"] <= ORDERING_ALLOWANCE;
        detail.push(format!("{id} {:.3}%", 100.0 * r.metrics["violation_fraction"]));
    }
    let t = suite(Suite::TimeOrdering, "fig8", None)?;
    ok &= t.passed;
    detail.push(format!(
        "fig8 nu {:.3}% eta {:.3}%",
        100.0 * t.metrics["nu_violation_fraction"],
        100.0 * t.metrics["eta_violation_fraction"]
    ));
    Ok((ok, format!("violations {}", detail.join(", "))))
}

fn roundtrip() -> Outcome {
    let partial = suite(Suite::Roundtrip, "fig8", None)?;
    let mut ok = partial.passed && partial.metrics["partial_posting_fraction"] > 0.0;
    let mut detail = vec![format!("fig8 partial {:.2}%", 100.0 * partial.metrics["partial_posting_fraction"])];
    for id in ["fig11_left", "fig11_right"] {
        let s = scenario(id)?;
        let r = suite(Suite::KratzSchoeneborn, id, None)?;
        let sol = suites::solve(&s)?;
        let interior = Interior::for_grid(&sol.policy.grid);
        let rt = roundtrip_analysis(&sol.policy, &interior);
        let mut off: f64 = 0.0;
        for n in interior.nodes(&sol.policy.grid) {
            let x = sol.policy.grid.x.nodes()[n.i];
            let target = s.model.control_cap.min(x);
            off = off.max((sol.policy.eta_at(n.k, n.i, n.j, n.l) - target).abs());
        }
        ok &= r.passed && rt.partial == 0 && off == 0.0;
        detail.push(format!("{id} partial {} of {}, largest |eta - min(N, x)| {off}", rt.partial, rt.nodes));
    }
    Ok((ok, detail.join(", ")))
}

fn run_binary(threads: usize, out: &Path, args: &[&str]) -> Result<(), CliError> {
    let status = Command::new(env!("CARGO_BIN_EXE_litdark"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .env_remove(litdark::THREADS_ENV)
        .output()
        .map_err(|e| CliError::Io(e.to_string()))?;
    if !status.status.success() {
        return Err(CliError::Io(format!(
            "litdark {args:?} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        )));
    }
    Ok(())
}

fn files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| CliError::Io(e.to_string()))? {
            let p = entry.map_err(|e| CliError::Io(e.to_string()))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).map_err(|e| CliError::Io(e.to_string()))?;
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), bytes));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> Outcome {
    let dir = bundled::scenario_dir();
    let fig10 = dir.join("fig10.toml");
    let smoke = dir.join("smoke.toml");
    let (fig10, smoke) = (fig10.to_str().unwrap(), smoke.to_str().unwrap());
    let runs: [&[&str]; 3] = [
        &["simulate", "--scenario", fig10, "--paths", "400", "--seed", "5"],
        &["solve", "--scenario", smoke],
        &["evaluate", "--scenario", smoke, "--seed", "9"],
    ];
    let tmp = tempfile::tempdir().map_err(|e| CliError::Io(e.to_string()))?;
    let mut compared = 0;
    for (n, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for threads in [1, 4] {
            let out = tmp.path().join(format!("run{n}_t{threads}"));
            run_binary(threads, &out, args)?;
            outputs.push(files(&out)?);
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            return Ok((false, format!("`{}` differs between 1 and 4 threads", args[0])));
        }
        compared += outputs[0].len();
    }
    Ok((true, format!("{compared} files byte-identical under 1 and 4 threads")))
}

fn main() -> ExitCode {
    let moments = suite(Suite::Moments, "fig10", Some(MC_PATHS));
    let criteria: Vec<Criterion> = vec![
        ("Bellman oracle equivalence", Box::new(bellman_oracle)),
        ("cash-reduction equivalence", Box::new(cash_reduction)),
        ("DP consistency", Box::new(dp_consistency)),
        ("discrete comparison principle", Box::new(comparison)),
        (
            "martingale mean and Poisson counts",
            Box::new(|| martingale_and_counts(moments.as_ref().map_err(Clone::clone)?)),
        ),
        (
            "moment scaling",
            Box::new(|| moment_scaling(moments.as_ref().map_err(Clone::clone)?)),
        ),
        ("book-state flatness", Box::new(flatness)),
        ("figure monotonicity", Box::new(monotonicity)),
        ("roundtrip", Box::new(roundtrip)),
        ("determinism across thread counts", Box::new(determinism)),
    ];
    let mut all = true;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        all &= ok;
        println!(
            "criterion {:>2} {name}: {} ({detail}) [{:.1}s]",
            n + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
