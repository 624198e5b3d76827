//! Named validation suites run by `litdark validate`.

use std::collections::BTreeMap;
use std::fmt;

use litdark_core::model::{Channel, ControlPair};
use litdark_core::policy::{
    check_bertsimas_lo, check_kratz_schoeneborn, compare_controls, compare_values, evaluate_policy,
    roundtrip_analysis, time_monotonicity, Control, Interior, Interpolation, PolicyFn,
};
use litdark_core::sim::{classify_martingale, estimate_moments, simulate_paths, ConstantPolicy, MartingaleClass, PathRecord};
use litdark_core::solver::{solve_backward, Solution};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Poisson};

use crate::error::CliError;
use crate::scenario::{PairSection, Scenario};

/// Flatness threshold for the book-state independence check.
pub const FLATNESS_TOLERANCE: f64 = 0.05;
/// Largest fraction of interior nodes allowed to break an ordering.
pub const ORDERING_ALLOWANCE: f64 = 0.01;
/// Significance level of the event-count goodness-of-fit test.
pub const POISSON_LEVEL: f64 = 0.01;
/// Relative band of the second-moment scaling ratio.
pub const SCALING_BAND: (f64, f64) = (0.8, 1.2);
/// Relative tolerance of Monte Carlo versus grid value.
pub const DP_RELATIVE_TOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Moments,
    Poisson,
    Comparison,
    ParameterOrdering,
    TimeOrdering,
    BertsimasLo,
    KratzSchoeneborn,
    Roundtrip,
    DpConsistency,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Moments,
        Suite::Poisson,
        Suite::Comparison,
        Suite::ParameterOrdering,
        Suite::TimeOrdering,
        Suite::BertsimasLo,
        Suite::KratzSchoeneborn,
        Suite::Roundtrip,
        Suite::DpConsistency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Moments => "moments",
            Suite::Poisson => "poisson",
            Suite::Comparison => "comparison",
            Suite::ParameterOrdering => "parameter-ordering",
            Suite::TimeOrdering => "time-ordering",
            Suite::BertsimasLo => "bertsimas-lo",
            Suite::KratzSchoeneborn => "kratz-schoeneborn",
            Suite::Roundtrip => "roundtrip",
            Suite::DpConsistency => "dp-consistency",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        Suite::ALL.into_iter().find(|s| s.name() == name).ok_or_else(|| {
            let known: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
            CliError::Usage(format!("unknown suite `{name}` (known: {})", known.join(", ")))
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub scenario: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl SuiteReport {
    fn new(suite: Suite, scenario: &Scenario) -> Self {
        Self {
            suite: suite.name().into(),
            scenario: scenario.name().into(),
            passed: true,
            metrics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    fn check(&mut self, ok: bool, note: impl Into<String>) {
        let note = note.into();
        self.notes.push(format!("{} {note}", if ok { "ok:" } else { "FAIL:" }));
        self.passed &= ok;
    }
}

pub fn run_suite(suite: Suite, scenario: &Scenario, paths: Option<usize>) -> Result<SuiteReport, CliError> {
    let mut report = SuiteReport::new(suite, scenario);
    match suite {
        Suite::Moments => moments(scenario, paths, &mut report)?,
        Suite::Poisson => poisson(scenario, paths, &mut report)?,
        Suite::Comparison => comparison(scenario, &mut report)?,
        Suite::ParameterOrdering => parameter_ordering(scenario, &mut report)?,
        Suite::TimeOrdering => time_ordering(scenario, &mut report)?,
        Suite::BertsimasLo => bertsimas_lo(scenario, &mut report)?,
        Suite::KratzSchoeneborn => kratz_schoeneborn(scenario, &mut report)?,
        Suite::Roundtrip => roundtrip(scenario, &mut report)?,
        Suite::DpConsistency => dp_consistency(scenario, paths, &mut report)?,
    }
    Ok(report)
}

/// Paths with no trading, from the scenario start.
pub fn idle_paths(scenario: &Scenario, paths: Option<usize>) -> Result<Vec<PathRecord>, CliError> {
    let mut cfg = scenario.require_sim()?.clone();
    if let Some(n) = paths {
        cfg.n_paths = n;
    }
    Ok(simulate_paths(
        &scenario.model,
        &ConstantPolicy(ControlPair::ZERO),
        scenario.start,
        &cfg,
    )?)
}

pub fn solve(scenario: &Scenario) -> Result<Solution, CliError> {
    Ok(solve_backward(&scenario.model, &scenario.objective, scenario.require_grid()?)?)
}

fn moments(scenario: &Scenario, paths: Option<usize>, report: &mut SuiteReport) -> Result<(), CliError> {
    let v = &scenario.file.validate;
    if v.moment_horizons.is_empty() && v.scaling_horizons.is_empty() {
        return Err(CliError::Usage(
            "the moments suite needs `validate.moment_horizons` or `validate.scaling_horizons`".into(),
        ));
    }
    let recs = idle_paths(scenario, paths)?;
    let s0 = scenario.start.s_b;
    let class = classify_martingale(&scenario.model, s0, scenario.start.delta);
    report.notes.push(format!("bid classified as {class:?} at the start"));
    for &h in &v.moment_horizons {
        let m = estimate_moments(&recs, h)?;
        report.metric(format!("mean_bid_h{h}"), m.mean.mean);
        report.metric(format!("mean_bid_se_h{h}"), m.mean.std_error);
        report.metric(format!("sup_dev_p2_h{h}"), m.sup_deviation[1].mean);
        if class == MartingaleClass::Martingale {
            let z = (m.mean.mean - s0).abs() / m.mean.std_error.max(f64::MIN_POSITIVE);
            report.metric(format!("mean_z_h{h}"), z);
            report.check(z <= 3.0, format!("E[S_b({h})] within 3 SE of {s0} (z = {z:.3})"));
        }
    }
    for &h in &v.scaling_horizons {
        let full = estimate_moments(&recs, h)?;
        let half = estimate_moments(&recs, 0.5 * h)?;
        let ratio = full.abs_deviation[1].mean / half.abs_deviation[1].mean / 2.0;
        report.metric(format!("scaling_ratio_h{h}"), ratio);
        report.check(
            (SCALING_BAND.0..=SCALING_BAND.1).contains(&ratio),
            format!("second moment at {h} vs {} is {ratio:.4} of linear scaling", 0.5 * h),
        );
    }
    Ok(())
}

/// Chi-square goodness of fit of event counts against Poisson(lambda T).
/// Cells are merged from the tails until every expected count is at least 5.
pub fn poisson_gof(counts: &[u64], mean: f64) -> (f64, f64, usize) {
    let n = counts.len() as f64;
    let max = counts.iter().copied().max().unwrap_or(0) as usize;
    let law = Poisson::new(mean.max(f64::MIN_POSITIVE)).expect("positive mean");
    let mut observed = vec![0.0; max + 2];
    for &c in counts {
        observed[c as usize] += 1.0;
    }
    let mut expected: Vec<f64> = (0..=max).map(|k| n * law.pmf(k as u64)).collect();
    expected.push(n * (1.0 - law.cdf(max as u64)));

    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (ok, ek) in observed.into_iter().zip(expected) {
        o += ok;
        e += ek;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if let Some(last) = cells.last_mut() {
        last.0 += o;
        last.1 += e;
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1);
    let p = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(stat)
    };
    (stat, p, dof)
}

fn poisson(scenario: &Scenario, paths: Option<usize>, report: &mut SuiteReport) -> Result<(), CliError> {
    let recs = idle_paths(scenario, paths)?;
    if recs.iter().any(|r| r.stopped_at.is_some()) {
        return Err(CliError::Usage("paths stopped before the horizon; event counts are censored".into()));
    }
    let horizon = scenario.model.horizon - scenario.start.t;
    for c in Channel::ALL {
        let spec = scenario.model.jumps(c);
        if !spec.is_active() {
            continue;
        }
        let counts: Vec<u64> = recs.iter().map(|r| r.event_counts[c.index()]).collect();
        let (stat, p, dof) = poisson_gof(&counts, spec.intensity * horizon);
        report.metric(format!("{c}_chi2"), stat);
        report.metric(format!("{c}_dof"), dof as f64);
        report.metric(format!("{c}_p"), p);
        report.check(p >= POISSON_LEVEL, format!("{c} counts fit Poisson({}) (p = {p:.4})", spec.intensity * horizon));
    }
    Ok(())
}

fn pair(scenario: &Scenario, p: &Option<PairSection>, key: &str) -> Result<(Scenario, Scenario), CliError> {
    let p = p
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("this suite needs `[validate.{key}]`")))?;
    Ok((
        scenario.with_parameter(p.parameter, p.low)?,
        scenario.with_parameter(p.parameter, p.high)?,
    ))
}

fn note_nodes(report: &mut SuiteReport, g: &litdark_core::grid::GridSpec, nodes: &[litdark_core::policy::NodeRef], what: &str) {
    for n in nodes.iter().take(5) {
        report.notes.push(format!(
            "{what} at t = {}, x = {}, s_b = {}, delta = {}",
            g.time(n.k),
            g.x.nodes()[n.i],
            g.s.nodes()[n.j],
            g.d.nodes()[n.l]
        ));
    }
}

fn comparison(scenario: &Scenario, report: &mut SuiteReport) -> Result<(), CliError> {
    let (low, high) = pair(scenario, &scenario.file.validate.comparison, "comparison")?;
    let a = solve(&low)?;
    let b = solve(&high)?;
    let order = compare_values(&a.value, &b.value)?;
    report.metric("nodes", order.nodes as f64);
    report.metric("violations", order.violations as f64);
    report.check(order.violations == 0, format!("{} of {} nodes break the value ordering", order.violations, order.nodes));
    Ok(())
}

fn parameter_ordering(scenario: &Scenario, report: &mut SuiteReport) -> Result<(), CliError> {
    let (low, high) = pair(scenario, &scenario.file.validate.monotone, "monotone")?;
    let a = solve(&low)?;
    let b = solve(&high)?;
    let interior = Interior::for_grid(&a.policy.grid);
    let order = compare_controls(&a.policy, &b.policy, Control::Nu, &interior)?;
    note_nodes(report, &a.policy.grid, &order.violating, "ordering broken");
    report.metric("nodes", order.nodes as f64);
    report.metric("violation_fraction", order.fraction());
    report.check(
        order.fraction() <= ORDERING_ALLOWANCE,
        format!("lit rate ordered at all but {:.3}% of interior nodes", 100.0 * order.fraction()),
    );
    Ok(())
}

fn time_ordering(scenario: &Scenario, report: &mut SuiteReport) -> Result<(), CliError> {
    let sol = solve(scenario)?;
    let interior = Interior::for_grid(&sol.policy.grid);
    for (control, name) in [(Control::Nu, "nu"), (Control::Eta, "eta")] {
        let order = time_monotonicity(&sol.policy, control, &interior);
        note_nodes(report, &sol.policy.grid, &order.violating, &format!("{name} decreases in t"));
        report.metric(format!("{name}_nodes"), order.nodes as f64);
        report.metric(format!("{name}_violation_fraction"), order.fraction());
        report.check(
            order.fraction() <= ORDERING_ALLOWANCE,
            format!("{name} non-decreasing in t at all but {:.3}% of interior nodes", 100.0 * order.fraction()),
        );
    }
    Ok(())
}

fn bertsimas_lo(scenario: &Scenario, report: &mut SuiteReport) -> Result<(), CliError> {
    let sol = solve(scenario)?;
    let interior = Interior::for_grid(&sol.policy.grid);
    let r = check_bertsimas_lo(&sol.policy, &scenario.model, &scenario.objective, &interior, FLATNESS_TOLERANCE)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    report.metric("max_variation", r.variation.max_variation);
    report.metric("profile_deviation", r.profile_deviation);
    report.check(r.flat, format!("lit rate varies by {:.4} across book states", r.variation.max_variation));
    Ok(())
}

fn kratz_schoeneborn(scenario: &Scenario, report: &mut SuiteReport) -> Result<(), CliError> {
    let sol = solve(scenario)?;
    let interior = Interior::for_grid(&sol.policy.grid);
    let r = check_kratz_schoeneborn(&sol.policy, &scenario.model, &interior).map_err(|e| CliError::Usage(e.to_string()))?;
    report.metric("partial_posting_fraction", r.roundtrip.fraction());
    report.metric("nu_decreasing_in_x_fraction", r.nu_monotone_in_x.fraction());
    report.metric("max_nu", r.max_nu);
    report.check(r.full_posting, format!("{} of {} nodes post less than min(N, x)", r.roundtrip.partial, r.roundtrip.nodes));
    Ok(())
}

fn roundtrip(scenario: &Scenario, report: &mut SuiteReport) -> Result<(), CliError> {
    let sol = solve(scenario)?;
    let r = roundtrip_analysis(&sol.policy, &Interior::for_grid(&sol.policy.grid));
    report.metric("partial_posting_fraction", r.fraction());
    report.metric("nodes", r.nodes as f64);
    let g = &sol.policy.grid;
    for n in r.examples.iter().take(5) {
        report.notes.push(format!(
            "partial posting at t = {}, x = {}, s_b = {}, delta = {}: eta = {}",
            g.time(n.k),
            g.x.nodes()[n.i],
            g.s.nodes()[n.j],
            g.d.nodes()[n.l],
            sol.policy.eta_at(n.k, n.i, n.j, n.l)
        ));
    }
    report.check(r.partial > 0, format!("partial posting at {:.3}% of interior nodes", 100.0 * r.fraction()));
    Ok(())
}

/// Grid value at the start state and the Monte Carlo value of the extracted
/// policy.
pub fn dp_values(scenario: &Scenario, paths: Option<usize>) -> Result<(f64, litdark_core::sim::Estimate), CliError> {
    let sol = solve(scenario)?;
    let st = scenario.start;
    let k = sol.value.grid.slice_at(st.t);
    let grid_value = st.w + sol.value.interpolate(k, st.x, st.s_b, st.delta);
    let mut cfg = scenario.require_sim()?.clone();
    if let Some(n) = paths {
        cfg.n_paths = n;
    }
    let policy = PolicyFn::new(sol.policy, Interpolation::Multilinear);
    let mc = evaluate_policy(&scenario.model, &scenario.objective, &policy, st, &cfg)?;
    Ok((grid_value, mc))
}

fn dp_consistency(scenario: &Scenario, paths: Option<usize>, report: &mut SuiteReport) -> Result<(), CliError> {
    let (grid_value, mc) = dp_values(scenario, paths)?;
    let gap = (mc.mean - grid_value).abs();
    let allowed = (DP_RELATIVE_TOL * grid_value.abs()).max(3.0 * mc.std_error);
    report.metric("grid_value", grid_value);
    report.metric("mc_mean", mc.mean);
    report.metric("mc_std_error", mc.std_error);
    report.metric("relative_gap", gap / grid_value.abs());
    report.check(gap <= allowed, format!("|MC - grid| = {gap:.3} vs allowed {allowed:.3}"));
    Ok(())
}
