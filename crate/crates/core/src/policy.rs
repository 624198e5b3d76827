//! Solved policies as feedback controls, their Monte Carlo evaluation, and
//! structural checks on policy surfaces.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{interpolate_slice, GridSpec, PolicyGrid, ValueGrid};
use crate::model::{Channel, ControlPair, MarkDistribution, MarketState, ModelSpec, ObjectiveSpec};
use crate::sim::{classify_martingale, simulate_paths, Estimate, MartingaleClass, PathRecord, Policy, SimConfig};

/// Relative slack below `min(N, x)` under which a posting counts as partial.
const FULL_POSTING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Nearest,
    #[default]
    Multilinear,
}

/// A solved policy usable as a feedback control. The time slice is the one
/// whose interval contains `t`; space is interpolated within it and the
/// result is projected onto the feasible box.
#[derive(Debug, Clone)]
pub struct PolicyFn {
    pub policy: PolicyGrid,
    pub mode: Interpolation,
}

impl PolicyFn {
    pub fn new(policy: PolicyGrid, mode: Interpolation) -> Self {
        Self { policy, mode }
    }

    pub fn evaluate(&self, t: f64, state: &MarketState) -> ControlPair {
        let g = &self.policy.grid;
        let k = g.slice_at(t);
        let n = g.slice_len();
        let nu = &self.policy.nu[k * n..(k + 1) * n];
        let eta = &self.policy.eta[k * n..(k + 1) * n];
        let raw = match self.mode {
            Interpolation::Nearest => {
                let node = g.spatial_index(g.x.nearest(state.x), g.s.nearest(state.s_b), g.d.nearest(state.delta));
                ControlPair::new(nu[node], eta[node])
            }
            Interpolation::Multilinear => ControlPair::new(
                interpolate_slice(g, nu, state.x, state.s_b, state.delta),
                interpolate_slice(g, eta, state.x, state.s_b, state.delta),
            ),
        };
        raw.capped(self.policy.control_cap, state.x)
    }
}

impl Policy for PolicyFn {
    fn control(&self, t: f64, state: &MarketState) -> ControlPair {
        self.evaluate(t, state)
    }
}

/// Realised objective `W + (S_b - alpha X) X - gamma int X^2` of one path.
pub fn path_objective(obj: &ObjectiveSpec, rec: &PathRecord) -> f64 {
    obj.terminal_reward(rec.final_state()) - obj.gamma * rec.inventory_sq_integral
}

/// Monte Carlo estimate of the objective under `policy` from `start`.
pub fn evaluate_policy(
    model: &ModelSpec,
    obj: &ObjectiveSpec,
    policy: &dyn Policy,
    start: MarketState,
    config: &SimConfig,
) -> Result<Estimate> {
    obj.validate()?;
    if obj.r != 0.0 {
        return Err(Error::Precondition(format!(
            "Monte Carlo evaluation covers undiscounted objectives only (r = {})",
            obj.r
        )));
    }
    let paths = simulate_paths(model, policy, start, config)?;
    let samples: Vec<f64> = paths.iter().map(|p| path_objective(obj, p)).collect();
    Estimate::from_samples(&samples)
}

/// Grid node `(t index, x index, s_b index, delta index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub k: usize,
    pub i: usize,
    pub j: usize,
    pub l: usize,
}

/// Nodes on which the structural checks run: every stored slice before `T`,
/// every inventory node with `x > 0`, and `(s_b, delta)` nodes at least the
/// given number of nodes away from the faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interior {
    pub s_margin: usize,
    pub d_margin: usize,
}

impl Interior {
    /// One node of margin on each non-pinned price axis.
    pub fn for_grid(grid: &GridSpec) -> Self {
        Self {
            s_margin: usize::from(!grid.s.is_pinned()),
            d_margin: usize::from(!grid.d.is_pinned()),
        }
    }

    fn range(n: usize, margin: usize) -> core::ops::Range<usize> {
        if n <= 2 * margin {
            0..0
        } else {
            margin..n - margin
        }
    }

    pub fn nodes(&self, grid: &GridSpec) -> Vec<NodeRef> {
        let mut out = Vec::new();
        for k in 0..grid.n_t - 1 {
            for i in 1..grid.x.len() {
                for j in Self::range(grid.s.len(), self.s_margin) {
                    for l in Self::range(grid.d.len(), self.d_margin) {
                        out.push(NodeRef { k, i, j, l });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Nu,
    Eta,
}

impl Control {
    fn read(self, p: &PolicyGrid, n: NodeRef) -> f64 {
        match self {
            Control::Nu => p.nu_at(n.k, n.i, n.j, n.l),
            Control::Eta => p.eta_at(n.k, n.i, n.j, n.l),
        }
    }
}

/// Outcome of a node-wise ordering check.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    pub nodes: usize,
    pub violations: usize,
    pub violating: Vec<NodeRef>,
}

impl OrderingReport {
    pub fn fraction(&self) -> f64 {
        if self.nodes == 0 {
            0.0
        } else {
            self.violations as f64 / self.nodes as f64
        }
    }

    fn push(&mut self, node: NodeRef, violated: bool) {
        self.nodes += 1;
        if violated {
            self.violations += 1;
            self.violating.push(node);
        }
    }
}

fn empty_report() -> OrderingReport {
    OrderingReport {
        nodes: 0,
        violations: 0,
        violating: Vec::new(),
    }
}

/// Control differences below this fraction of `N` do not count as ordering
/// violations.
pub const CONTROL_ORDER_TOLERANCE: f64 = 1e-3;

fn ordering_tol(p: &PolicyGrid) -> f64 {
    CONTROL_ORDER_TOLERANCE * p.control_cap.max(1.0)
}

/// Checks `low <= high` for one control at every interior node, up to
/// `CONTROL_ORDER_TOLERANCE * N`.
pub fn compare_controls(low: &PolicyGrid, high: &PolicyGrid, control: Control, interior: &Interior) -> Result<OrderingReport> {
    if !low.grid.same_layout(&high.grid) {
        return Err(Error::GridMismatch("policies live on different grids"));
    }
    let tol = ordering_tol(low).max(ordering_tol(high));
    let mut report = empty_report();
    for n in interior.nodes(&low.grid) {
        report.push(n, control.read(low, n) > control.read(high, n) + tol);
    }
    Ok(report)
}

/// Checks that a control is non-decreasing in time at fixed `(x, s_b, delta)`
/// between consecutive interior slices.
pub fn time_monotonicity(policy: &PolicyGrid, control: Control, interior: &Interior) -> OrderingReport {
    let tol = ordering_tol(policy);
    let mut report = empty_report();
    for n in interior.nodes(&policy.grid) {
        if n.k + 2 >= policy.grid.n_t {
            continue;
        }
        let later = NodeRef { k: n.k + 1, ..n };
        report.push(n, control.read(policy, n) > control.read(policy, later) + tol);
    }
    report
}

/// Checks `low <= high` for two value grids at every node of every slice.
pub fn compare_values(low: &ValueGrid, high: &ValueGrid) -> Result<OrderingReport> {
    if !low.grid.same_layout(&high.grid) {
        return Err(Error::GridMismatch("values live on different grids"));
    }
    let g = &low.grid;
    let mut report = empty_report();
    for k in 0..g.n_t {
        for node in 0..g.slice_len() {
            let (i, j, l) = g.spatial_coords(node);
            let idx = g.index(k, i, j, l);
            report.push(NodeRef { k, i, j, l }, low.u[idx] > high.u[idx]);
        }
    }
    Ok(report)
}

/// Largest relative spread `(max - min) / |mean|` of the lit rate across the
/// interior `(s_b, delta)` nodes of each `(t, x)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationReport {
    pub max_variation: f64,
    pub worst: Option<(usize, usize)>,
    pub slices: usize,
}

pub fn cross_section_variation(policy: &PolicyGrid, interior: &Interior) -> VariationReport {
    let g = &policy.grid;
    let mut report = VariationReport {
        max_variation: 0.0,
        worst: None,
        slices: 0,
    };
    let nodes = interior.nodes(g);
    for chunk in nodes.chunk_by(|a, b| a.k == b.k && a.i == b.i) {
        let values: Vec<f64> = chunk.iter().map(|&n| Control::Nu.read(policy, n)).collect();
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let variation = if hi == lo {
            0.0
        } else if mean == 0.0 {
            f64::INFINITY
        } else {
            (hi - lo) / mean.abs()
        };
        report.slices += 1;
        if variation > report.max_variation || report.worst.is_none() {
            report.max_variation = report.max_variation.max(variation);
            report.worst = Some((chunk[0].k, chunk[0].i));
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BertsimasLoReport {
    pub variation: VariationReport,
    /// Flatness threshold on [`VariationReport::max_variation`].
    pub tolerance: f64,
    pub flat: bool,
    /// Largest relative gap between the cross-sectional mean of the lit rate
    /// and `x / (T - t + 1)`; informational.
    pub profile_deviation: f64,
}

/// Verifies the policy of a risk-neutral seller facing a martingale bid
/// without permanent impact does not depend on the book state.
pub fn check_bertsimas_lo(
    policy: &PolicyGrid,
    model: &ModelSpec,
    obj: &ObjectiveSpec,
    interior: &Interior,
    tolerance: f64,
) -> Result<BertsimasLoReport> {
    if obj.gamma != 0.0 {
        return Err(Error::Precondition(format!("needs a risk-neutral objective, got gamma = {}", obj.gamma)));
    }
    if model.mu_b != 0.0 || model.mu_delta != 0.0 {
        return Err(Error::Precondition("needs zero permanent impact".into()));
    }
    require_martingale(model, &policy.grid)?;

    let g = &policy.grid;
    let variation = cross_section_variation(policy, interior);
    let mut profile_deviation: f64 = 0.0;
    let nodes = interior.nodes(g);
    for chunk in nodes.chunk_by(|a, b| a.k == b.k && a.i == b.i) {
        let mean = chunk.iter().map(|&n| Control::Nu.read(policy, n)).sum::<f64>() / chunk.len() as f64;
        let n = chunk[0];
        let target = g.x.nodes()[n.i] / (g.horizon - g.time(n.k) + 1.0);
        profile_deviation = profile_deviation.max((mean - target).abs() / target);
    }
    Ok(BertsimasLoReport {
        variation,
        tolerance,
        flat: variation.max_variation <= tolerance,
        profile_deviation,
    })
}

fn require_martingale(model: &ModelSpec, grid: &GridSpec) -> Result<()> {
    for &s in grid.s.nodes() {
        for &d in grid.d.nodes() {
            let class = classify_martingale(model, s, d);
            if class != MartingaleClass::Martingale {
                return Err(Error::Precondition(format!(
                    "bid is not a martingale at s_b = {s}, delta = {d} ({class:?})"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundtripReport {
    pub nodes: usize,
    /// Interior nodes where `eta* < min(N, x)`.
    pub partial: usize,
    pub examples: Vec<NodeRef>,
}

impl RoundtripReport {
    pub fn fraction(&self) -> f64 {
        if self.nodes == 0 {
            0.0
        } else {
            self.partial as f64 / self.nodes as f64
        }
    }
}

/// Finds interior nodes where posting the whole feasible quantity in the
/// dark pool is not optimal.
pub fn roundtrip_analysis(policy: &PolicyGrid, interior: &Interior) -> RoundtripReport {
    let g = &policy.grid;
    let mut report = RoundtripReport {
        nodes: 0,
        partial: 0,
        examples: Vec::new(),
    };
    for n in interior.nodes(g) {
        let cap = policy.control_cap.min(g.x.nodes()[n.i]);
        report.nodes += 1;
        if Control::Eta.read(policy, n) < cap * (1.0 - FULL_POSTING_TOL) {
            report.partial += 1;
            if report.examples.len() < 16 {
                report.examples.push(n);
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct KratzSchoenebornReport {
    pub roundtrip: RoundtripReport,
    /// Whether `eta* = min(N, x)` at every interior node.
    pub full_posting: bool,
    /// Pairs of neighbouring inventory nodes where the lit rate decreases.
    pub nu_monotone_in_x: OrderingReport,
    /// Largest lit rate over the interior.
    pub max_nu: f64,
}

/// Checks the complete-or-nothing dark pool limit: zero spread, full fills
/// and a martingale bid, where the whole feasible quantity should be posted.
pub fn check_kratz_schoeneborn(policy: &PolicyGrid, model: &ModelSpec, interior: &Interior) -> Result<KratzSchoenebornReport> {
    let g = &policy.grid;
    if !(g.d.is_pinned() && g.d.lo() == 0.0) {
        return Err(Error::Precondition("needs the spread axis pinned at zero".into()));
    }
    if model.dark_fill.marks != MarkDistribution::PointMass(1.0) || !model.dark_fill.is_active() {
        return Err(Error::Precondition("needs dark fills that always execute in full".into()));
    }
    for c in [Channel::SpreadUp, Channel::SpreadDown] {
        let spec = model.jumps(c);
        if spec.is_active() && model.price_jump(c, g.s.lo(), 0.0, spec.marks.support().1).1 != 0.0 {
            return Err(Error::Precondition("spread jumps must keep a zero spread at zero".into()));
        }
    }
    require_martingale(model, g)?;

    let roundtrip = roundtrip_analysis(policy, interior);
    let tol = ordering_tol(policy);
    let mut mono = empty_report();
    let mut max_nu: f64 = 0.0;
    for n in interior.nodes(g) {
        let nu = Control::Nu.read(policy, n);
        max_nu = max_nu.max(nu);
        if n.i + 1 < g.x.len() {
            let up = NodeRef { i: n.i + 1, ..n };
            mono.push(n, nu > Control::Nu.read(policy, up) + tol);
        }
    }
    Ok(KratzSchoenebornReport {
        full_posting: roundtrip.partial == 0,
        roundtrip,
        nu_monotone_in_x: mono,
        max_nu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, NuSearch};

    fn grid() -> GridSpec {
        GridSpec {
            horizon: 4.0,
            n_t: 3,
            substeps: None,
            x: Axis::uniform(0.0, 100.0, 3).unwrap(),
            s: Axis::uniform(39.0, 41.0, 3).unwrap(),
            d: Axis::uniform(0.0, 0.2, 3).unwrap(),
            n_nu: 2,
            n_eta: 3,
            nu_search: NuSearch::ClosedForm,
        }
    }

    fn policy(nu: f64, eta_of_x: impl Fn(f64) -> f64) -> PolicyGrid {
        let g = grid();
        let total = g.slice_len() * g.n_t;
        let mut eta = alloc::vec![0.0; total];
        let mut nus = alloc::vec![0.0; total];
        for k in 0..g.n_t {
            for node in 0..g.slice_len() {
                let (i, _, _) = g.spatial_coords(node);
                let x = g.x.nodes()[i];
                if i > 0 {
                    nus[k * g.slice_len() + node] = nu;
                }
                eta[k * g.slice_len() + node] = eta_of_x(x);
            }
        }
        PolicyGrid {
            grid: g,
            nu: nus,
            eta,
            control_cap: 80.0,
        }
    }

    #[test]
    fn interpolated_policy_is_feasible() {
        let p = PolicyFn::new(policy(500.0, |x| x), Interpolation::Multilinear);
        let c = p.evaluate(1.0, &MarketState::new(1.0, 30.0, 40.0, 0.1, 0.0));
        assert_eq!(c.nu, 80.0);
        assert!(c.eta <= 30.0);
        let c = p.evaluate(1.0, &MarketState::new(1.0, 0.0, 40.0, 0.1, 0.0));
        assert_eq!(c, ControlPair::ZERO);
    }

    #[test]
    fn interior_skips_faces_and_terminal_slice() {
        let g = grid();
        let nodes = Interior::for_grid(&g).nodes(&g);
        // 2 slices x 2 inventory nodes x 1 x 1.
        assert_eq!(nodes.len(), 4);
        assert!(nodes.iter().all(|n| n.j == 1 && n.l == 1 && n.i >= 1 && n.k < 2));
    }

    #[test]
    fn roundtrip_counts_partial_postings() {
        let full = policy(1.0, |x| x.min(80.0));
        let g = grid();
        assert_eq!(roundtrip_analysis(&full, &Interior::for_grid(&g)).partial, 0);
        let half = policy(1.0, |x| 0.5 * x.min(80.0));
        let r = roundtrip_analysis(&half, &Interior::for_grid(&g));
        assert_eq!(r.fraction(), 1.0);
    }

    #[test]
    fn ordering_detects_violations() {
        let g = grid();
        let a = policy(1.0, |x| x);
        let b = policy(2.0, |x| x);
        let interior = Interior::for_grid(&g);
        assert_eq!(compare_controls(&a, &b, Control::Nu, &interior).unwrap().violations, 0);
        assert_eq!(compare_controls(&b, &a, Control::Nu, &interior).unwrap().fraction(), 1.0);
    }

    #[test]
    fn variation_of_flat_policy_is_zero() {
        let g = grid();
        let r = cross_section_variation(&policy(3.0, |x| x), &Interior::for_grid(&g));
        assert_eq!(r.max_variation, 0.0);
        assert_eq!(r.slices, 4);
    }
}
