//! Explicit upwind backward solver for the reduced HJB equation.
//!
//! With no discounting the value is `V = w + u(t, x, s_b, delta)` and `u`
//! solves
//!
//! ```text
//! u_t - gamma x^2 + sup_nu { nu (s_b - beta nu) - nu u_x + mu_s(nu) u_s + mu_d(nu) u_d }
//!     + sum_c lambda_c E[u(jump_c) - u]
//!     + lambda_w sup_eta E[u(x - eta z) - u + eta z mid] = 0,     u(T) = (s_b - alpha x) x,
//! ```
//!
//! with `u = 0` on `x = 0`. Each explicit Euler step evaluates the bracket at
//! the later time level. Drift terms use one-sided differences in the upwind
//! direction; a derivative that would reach beyond a face of the grid is taken
//! as zero, which keeps the scheme monotone. Jump expectations use
//! Gauss–Legendre (uniform marks) or exact atoms, with multilinear
//! interpolation and destinations clamped onto the grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, NuSearch, PolicyGrid, ValueGrid};
use crate::model::{Channel, DriftCoefficients, ModelSpec, ObjectiveSpec};

/// Fraction of the stability bound used when the step count is automatic.
const AUTO_CFL: f64 = 0.9;
const STABILITY_SLACK: f64 = 1e-12;

/// Whether the cash coordinate can be factored out of the value function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    /// `V(t, x, s_b, delta, w) = w + u(t, x, s_b, delta)`, with running reward
    /// `-gamma x^2` and terminal reward `(s_b - alpha x) x` for `u`.
    Reduced { gamma: f64, alpha: f64 },
    /// Discounting makes the value non-additive in cash.
    Unavailable { r: f64 },
}

/// Checks that the objective is additive in cash so the 4-D solve applies.
pub fn reduce_cash_dimension(obj: &ObjectiveSpec) -> Reduction {
    if obj.r == 0.0 {
        Reduction::Reduced {
            gamma: obj.gamma,
            alpha: obj.alpha,
        }
    } else {
        Reduction::Unavailable { r: obj.r }
    }
}

/// Price channel with its intensity and mark quadrature `(z, weight)`.
pub(crate) type ChannelRule = (Channel, f64, Vec<(f64, f64)>);

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Explicit steps per stored interval.
    pub substeps: usize,
    /// Explicit step length.
    pub dt: f64,
    /// Largest step allowed by the stability bound.
    pub max_dt: f64,
    /// `dt / max_dt`; at most 1.
    pub cfl_ratio: f64,
    /// Price-jump quadrature destinations that fell outside the `(s_b, delta)`
    /// grid and were moved onto a face, per channel (bid up, bid down, spread
    /// up, spread down). Counted once per `(s_b, delta)` node and mark.
    pub clamp_counts: [u64; 4],
    /// Largest residual of the discrete equation over stored slices.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub value: ValueGrid,
    pub policy: PolicyGrid,
    pub diagnostics: Diagnostics,
}

/// Finite differences and local data the lit-rate maximisation needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LitTerms {
    pub s_b: f64,
    /// Backward difference in `x`.
    pub u_x: f64,
    pub u_s_forward: f64,
    pub u_s_backward: f64,
    pub u_d_forward: f64,
    pub u_d_backward: f64,
    pub drift: DriftCoefficients,
}

impl LitTerms {
    /// Lit part of the Hamiltonian at rate `nu`, upwinded by drift sign.
    pub fn value(&self, nu: f64, beta: f64) -> f64 {
        let (b, c) = self.linear_part(nu);
        -beta * nu * nu + b * nu + c
    }

    /// Returns `(B, C)` such that the lit objective is `-beta nu^2 + B nu + C`
    /// on the piece containing `probe`.
    fn linear_part(&self, probe: f64) -> (f64, f64) {
        let us = if self.drift.bid(probe) >= 0.0 {
            self.u_s_forward
        } else {
            self.u_s_backward
        };
        let ud = if self.drift.spread(probe) >= 0.0 {
            self.u_d_forward
        } else {
            self.u_d_backward
        };
        let slope = self.s_b - self.u_x + self.drift.s_per_nu * us + self.drift.d_per_nu * ud;
        let intercept = self.drift.s_const * us + self.drift.d_const * ud;
        (slope, intercept)
    }
}

/// Maximises the lit part of the Hamiltonian over `nu` in `[0, cap]`.
/// Returns `(nu*, value)`; ties go to the smallest rate.
pub fn maximize_lit_rate(
    terms: &LitTerms,
    beta: f64,
    cap: f64,
    search: NuSearch,
    n_nu: usize,
) -> (f64, f64) {
    match search {
        NuSearch::Grid => {
            let mut best = (0.0, terms.value(0.0, beta));
            for k in 1..n_nu {
                let nu = cap * k as f64 / (n_nu - 1) as f64;
                let v = terms.value(nu, beta);
                if v > best.1 {
                    best = (nu, v);
                }
            }
            best
        }
        NuSearch::ClosedForm => {
            let mut cuts = [0.0, cap, cap, cap];
            let mut n = 1;
            for (c, b) in [
                (terms.drift.s_const, terms.drift.s_per_nu),
                (terms.drift.d_const, terms.drift.d_per_nu),
            ] {
                if b != 0.0 {
                    let root = -c / b;
                    if root > 0.0 && root < cap {
                        cuts[n] = root;
                        n += 1;
                    }
                }
            }
            let cuts = &mut cuts[..n + 1];
            cuts[n] = cap;
            cuts.sort_by(f64::total_cmp);
            let mut best: Option<(f64, f64)> = None;
            for piece in cuts.windows(2) {
                let (lo, hi) = (piece[0], piece[1]);
                if hi < lo {
                    continue;
                }
                let (b, c) = terms.linear_part(0.5 * (lo + hi));
                let nu = if beta > 0.0 {
                    (b / (2.0 * beta)).clamp(lo, hi)
                } else if b > 0.0 {
                    hi
                } else {
                    lo
                };
                let v = -beta * nu * nu + b * nu + c;
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((nu, v));
                }
            }
            best.unwrap_or((0.0, terms.value(0.0, beta)))
        }
    }
}

/// Optimal controls at a node and the resulting Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeOptimum {
    pub nu: f64,
    pub eta: f64,
    /// Full Hamiltonian: running reward, lit term, price jumps and dark term.
    pub hamiltonian: f64,
}

#[derive(Debug, Clone)]
struct DarkCandidate {
    eta: f64,
    /// `eta * E[z]`.
    expected_fill: f64,
    /// `(x index, probability weight)` of the interpolated post-fill inventory.
    entries: Vec<(usize, f64)>,
}

/// Discrete Hamiltonian of the reduced problem on a fixed grid. All
/// jump-destination interpolation weights are precomputed; they do not
/// depend on time or on the value.
#[derive(Debug, Clone)]
pub struct HjbOperator {
    grid: GridSpec,
    gamma: f64,
    beta: f64,
    control_cap: f64,
    dark_intensity: f64,
    price_intensity: f64,
    dark_mark_mean: f64,
    dark_quadrature: Vec<(f64, f64)>,
    drift: Vec<DriftCoefficients>,
    jump_ptr: Vec<usize>,
    jump_entries: Vec<(usize, f64)>,
    dark: Vec<DarkCandidate>,
    clamp_counts: [u64; 4],
    max_rate: f64,
}

impl HjbOperator {
    pub fn new(model: &ModelSpec, obj: &ObjectiveSpec, grid: &GridSpec) -> Result<Self> {
        model.validate()?;
        obj.validate()?;
        grid.validate()?;
        if let Reduction::Unavailable { r } = reduce_cash_dimension(obj) {
            return Err(Error::ReductionUnavailable { r });
        }
        let ns = grid.s.len();
        let nd = grid.d.len();

        let mut drift = Vec::with_capacity(ns * nd);
        for &s in grid.s.nodes() {
            for &d in grid.d.nodes() {
                let c = model.drift_coefficients(s, d);
                if ![c.s_const, c.s_per_nu, c.d_const, c.d_per_nu]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return Err(Error::NonFinite("drift coefficients"));
                }
                drift.push(c);
            }
        }

        let mut clamp_counts = [0u64; 4];
        let mut jump_ptr = Vec::with_capacity(ns * nd + 1);
        let mut jump_entries = Vec::new();
        jump_ptr.push(0);
        let price_quadrature: Vec<ChannelRule> = Channel::PRICE
            .iter()
            .filter(|&&c| model.jumps(c).is_active())
            .map(|&c| (c, model.jumps(c).intensity, model.jumps(c).marks.quadrature()))
            .collect();
        for &s in grid.s.nodes() {
            for &d in grid.d.nodes() {
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (channel, intensity, rule) in &price_quadrature {
                    for &(z, w) in rule {
                        let (s1, d1) = model.price_jump(*channel, s, d, z);
                        let bs = grid.s.bracket(s1);
                        let bd = grid.d.bracket(d1);
                        if bs.clamped || bd.clamped {
                            clamp_counts[channel.index()] += 1;
                        }
                        for (j, wj) in [(bs.lo, 1.0 - bs.frac), (bs.hi, bs.frac)] {
                            for (l, wl) in [(bd.lo, 1.0 - bd.frac), (bd.hi, bd.frac)] {
                                let weight = intensity * w * wj * wl;
                                if weight != 0.0 {
                                    row.push((j * nd + l, weight));
                                }
                            }
                        }
                    }
                }
                row.sort_by_key(|e| e.0);
                let start = jump_entries.len();
                for (idx, weight) in row {
                    let merged = jump_entries.len() > start;
                    match jump_entries.last_mut() {
                        Some((last, acc)) if merged && *last == idx => *acc += weight,
                        _ => jump_entries.push((idx, weight)),
                    }
                }
                jump_ptr.push(jump_entries.len());
            }
        }
        let price_intensity = model.price_jump_intensity();

        let dark_quadrature = if model.dark_fill.is_active() {
            model.dark_fill.marks.quadrature()
        } else {
            Vec::new()
        };
        let dark_mark_mean = model.dark_fill.marks.mean();
        let mut dark = Vec::with_capacity(grid.x.len() * grid.n_eta);
        for &x in grid.x.nodes() {
            let cap = model.control_cap.min(x);
            for m in 0..grid.n_eta {
                let eta = if m + 1 == grid.n_eta {
                    cap
                } else {
                    cap * m as f64 / (grid.n_eta - 1) as f64
                };
                dark.push(DarkCandidate {
                    eta,
                    expected_fill: eta * dark_mark_mean,
                    entries: fill_entries(grid, x, eta, &dark_quadrature),
                });
            }
        }

        let mut op = Self {
            grid: grid.clone(),
            gamma: obj.gamma,
            beta: model.beta,
            control_cap: model.control_cap,
            dark_intensity: model.dark_fill.intensity,
            price_intensity,
            dark_mark_mean,
            dark_quadrature,
            drift,
            jump_ptr,
            jump_entries,
            dark,
            clamp_counts,
            max_rate: 0.0,
        };
        op.max_rate = op.compute_max_rate();
        Ok(op)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn clamp_counts(&self) -> [u64; 4] {
        self.clamp_counts
    }

    /// Sum of all outflow rates from a node, maximised over nodes and
    /// controls; explicit steps are monotone when `dt * max_rate <= 1`.
    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    fn compute_max_rate(&self) -> f64 {
        let g = &self.grid;
        let jumps = self.price_intensity + self.dark_intensity;
        let mut worst: f64 = 0.0;
        for i in 1..g.x.len() {
            let hx = g.x.step_below(i).unwrap_or(f64::INFINITY);
            for j in 0..g.s.len() {
                for l in 0..g.d.len() {
                    let c = self.drift[j * g.d.len() + l];
                    for nu in [0.0, self.control_cap] {
                        let rate = nu / hx
                            + upwind_rate(c.bid(nu), g.s.step_above(j), g.s.step_below(j))
                            + upwind_rate(c.spread(nu), g.d.step_above(l), g.d.step_below(l))
                            + jumps;
                        worst = worst.max(rate);
                    }
                }
            }
        }
        worst
    }

    fn sd_index(&self, j: usize, l: usize) -> usize {
        j * self.grid.d.len() + l
    }

    /// Lit-rate inputs at spatial node `(i, j, l)` of slice `v`, `i >= 1`.
    pub fn lit_terms(&self, v: &[f64], i: usize, j: usize, l: usize) -> LitTerms {
        let g = &self.grid;
        let at = |i: usize, j: usize, l: usize| v[g.spatial_index(i, j, l)];
        let here = at(i, j, l);
        let hx = g.x.step_below(i).expect("lit terms need x > 0");
        let fwd = |h: Option<f64>, next: f64| h.map_or(0.0, |h| (next - here) / h);
        let bwd = |h: Option<f64>, prev: f64| h.map_or(0.0, |h| (here - prev) / h);
        LitTerms {
            s_b: g.s.nodes()[j],
            u_x: (here - at(i - 1, j, l)) / hx,
            u_s_forward: fwd(g.s.step_above(j), if j + 1 < g.s.len() { at(i, j + 1, l) } else { here }),
            u_s_backward: bwd(g.s.step_below(j), if j > 0 { at(i, j - 1, l) } else { here }),
            u_d_forward: fwd(g.d.step_above(l), if l + 1 < g.d.len() { at(i, j, l + 1) } else { here }),
            u_d_backward: bwd(g.d.step_below(l), if l > 0 { at(i, j, l - 1) } else { here }),
            drift: self.drift[self.sd_index(j, l)],
        }
    }

    /// `sum_c lambda_c E[u(jump_c) - u]` over the four price channels.
    pub fn price_jump_term(&self, v: &[f64], i: usize, j: usize, l: usize) -> f64 {
        let g = &self.grid;
        let sd = self.sd_index(j, l);
        let base = i * g.s.len() * g.d.len();
        let mut acc = 0.0;
        for &(dest, weight) in &self.jump_entries[self.jump_ptr[sd]..self.jump_ptr[sd + 1]] {
            acc += weight * v[base + dest];
        }
        acc - self.price_intensity * v[base + sd]
    }

    /// Increment `lambda E[u(jump) - u]` of one channel at a node. For the
    /// dark-fill channel the cash received at mid is included and `eta` is the
    /// posting; it is ignored for price channels.
    pub fn jump_increment(
        &self,
        model: &ModelSpec,
        v: &[f64],
        node: (usize, usize, usize),
        channel: Channel,
        eta: f64,
    ) -> f64 {
        let g = &self.grid;
        let (i, j, l) = node;
        let x = g.x.nodes()[i];
        let s = g.s.nodes()[j];
        let d = g.d.nodes()[l];
        let here = v[g.spatial_index(i, j, l)];
        let spec = model.jumps(channel);
        if !spec.is_active() {
            return 0.0;
        }
        let mut expectation = 0.0;
        for (z, w) in spec.marks.quadrature() {
            let after = if channel == Channel::DarkFill {
                let executed = eta * z;
                crate::grid::interpolate_slice(g, v, x - executed, s, d) + executed * (s + 0.5 * d)
            } else {
                let (s1, d1) = model.price_jump(channel, s, d, z);
                crate::grid::interpolate_slice(g, v, x, s1, d1)
            };
            expectation += w * after;
        }
        spec.intensity * (expectation - here)
    }

    /// Dark-pool term `lambda_w E[u(x - eta z) - u + eta z mid]` for one of
    /// the posting candidates at node `(i, j, l)`.
    fn dark_term(&self, v: &[f64], i: usize, j: usize, l: usize, cand: &DarkCandidate, mid: f64) -> f64 {
        let g = &self.grid;
        let stride = g.s.len() * g.d.len();
        let sd = self.sd_index(j, l);
        let mut acc = 0.0;
        for &(xi, w) in &cand.entries {
            acc += w * v[xi * stride + sd];
        }
        self.dark_intensity * (acc - v[i * stride + sd] + cand.expected_fill * mid)
    }

    /// Maximised Hamiltonian and the optimal controls at spatial node
    /// `(i, j, l)` of slice `v`. On the `x = 0` face both vanish.
    pub fn optimize(&self, v: &[f64], i: usize, j: usize, l: usize) -> NodeOptimum {
        if i == 0 {
            return NodeOptimum {
                nu: 0.0,
                eta: 0.0,
                hamiltonian: 0.0,
            };
        }
        let g = &self.grid;
        let x = g.x.nodes()[i];
        let terms = self.lit_terms(v, i, j, l);
        let (nu, lit) = maximize_lit_rate(&terms, self.beta, self.control_cap, g.nu_search, g.n_nu);

        let mid = g.s.nodes()[j] + 0.5 * g.d.nodes()[l];
        let mut eta = 0.0;
        let mut dark = 0.0;
        if self.dark_intensity > 0.0 {
            let cands = &self.dark[i * g.n_eta..(i + 1) * g.n_eta];
            dark = self.dark_term(v, i, j, l, &cands[0], mid);
            for cand in &cands[1..] {
                let value = self.dark_term(v, i, j, l, cand, mid);
                if value > dark {
                    dark = value;
                    eta = cand.eta;
                }
            }
        }

        let hamiltonian = -self.gamma * x * x + lit + self.price_jump_term(v, i, j, l) + dark;
        NodeOptimum { nu, eta, hamiltonian }
    }

    /// Dark-pool term at an arbitrary posting (not restricted to the
    /// candidate grid).
    pub fn dark_increment(&self, v: &[f64], i: usize, j: usize, l: usize, eta: f64) -> f64 {
        let g = &self.grid;
        let x = g.x.nodes()[i];
        let mid = g.s.nodes()[j] + 0.5 * g.d.nodes()[l];
        let cand = DarkCandidate {
            eta,
            expected_fill: eta * self.dark_mark_mean,
            entries: fill_entries(g, x, eta, &self.dark_quadrature),
        };
        if self.dark_intensity == 0.0 {
            return 0.0;
        }
        self.dark_term(v, i, j, l, &cand, mid)
    }

    /// One explicit step backward: writes `v + dt H(v)` and the maximisers.
    pub fn step(&self, v: &[f64], dt: f64, out: &mut [f64], nu: &mut [f64], eta: &mut [f64]) {
        let row = self.grid.s.len() * self.grid.d.len();
        #[allow(clippy::type_complexity)]
        let update = |(i, ((u_row, nu_row), eta_row)): (usize, ((&mut [f64], &mut [f64]), &mut [f64]))| {
            self.step_row(v, dt, i, u_row, nu_row, eta_row);
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            out.par_chunks_mut(row)
                .zip(nu.par_chunks_mut(row))
                .zip(eta.par_chunks_mut(row))
                .enumerate()
                .for_each(update);
        }
        #[cfg(not(feature = "parallel"))]
        {
            out.chunks_mut(row)
                .zip(nu.chunks_mut(row))
                .zip(eta.chunks_mut(row))
                .enumerate()
                .for_each(update);
        }
    }

    fn step_row(&self, v: &[f64], dt: f64, i: usize, out: &mut [f64], nu: &mut [f64], eta: &mut [f64]) {
        let nd = self.grid.d.len();
        for j in 0..self.grid.s.len() {
            for l in 0..nd {
                let k = j * nd + l;
                if i == 0 {
                    out[k] = 0.0;
                    nu[k] = 0.0;
                    eta[k] = 0.0;
                    continue;
                }
                let opt = self.optimize(v, i, j, l);
                out[k] = v[self.grid.spatial_index(i, j, l)] + dt * opt.hamiltonian;
                nu[k] = opt.nu;
                eta[k] = opt.eta;
            }
        }
    }
}

fn upwind_rate(drift: f64, above: Option<f64>, below: Option<f64>) -> f64 {
    if drift > 0.0 {
        above.map_or(0.0, |h| drift / h)
    } else if drift < 0.0 {
        below.map_or(0.0, |h| -drift / h)
    } else {
        0.0
    }
}

fn fill_entries(grid: &GridSpec, x: f64, eta: f64, rule: &[(f64, f64)]) -> Vec<(usize, f64)> {
    let mut entries: Vec<(usize, f64)> = Vec::new();
    let mut push = |idx: usize, w: f64| {
        if w == 0.0 {
            return;
        }
        match entries.iter_mut().find(|e| e.0 == idx) {
            Some(e) => e.1 += w,
            None => entries.push((idx, w)),
        }
    };
    for &(z, w) in rule {
        let b = grid.x.bracket(x - eta * z);
        push(b.lo, w * (1.0 - b.frac));
        push(b.hi, w * b.frac);
    }
    entries
}

fn terminal_slice(grid: &GridSpec, obj: &ObjectiveSpec) -> Vec<f64> {
    let mut u = vec![0.0; grid.slice_len()];
    for (node, value) in u.iter_mut().enumerate() {
        let (i, j, _) = grid.spatial_coords(node);
        *value = obj.terminal_inventory_value(grid.x.nodes()[i], grid.s.nodes()[j]);
    }
    u
}

/// Chooses the explicit step from the stability bound, or checks the
/// requested one against it.
fn plan_steps(grid: &GridSpec, max_rate: f64) -> Result<(usize, f64)> {
    let stored = grid.stored_dt();
    let max_dt = if max_rate > 0.0 { 1.0 / max_rate } else { f64::INFINITY };
    let substeps = match grid.substeps {
        Some(m) => m,
        None => libm::ceil(stored * max_rate / AUTO_CFL).max(1.0) as usize,
    };
    let dt = stored / substeps as f64;
    if dt * max_rate > 1.0 + STABILITY_SLACK {
        return Err(Error::Stability { dt, max_dt });
    }
    Ok((substeps, max_dt))
}

/// Solves the reduced HJB equation backward from the terminal reward.
///
/// The policy stored at slice `k` is the maximiser used on the first explicit
/// step after `t_k`, so it is the control in force on `[t_k, t_k + dt)`; the
/// slice at `T` holds the maximiser of the terminal Hamiltonian.
pub fn solve_backward(model: &ModelSpec, obj: &ObjectiveSpec, grid: &GridSpec) -> Result<Solution> {
    let op = HjbOperator::new(model, obj, grid)?;
    solve_with(&op, grid, terminal_slice(grid, obj))
}

/// Like [`solve_backward`] but starting from caller-supplied terminal data
/// (one slice, spatial layout of the grid).
pub fn solve_from_terminal(
    model: &ModelSpec,
    obj: &ObjectiveSpec,
    grid: &GridSpec,
    terminal: Vec<f64>,
) -> Result<Solution> {
    if terminal.len() != grid.slice_len() {
        return Err(Error::GridMismatch("terminal slice length"));
    }
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("terminal data"));
    }
    let op = HjbOperator::new(model, obj, grid)?;
    solve_with(&op, grid, terminal)
}

fn solve_with(op: &HjbOperator, grid: &GridSpec, terminal: Vec<f64>) -> Result<Solution> {
    let (substeps, max_dt) = plan_steps(grid, op.max_rate())?;
    let dt = grid.stored_dt() / substeps as f64;
    let n = grid.slice_len();
    let n_t = grid.n_t;

    let mut u = vec![0.0; n * n_t];
    let mut nu = vec![0.0; n * n_t];
    let mut eta = vec![0.0; n * n_t];
    u[(n_t - 1) * n..].copy_from_slice(&terminal);

    let mut cur = terminal;
    let mut next = vec![0.0; n];
    let mut nu_buf = vec![0.0; n];
    let mut eta_buf = vec![0.0; n];
    for k in (0..n_t - 1).rev() {
        for m in 0..substeps {
            op.step(&cur, dt, &mut next, &mut nu_buf, &mut eta_buf);
            core::mem::swap(&mut cur, &mut next);
            if k == n_t - 2 && m == 0 {
                nu[k * n + n..(k + 2) * n].copy_from_slice(&nu_buf);
                eta[k * n + n..(k + 2) * n].copy_from_slice(&eta_buf);
            }
        }
        if let Some(node) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                time: grid.time(k),
                node,
            });
        }
        u[k * n..(k + 1) * n].copy_from_slice(&cur);
        nu[k * n..(k + 1) * n].copy_from_slice(&nu_buf);
        eta[k * n..(k + 1) * n].copy_from_slice(&eta_buf);
    }

    let value = ValueGrid {
        grid: grid.clone(),
        u,
    };
    let residual = residual_with(op, &value);
    Ok(Solution {
        policy: PolicyGrid {
            grid: grid.clone(),
            nu,
            eta,
            control_cap: op.control_cap,
        },
        value,
        diagnostics: Diagnostics {
            substeps,
            dt,
            max_dt,
            cfl_ratio: dt / max_dt,
            clamp_counts: op.clamp_counts(),
            residual,
        },
    })
}

/// Largest residual `|(u_{k+1} - u_k) / dt_k + H(u_k)|` of the discrete
/// equation over stored slices `k < n_t - 1` and nodes with `x > 0`, where
/// `dt_k` is the stored slice spacing. It vanishes only in the limit and
/// shrinks in proportion to the time step; it is not evaluated at `T`.
pub fn discrete_residual(value: &ValueGrid, model: &ModelSpec, obj: &ObjectiveSpec) -> Result<f64> {
    let op = HjbOperator::new(model, obj, &value.grid)?;
    if value.u.len() != value.grid.slice_len() * value.grid.n_t {
        return Err(Error::GridMismatch("value array length"));
    }
    Ok(residual_with(&op, value))
}

/// Node-wise residual `|(u_{k+1} - u_k) / dt_k + H(u_k)|`, laid out like the
/// value array; zero on the terminal slice and on `x = 0`.
pub fn residual_field(value: &ValueGrid, model: &ModelSpec, obj: &ObjectiveSpec) -> Result<Vec<f64>> {
    let op = HjbOperator::new(model, obj, &value.grid)?;
    if value.u.len() != value.grid.slice_len() * value.grid.n_t {
        return Err(Error::GridMismatch("value array length"));
    }
    Ok(residual_nodes(&op, value))
}

fn residual_nodes(op: &HjbOperator, value: &ValueGrid) -> Vec<f64> {
    let g = &value.grid;
    let dt = g.stored_dt();
    let n = g.slice_len();
    let mut out = vec![0.0; n * g.n_t];
    for k in 0..g.n_t - 1 {
        let now = value.slice(k);
        let later = value.slice(k + 1);
        for node in 0..n {
            let (i, j, l) = g.spatial_coords(node);
            if i == 0 {
                continue;
            }
            let h = op.optimize(now, i, j, l).hamiltonian;
            let r = ((later[node] - now[node]) / dt + h).abs();
            out[k * n + node] = if r.is_nan() { f64::INFINITY } else { r };
        }
    }
    out
}

fn residual_with(op: &HjbOperator, value: &ValueGrid) -> f64 {
    residual_nodes(op, value).into_iter().fold(0.0, f64::max)
}
