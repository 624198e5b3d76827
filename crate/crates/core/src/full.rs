//! Brute-force solver on the full `(t, x, s_b, delta, w)` grid.
//!
//! This is a verification tool for tiny grids: it keeps cash as an explicit
//! coordinate instead of factoring it out, and supports a discount rate.
//! Along the cash axis values are interpolated linearly and extrapolated
//! linearly beyond the faces, so functions affine in `w` are represented
//! exactly. The time stepping, upwinding and jump quadrature otherwise
//! follow the same discretisation as [`crate::solver`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::{Axis, GridSpec, NuSearch};
use crate::model::{Channel, ModelSpec, ObjectiveSpec};
use crate::solver::ChannelRule;

#[derive(Debug, Clone)]
pub struct FullSolution {
    pub grid: GridSpec,
    pub w: Axis,
    /// Values, row-major over `(t, x, s_b, delta, w)`.
    pub v: Vec<f64>,
    pub substeps: usize,
}

impl FullSolution {
    pub fn at(&self, k: usize, i: usize, j: usize, l: usize, q: usize) -> f64 {
        self.v[(self.grid.index(k, i, j, l)) * self.w.len() + q]
    }
}

struct Layout {
    ns: usize,
    nd: usize,
    nw: usize,
}

impl Layout {
    fn idx(&self, i: usize, j: usize, l: usize, q: usize) -> usize {
        ((i * self.ns + j) * self.nd + l) * self.nw + q
    }
}

/// Linear interpolation along the cash axis, extrapolating beyond the faces.
fn cash_weights(w_axis: &[f64], w: f64) -> (usize, f64) {
    let n = w_axis.len();
    let mut lo = 0;
    while lo + 2 < n && w > w_axis[lo + 1] {
        lo += 1;
    }
    (lo, (w - w_axis[lo]) / (w_axis[lo + 1] - w_axis[lo]))
}

fn bilinear(axis: &Axis, v: f64) -> [(usize, f64); 2] {
    let b = axis.bracket(v);
    [(b.lo, 1.0 - b.frac), (b.hi, b.frac)]
}

/// Solves for the full value `V(t, x, s_b, delta, w)` with terminal data
/// `w + (s_b - alpha x) x`.
pub fn solve_full(model: &ModelSpec, obj: &ObjectiveSpec, grid: &GridSpec, w_axis: &Axis) -> Result<FullSolution> {
    model.validate()?;
    obj.validate()?;
    grid.validate()?;
    if w_axis.len() < 2 {
        return Err(invalid("w", "cash axis needs at least two nodes"));
    }
    let lay = Layout {
        ns: grid.s.len(),
        nd: grid.d.len(),
        nw: w_axis.len(),
    };
    let (xs, ss, ds, ws) = (grid.x.nodes(), grid.s.nodes(), grid.d.nodes(), w_axis.nodes());
    let cap = model.control_cap;
    let beta = model.beta;

    // Stability bound, including transport along the cash axis.
    let hw = w_axis.min_step();
    let mut max_rate: f64 = 0.0;
    for i in 1..xs.len() {
        let hx = xs[i] - xs[i - 1];
        for (j, &s) in ss.iter().enumerate() {
            for (l, &d) in ds.iter().enumerate() {
                let c = model.drift_coefficients(s, d);
                let mut probes = vec![0.0, cap];
                if beta > 0.0 {
                    probes.push((s / (2.0 * beta)).clamp(0.0, cap));
                }
                for nu in probes {
                    let step_s = |dr: f64| {
                        if dr > 0.0 {
                            grid.s.step_above(j).map_or(0.0, |h| dr / h)
                        } else {
                            grid.s.step_below(j).map_or(0.0, |h| -dr / h)
                        }
                    };
                    let step_d = |dr: f64| {
                        if dr > 0.0 {
                            grid.d.step_above(l).map_or(0.0, |h| dr / h)
                        } else {
                            grid.d.step_below(l).map_or(0.0, |h| -dr / h)
                        }
                    };
                    let rate = obj.r
                        + nu / hx
                        + step_s(c.bid(nu))
                        + step_d(c.spread(nu))
                        + (nu * (s - beta * nu)).abs() / hw
                        + model.price_jump_intensity()
                        + model.dark_fill.intensity;
                    max_rate = max_rate.max(rate);
                }
            }
        }
    }
    let stored = grid.stored_dt();
    let substeps = grid
        .substeps
        .unwrap_or_else(|| libm::ceil(stored * max_rate / 0.9).max(1.0) as usize);
    let dt = stored / substeps as f64;
    if dt * max_rate > 1.0 + 1e-12 {
        return Err(Error::Stability {
            dt,
            max_dt: 1.0 / max_rate,
        });
    }

    let slice = xs.len() * lay.ns * lay.nd * lay.nw;
    let mut out = vec![0.0; slice * grid.n_t];
    let mut cur = vec![0.0; slice];
    for (i, &x) in xs.iter().enumerate() {
        for (j, &s) in ss.iter().enumerate() {
            for l in 0..lay.nd {
                for (q, &w) in ws.iter().enumerate() {
                    cur[lay.idx(i, j, l, q)] = w + (s - obj.alpha * x) * x;
                }
            }
        }
    }
    out[(grid.n_t - 1) * slice..].copy_from_slice(&cur);

    let price: Vec<ChannelRule> = Channel::PRICE
        .iter()
        .map(|&c| (c, model.jumps(c).intensity, model.jumps(c).marks.quadrature()))
        .filter(|(_, lambda, _)| *lambda > 0.0)
        .collect();
    let dark_rule = model.dark_fill.marks.quadrature();
    let lambda_w = model.dark_fill.intensity;

    let mut next = vec![0.0; slice];
    for k in (0..grid.n_t - 1).rev() {
        for _ in 0..substeps {
            for i in 0..xs.len() {
                for j in 0..lay.ns {
                    for l in 0..lay.nd {
                        for q in 0..lay.nw {
                            let here = cur[lay.idx(i, j, l, q)];
                            next[lay.idx(i, j, l, q)] = if i == 0 {
                                here - dt * obj.r * here
                            } else {
                                here + dt * full_hamiltonian(
                                    model, obj, grid, w_axis, &lay, &cur, (i, j, l, q), &price, &dark_rule, lambda_w,
                                )
                            };
                        }
                    }
                }
            }
            core::mem::swap(&mut cur, &mut next);
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("full value"));
        }
        out[k * slice..(k + 1) * slice].copy_from_slice(&cur);
    }

    Ok(FullSolution {
        grid: grid.clone(),
        w: w_axis.clone(),
        v: out,
        substeps,
    })
}

#[allow(clippy::too_many_arguments)]
fn full_hamiltonian(
    model: &ModelSpec,
    obj: &ObjectiveSpec,
    grid: &GridSpec,
    w_axis: &Axis,
    lay: &Layout,
    v: &[f64],
    node: (usize, usize, usize, usize),
    price: &[ChannelRule],
    dark_rule: &[(f64, f64)],
    lambda_w: f64,
) -> f64 {
    let (i, j, l, q) = node;
    let (xs, ss, ds, ws) = (grid.x.nodes(), grid.s.nodes(), grid.d.nodes(), w_axis.nodes());
    let (x, s, d, w) = (xs[i], ss[j], ds[l], ws[q]);
    let here = v[lay.idx(i, j, l, q)];
    let cap = model.control_cap;
    let beta = model.beta;

    let vx = (here - v[lay.idx(i - 1, j, l, q)]) / (x - xs[i - 1]);
    let s_up = if j + 1 < lay.ns { (v[lay.idx(i, j + 1, l, q)] - here) / (ss[j + 1] - s) } else { 0.0 };
    let s_dn = if j > 0 { (here - v[lay.idx(i, j - 1, l, q)]) / (s - ss[j - 1]) } else { 0.0 };
    let d_up = if l + 1 < lay.nd { (v[lay.idx(i, j, l + 1, q)] - here) / (ds[l + 1] - d) } else { 0.0 };
    let d_dn = if l > 0 { (here - v[lay.idx(i, j, l - 1, q)]) / (d - ds[l - 1]) } else { 0.0 };
    // The cash axis is extrapolated linearly, so its faces use the adjacent
    // interval rather than a zero slope.
    let w_up = if q + 1 < lay.nw {
        (v[lay.idx(i, j, l, q + 1)] - here) / (ws[q + 1] - w)
    } else {
        (here - v[lay.idx(i, j, l, q - 1)]) / (w - ws[q - 1])
    };
    let w_dn = if q > 0 {
        (here - v[lay.idx(i, j, l, q - 1)]) / (w - ws[q - 1])
    } else {
        (v[lay.idx(i, j, l, q + 1)] - here) / (ws[q + 1] - w)
    };

    let c = model.drift_coefficients(s, d);
    let lit = |nu: f64| -> f64 {
        let ds_dt = c.bid(nu);
        let dd_dt = c.spread(nu);
        let dw_dt = nu * (s - beta * nu);
        -nu * vx
            + ds_dt * if ds_dt >= 0.0 { s_up } else { s_dn }
            + dd_dt * if dd_dt >= 0.0 { d_up } else { d_dn }
            + dw_dt * if dw_dt >= 0.0 { w_up } else { w_dn }
    };

    let best_lit = match grid.nu_search {
        NuSearch::Grid => {
            let mut best = lit(0.0);
            for m in 1..grid.n_nu {
                best = best.max(lit(cap * m as f64 / (grid.n_nu - 1) as f64));
            }
            best
        }
        NuSearch::ClosedForm => {
            // Split [0, N] where a drift changes sign; on each piece the
            // objective is a quadratic with fixed upwind directions.
            let mut cuts = vec![0.0, cap];
            for (a, b) in [(c.s_const, c.s_per_nu), (c.d_const, c.d_per_nu)] {
                if b != 0.0 && -a / b > 0.0 && -a / b < cap {
                    cuts.push(-a / b);
                }
            }
            if beta > 0.0 && s / beta > 0.0 && s / beta < cap {
                cuts.push(s / beta);
            }
            cuts.sort_by(f64::total_cmp);
            let mut best = f64::NEG_INFINITY;
            for piece in cuts.windows(2) {
                let (lo, hi) = (piece[0], piece[1]);
                let mid = 0.5 * (lo + hi);
                let ds_dt = c.bid(mid);
                let dd_dt = c.spread(mid);
                let dw_dt = mid * (s - beta * mid);
                let us = if ds_dt >= 0.0 { s_up } else { s_dn };
                let ud = if dd_dt >= 0.0 { d_up } else { d_dn };
                let uw = if dw_dt >= 0.0 { w_up } else { w_dn };
                // Objective a nu^2 + b nu + e on this piece.
                let a = -beta * uw;
                let b = -vx + c.s_per_nu * us + c.d_per_nu * ud + s * uw;
                let e = c.s_const * us + c.d_const * ud;
                let f = |nu: f64| a * nu * nu + b * nu + e;
                best = best.max(f(lo)).max(f(hi));
                if a < 0.0 {
                    best = best.max(f((-b / (2.0 * a)).clamp(lo, hi)));
                }
            }
            best
        }
    };

    let mut jumps = 0.0;
    for (channel, lambda, rule) in price {
        let mut e = 0.0;
        for &(z, p) in rule {
            let (s1, d1) = model.price_jump(*channel, s, d, z);
            for (jj, a) in bilinear(&grid.s, s1) {
                for (ll, b) in bilinear(&grid.d, d1) {
                    if a * b != 0.0 {
                        e += p * a * b * v[lay.idx(i, jj, ll, q)];
                    }
                }
            }
        }
        jumps += lambda * (e - here);
    }

    let mut dark = 0.0;
    if lambda_w > 0.0 {
        let mid = s + 0.5 * d;
        let post_cap = cap.min(x);
        for m in 0..grid.n_eta {
            let eta = if m + 1 == grid.n_eta {
                post_cap
            } else {
                post_cap * m as f64 / (grid.n_eta - 1) as f64
            };
            let mut e = 0.0;
            for &(z, p) in dark_rule {
                let (qq, fw) = cash_weights(ws, w + eta * z * mid);
                for (ii, a) in bilinear(&grid.x, x - eta * z) {
                    if a == 0.0 {
                        continue;
                    }
                    let lo = v[lay.idx(ii, j, l, qq)];
                    let hi = v[lay.idx(ii, j, l, qq + 1)];
                    e += p * a * (lo + fw * (hi - lo));
                }
            }
            dark = if m == 0 { lambda_w * (e - here) } else { dark.max(lambda_w * (e - here)) };
        }
    }

    -obj.r * here - obj.gamma * x * x + best_lit + jumps + dark
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cash_weights_extrapolate() {
        let w = [0.0, 1.0, 2.0];
        assert_eq!(cash_weights(&w, -1.0), (0, -1.0));
        assert_eq!(cash_weights(&w, 1.5), (1, 0.5));
        assert_eq!(cash_weights(&w, 4.0), (1, 3.0));
    }
}
