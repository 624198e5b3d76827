//! Rectangular grids over `(t, x, s_b, delta)` and the value/policy arrays
//! stored on them.
//!
//! Arrays are row-major with the time index outermost, then `x`, `s_b` and
//! `delta`.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

const PIN_TOL: f64 = 1e-12;

/// Strictly increasing node coordinates along one axis. A single node is
/// allowed and pins the coordinate (e.g. a spread fixed at zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    nodes: Vec<f64>,
}

/// Position of a coordinate between two neighbouring nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: usize,
    pub hi: usize,
    /// Weight of `hi`; the weight of `lo` is `1 - frac`.
    pub frac: f64,
    /// The coordinate lay outside the axis and was moved onto a face.
    pub clamped: bool,
}

impl Axis {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(invalid("axis", "needs at least one node"));
        }
        if nodes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("axis node"));
        }
        if nodes.windows(2).any(|p| p[1] <= p[0]) {
            return Err(invalid("axis", "nodes must be strictly increasing"));
        }
        Ok(Self { nodes })
    }

    /// `n` equally spaced nodes on `[lo, hi]`; `n = 1` requires `lo == hi`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::stretched(lo, hi, n, 1.0)
    }

    /// Nodes `lo + (hi - lo) (i / (n - 1))^power`, clustered near `lo` for
    /// `power > 1`.
    pub fn stretched(lo: f64, hi: f64, n: usize, power: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || !power.is_finite() {
            return Err(Error::NonFinite("axis bounds"));
        }
        if power <= 0.0 {
            return Err(invalid("axis", "stretch power must be positive"));
        }
        match n {
            0 => Err(invalid("axis", "needs at least one node")),
            1 if (hi - lo).abs() <= PIN_TOL => Ok(Self { nodes: alloc::vec![lo] }),
            1 => Err(invalid("axis", "a single node needs equal bounds")),
            _ if hi <= lo => Err(invalid("axis", "upper bound must exceed lower bound")),
            _ => {
                let last = (n - 1) as f64;
                let nodes = (0..n)
                    .map(|i| {
                        if i == n - 1 {
                            hi
                        } else {
                            lo + (hi - lo) * libm::pow(i as f64 / last, power)
                        }
                    })
                    .collect();
                Self::from_nodes(nodes)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn is_pinned(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Spacing to the next node below `i`, if any.
    pub fn step_below(&self, i: usize) -> Option<f64> {
        (i > 0).then(|| self.nodes[i] - self.nodes[i - 1])
    }

    /// Spacing to the next node above `i`, if any.
    pub fn step_above(&self, i: usize) -> Option<f64> {
        (i + 1 < self.nodes.len()).then(|| self.nodes[i + 1] - self.nodes[i])
    }

    /// Largest gap between neighbouring nodes.
    pub fn max_step(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|p| p[1] - p[0])
            .fold(0.0, f64::max)
    }

    /// Smallest gap between neighbouring nodes (infinite for a pinned axis).
    pub fn min_step(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|p| p[1] - p[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Linear-interpolation bracket for `v`, clamped onto the axis.
    pub fn bracket(&self, v: f64) -> Bracket {
        let n = self.nodes.len();
        let lo = self.lo();
        let hi = self.hi();
        if n == 1 || v <= lo {
            return Bracket {
                lo: 0,
                hi: 0,
                frac: 0.0,
                clamped: v < lo - PIN_TOL * (1.0 + lo.abs()),
            };
        }
        if v >= hi {
            return Bracket {
                lo: n - 1,
                hi: n - 1,
                frac: 0.0,
                clamped: v > hi + PIN_TOL * (1.0 + hi.abs()),
            };
        }
        let upper = self.nodes.partition_point(|&node| node <= v);
        let i = upper - 1;
        let frac = (v - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        if frac == 0.0 {
            return Bracket {
                lo: i,
                hi: i,
                frac: 0.0,
                clamped: false,
            };
        }
        Bracket {
            lo: i,
            hi: i + 1,
            frac,
            clamped: false,
        }
    }

    /// Index of the node closest to `v` (ties to the lower node).
    pub fn nearest(&self, v: f64) -> usize {
        let b = self.bracket(v);
        if b.frac > 0.5 {
            b.hi
        } else {
            b.lo
        }
    }
}

/// How the lit rate is chosen at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NuSearch {
    /// Exact maximiser of the piecewise-quadratic Hamiltonian over `[0, N]`.
    #[default]
    ClosedForm,
    /// Best of `n_nu` equally spaced rates on `[0, N]`.
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Horizon T; stored slices are equally spaced on `[0, T]`.
    pub horizon: f64,
    /// Number of stored time slices, including `t = 0` and `t = T`.
    pub n_t: usize,
    /// Explicit Euler steps per stored interval; chosen from the stability
    /// bound when `None`.
    pub substeps: Option<usize>,
    /// Inventory axis; must start at 0.
    pub x: Axis,
    pub s: Axis,
    pub d: Axis,
    pub n_nu: usize,
    pub n_eta: usize,
    pub nu_search: NuSearch,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(invalid("horizon", "must be finite and > 0"));
        }
        if self.n_t < 2 {
            return Err(invalid("n_t", "need at least two time slices"));
        }
        if self.substeps == Some(0) {
            return Err(invalid("substeps", "must be >= 1"));
        }
        if self.x.len() < 2 {
            return Err(invalid("n_x", "need at least two inventory nodes"));
        }
        if self.x.lo() != 0.0 {
            return Err(invalid("x", "inventory axis must start at 0"));
        }
        if self.s.lo() < 0.0 {
            return Err(invalid("s", "bid axis must be non-negative"));
        }
        if self.d.lo() < 0.0 {
            return Err(invalid("d", "spread axis must be non-negative"));
        }
        if self.n_eta < 2 {
            return Err(invalid("n_eta", "need at least two posting candidates"));
        }
        if self.nu_search == NuSearch::Grid && self.n_nu < 2 {
            return Err(invalid("n_nu", "need at least two rate candidates"));
        }
        Ok(())
    }

    pub fn stored_dt(&self) -> f64 {
        self.horizon / (self.n_t - 1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.n_t {
            self.horizon
        } else {
            k as f64 * self.stored_dt()
        }
    }

    /// Stored slice whose interval `[t_k, t_{k+1})` contains `t`.
    pub fn slice_at(&self, t: f64) -> usize {
        if t.is_nan() || t <= 0.0 {
            return 0;
        }
        let k = libm::floor(t / self.stored_dt() + 1e-9) as usize;
        k.min(self.n_t - 1)
    }

    /// Nodes per time slice.
    pub fn slice_len(&self) -> usize {
        self.x.len() * self.s.len() * self.d.len()
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n_t, self.x.len(), self.s.len(), self.d.len()]
    }

    /// Flat index of spatial node `(i, j, l)` within a slice.
    pub fn spatial_index(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.s.len() + j) * self.d.len() + l
    }

    pub fn index(&self, k: usize, i: usize, j: usize, l: usize) -> usize {
        k * self.slice_len() + self.spatial_index(i, j, l)
    }

    /// Inverse of [`GridSpec::spatial_index`].
    pub fn spatial_coords(&self, node: usize) -> (usize, usize, usize) {
        let nd = self.d.len();
        let ns = self.s.len();
        (node / (ns * nd), (node / nd) % ns, node % nd)
    }

    /// Whether two grids share every axis and the time layout.
    pub fn same_layout(&self, other: &GridSpec) -> bool {
        self.horizon == other.horizon
            && self.n_t == other.n_t
            && self.x == other.x
            && self.s == other.s
            && self.d == other.d
    }
}

/// Reduced value `u(t, x, s_b, delta)`; the full value is `w + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub grid: GridSpec,
    pub u: Vec<f64>,
}

impl ValueGrid {
    pub fn at(&self, k: usize, i: usize, j: usize, l: usize) -> f64 {
        self.u[self.grid.index(k, i, j, l)]
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.slice_len();
        &self.u[k * n..(k + 1) * n]
    }

    /// Multilinear interpolation in `(x, s_b, delta)` on stored slice `k`,
    /// clamping outside the grid.
    pub fn interpolate(&self, k: usize, x: f64, s_b: f64, delta: f64) -> f64 {
        interpolate_slice(&self.grid, self.slice(k), x, s_b, delta)
    }
}

/// Optimal controls at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrid {
    pub grid: GridSpec,
    pub nu: Vec<f64>,
    pub eta: Vec<f64>,
    /// Control cap N used by the solve.
    pub control_cap: f64,
}

impl PolicyGrid {
    pub fn nu_at(&self, k: usize, i: usize, j: usize, l: usize) -> f64 {
        self.nu[self.grid.index(k, i, j, l)]
    }

    pub fn eta_at(&self, k: usize, i: usize, j: usize, l: usize) -> f64 {
        self.eta[self.grid.index(k, i, j, l)]
    }
}

pub(crate) fn interpolate_slice(grid: &GridSpec, slice: &[f64], x: f64, s_b: f64, delta: f64) -> f64 {
    let bx = grid.x.bracket(x);
    let bs = grid.s.bracket(s_b);
    let bd = grid.d.bracket(delta);
    let mut acc = 0.0;
    for (i, wi) in [(bx.lo, 1.0 - bx.frac), (bx.hi, bx.frac)] {
        if wi == 0.0 {
            continue;
        }
        for (j, wj) in [(bs.lo, 1.0 - bs.frac), (bs.hi, bs.frac)] {
            if wj == 0.0 {
                continue;
            }
            for (l, wl) in [(bd.lo, 1.0 - bd.frac), (bd.hi, bd.frac)] {
                if wl == 0.0 {
                    continue;
                }
                acc += wi * wj * wl * slice[grid.spatial_index(i, j, l)];
            }
        }
    }
    acc
}
