//! Exhaustive enumeration of one explicit step of the discrete Bellman
//! recursion, written independently of the solver's operator: own drift,
//! jump maps, interpolation and Gauss–Legendre nodes.

use litdark_core::model::{Family, MarkDistribution};
use litdark_core::{GridSpec, ModelSpec, ObjectiveSpec};

/// Gauss–Legendre nodes and probability weights on `[lo, hi]`, from Newton
/// iteration on the Legendre polynomial of degree `n`.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let legendre = |x: f64| -> (f64, f64) {
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let k = k as f64;
            let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        (p1, dp)
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (lo + hi) + 0.5 * (hi - lo) * x, 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

pub fn mark_rule(m: &MarkDistribution) -> Vec<(f64, f64)> {
    match m {
        MarkDistribution::Uniform { lo, hi } if hi > lo => gauss_legendre(8, *lo, *hi),
        MarkDistribution::Uniform { lo, .. } => vec![(*lo, 1.0)],
        MarkDistribution::PointMass(c) => vec![(*c, 1.0)],
        MarkDistribution::Discrete(atoms) => atoms.iter().copied().filter(|a| a.1 > 0.0).collect(),
    }
}

/// Two-point linear interpolation weights, constant beyond the faces.
fn weights(nodes: &[f64], v: f64) -> [(usize, f64); 2] {
    let n = nodes.len();
    if v <= nodes[0] {
        return [(0, 1.0), (0, 0.0)];
    }
    if v >= nodes[n - 1] {
        return [(n - 1, 1.0), (n - 1, 0.0)];
    }
    let mut i = 0;
    while nodes[i + 1] <= v {
        i += 1;
    }
    let f = (v - nodes[i]) / (nodes[i + 1] - nodes[i]);
    [(i, 1.0 - f), (i + 1, f)]
}

struct Slice<'a> {
    xs: &'a [f64],
    ss: &'a [f64],
    ds: &'a [f64],
    u: Vec<f64>,
}

impl Slice<'_> {
    fn at(&self, i: usize, j: usize, l: usize) -> f64 {
        self.u[(i * self.ss.len() + j) * self.ds.len() + l]
    }

    fn interp(&self, x: f64, s: f64, d: f64) -> f64 {
        let mut acc = 0.0;
        for (i, a) in weights(self.xs, x) {
            for (j, b) in weights(self.ss, s) {
                for (l, c) in weights(self.ds, d) {
                    acc += a * b * c * self.at(i, j, l);
                }
            }
        }
        acc
    }
}

fn drift(model: &ModelSpec, s: f64, d: f64, nu: f64) -> (f64, f64) {
    match model.family {
        Family::MeanReverting {
            kappa_b,
            kappa_delta,
            s_bar,
            delta_bar,
        } => (
            kappa_b * (s_bar - s - model.mu_b * nu),
            kappa_delta * (delta_bar - d + model.mu_delta * nu),
        ),
        Family::GeometricLevy => (-model.mu_b * nu * s, model.mu_delta * nu * d),
        Family::Custom(_) => unreachable!(),
    }
}

/// Post-jump `(s, d)` for the bid-up, bid-down, spread-up and spread-down
/// channels in that order.
fn destination(model: &ModelSpec, channel: usize, s: f64, d: f64, z: f64) -> (f64, f64) {
    let geometric = matches!(model.family, Family::GeometricLevy);
    match (channel, geometric) {
        (0, false) => (s + z, d - z),
        (1, false) => (s - z, d + z),
        (2, false) => (s, d + z),
        (3, false) => (s, d - z),
        (0, true) => (s * (1.0 + z), d * (1.0 - z)),
        (1, true) => (s * (1.0 - z), d * (1.0 + z)),
        (2, true) => (s, d * (1.0 + z)),
        (3, true) => (s, d * (1.0 - z)),
        _ => unreachable!(),
    }
}

pub struct Enumerated {
    pub u: Vec<f64>,
    pub nu: Vec<f64>,
    pub eta: Vec<f64>,
}

/// `u(t) = max over (nu, eta) in {0, N} x {0, min(N, x)} of
/// u(t + dt) + dt * [one-step generator]`, ties to the smallest controls.
pub fn enumerate(model: &ModelSpec, obj: &ObjectiveSpec, grid: &GridSpec, dt: f64) -> Enumerated {
    let (xs, ss, ds) = (grid.x.nodes(), grid.s.nodes(), grid.d.nodes());
    let mut terminal = Vec::new();
    for &x in xs {
        for &s in ss {
            for _ in ds {
                terminal.push((s - obj.alpha * x) * x);
            }
        }
    }
    let next = Slice { xs, ss, ds, u: terminal };
    let price = [&model.bid_up, &model.bid_down, &model.spread_up, &model.spread_down];
    let dark_rule = mark_rule(&model.dark_fill.marks);

    let mut out = Enumerated {
        u: Vec::new(),
        nu: Vec::new(),
        eta: Vec::new(),
    };
    for (i, &x) in xs.iter().enumerate() {
        for (j, &s) in ss.iter().enumerate() {
            for (l, &d) in ds.iter().enumerate() {
                let here = next.at(i, j, l);
                if i == 0 {
                    out.u.push(here);
                    out.nu.push(0.0);
                    out.eta.push(0.0);
                    continue;
                }
                let u_x = (here - next.at(i - 1, j, l)) / (x - xs[i - 1]);
                let s_fwd = if j + 1 < ss.len() { (next.at(i, j + 1, l) - here) / (ss[j + 1] - s) } else { 0.0 };
                let s_bwd = if j > 0 { (here - next.at(i, j - 1, l)) / (s - ss[j - 1]) } else { 0.0 };
                let d_fwd = if l + 1 < ds.len() { (next.at(i, j, l + 1) - here) / (ds[l + 1] - d) } else { 0.0 };
                let d_bwd = if l > 0 { (here - next.at(i, j, l - 1)) / (d - ds[l - 1]) } else { 0.0 };

                let mut jumps = 0.0;
                for (c, spec) in price.iter().enumerate() {
                    if spec.intensity > 0.0 {
                        let mut e = 0.0;
                        for (z, p) in mark_rule(&spec.marks) {
                            let (s1, d1) = destination(model, c, s, d, z);
                            e += p * next.interp(x, s1, d1);
                        }
                        jumps += spec.intensity * (e - here);
                    }
                }
                let mid = s + 0.5 * d;
                let post_cap = model.control_cap.min(x);

                let mut best: Option<(f64, f64, f64)> = None;
                for nu in [0.0, model.control_cap] {
                    for eta in [0.0, post_cap] {
                        let (ds_dt, dd_dt) = drift(model, s, d, nu);
                        let lit = nu * (s - model.beta * nu) - nu * u_x
                            + ds_dt * if ds_dt >= 0.0 { s_fwd } else { s_bwd }
                            + dd_dt * if dd_dt >= 0.0 { d_fwd } else { d_bwd };
                        let dark = if model.dark_fill.intensity > 0.0 {
                            let mut e = 0.0;
                            for &(z, p) in &dark_rule {
                                e += p * (next.interp(x - eta * z, s, d) + eta * z * mid);
                            }
                            model.dark_fill.intensity * (e - here)
                        } else {
                            0.0
                        };
                        let value = here + dt * (-obj.gamma * x * x + lit + jumps + dark);
                        if best.map_or(true, |b| value > b.0) {
                            best = Some((value, nu, eta));
                        }
                    }
                }
                let (value, nu, eta) = best.unwrap();
                out.u.push(value);
                out.nu.push(nu);
                out.eta.push(eta);
            }
        }
    }
    out
}
