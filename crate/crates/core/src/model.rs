//! State, controls and the price/spread model families.
//!
//! Two concrete families are provided:
//!
//! * **Mean-reverting**: additive jumps, drift `kappa_b (s_bar - s_b - mu_b nu)`
//!   for the bid and `kappa_delta (delta_bar - delta + mu_delta nu)` for the
//!   spread.
//! * **Geometric Lévy**: multiplicative jumps, drift `-mu_b nu s_b` and
//!   `+mu_delta nu delta`.
//!
//! In both, a bid jump moves the spread by the opposite amount so that the
//! best ask is untouched, inventory decreases at rate `nu`, and lit sales earn
//! `nu (s_b - beta nu)` per second. Dark-pool fills execute a fraction of the
//! posted quantity at the mid-price.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_legendre_8;

const PROBABILITY_TOL: f64 = 1e-12;
const SUPPORT_TOL: f64 = 1e-12;

/// Point in the state space `(t, x, s_b, delta, w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketState {
    /// Time in seconds.
    pub t: f64,
    /// Remaining inventory in shares.
    pub x: f64,
    /// Best bid.
    pub s_b: f64,
    /// Bid-ask spread.
    pub delta: f64,
    /// Cash.
    pub w: f64,
}

impl MarketState {
    pub fn new(t: f64, x: f64, s_b: f64, delta: f64, w: f64) -> Self {
        Self {
            t,
            x,
            s_b,
            delta,
            w,
        }
    }

    pub fn mid(&self) -> f64 {
        mid_price(self)
    }

    pub fn ask(&self) -> f64 {
        self.s_b + self.delta
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.x.is_finite()
            && self.s_b.is_finite()
            && self.delta.is_finite()
            && self.w.is_finite()
    }

    /// Checks the state against the model's horizon and inventory cap.
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::NonFinite("market state"));
        }
        if !(0.0..=model.horizon).contains(&self.t) {
            return Err(invalid("t", "outside [0, T]"));
        }
        if !(0.0..=model.inventory_cap).contains(&self.x) {
            return Err(invalid("x", "outside [0, X]"));
        }
        if self.s_b < 0.0 {
            return Err(invalid("s_b", "negative best bid"));
        }
        if self.delta < 0.0 {
            return Err(invalid("delta", "negative spread"));
        }
        Ok(())
    }
}

/// Dark-pool execution price: bid plus half the spread.
pub fn mid_price(state: &MarketState) -> f64 {
    state.s_b + 0.5 * state.delta
}

/// Lit selling rate and dark-pool posting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlPair {
    /// Lit-pool selling rate, shares per second.
    pub nu: f64,
    /// Quantity posted in the dark pool, shares.
    pub eta: f64,
}

impl ControlPair {
    pub const ZERO: ControlPair = ControlPair { nu: 0.0, eta: 0.0 };

    pub fn new(nu: f64, eta: f64) -> Self {
        Self { nu, eta }
    }

    /// Projects onto the feasible box `[0, N] x [0, min(N, x)]`; nothing is
    /// traded once the inventory is gone.
    pub fn capped(self, control_cap: f64, inventory: f64) -> Self {
        if inventory <= 0.0 {
            return Self::ZERO;
        }
        let nu = if self.nu.is_nan() { 0.0 } else { self.nu };
        let eta = if self.eta.is_nan() { 0.0 } else { self.eta };
        Self {
            nu: nu.clamp(0.0, control_cap),
            eta: eta.clamp(0.0, control_cap.min(inventory)),
        }
    }
}

/// Distribution of jump marks; always bounded.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkDistribution {
    Uniform { lo: f64, hi: f64 },
    PointMass(f64),
    /// `(value, probability)` pairs.
    Discrete(Vec<(f64, f64)>),
}

impl MarkDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            MarkDistribution::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::NonFinite("uniform mark bounds"));
                }
                if *lo < 0.0 || lo > hi {
                    return Err(invalid("marks", "uniform bounds must satisfy 0 <= a <= b"));
                }
            }
            MarkDistribution::PointMass(c) => {
                if !c.is_finite() {
                    return Err(Error::NonFinite("point-mass mark"));
                }
            }
            MarkDistribution::Discrete(atoms) => {
                if atoms.is_empty() {
                    return Err(invalid("marks", "discrete distribution has no atoms"));
                }
                let mut total = 0.0;
                for &(v, p) in atoms {
                    if !v.is_finite() || !p.is_finite() {
                        return Err(Error::NonFinite("discrete mark"));
                    }
                    if p < 0.0 {
                        return Err(invalid("marks", "negative probability"));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > PROBABILITY_TOL {
                    return Err(invalid("marks", "probabilities do not sum to one"));
                }
            }
        }
        Ok(())
    }

    /// Smallest and largest possible mark.
    pub fn support(&self) -> (f64, f64) {
        match self {
            MarkDistribution::Uniform { lo, hi } => (*lo, *hi),
            MarkDistribution::PointMass(c) => (*c, *c),
            MarkDistribution::Discrete(atoms) => atoms
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(v, _)| {
                    (lo.min(v), hi.max(v))
                }),
        }
    }

    pub fn contains(&self, mark: f64) -> bool {
        match self {
            MarkDistribution::Discrete(atoms) => atoms
                .iter()
                .any(|&(v, p)| p > 0.0 && (v - mark).abs() <= SUPPORT_TOL),
            _ => {
                let (lo, hi) = self.support();
                mark >= lo - SUPPORT_TOL && mark <= hi + SUPPORT_TOL
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            MarkDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            MarkDistribution::PointMass(c) => *c,
            MarkDistribution::Discrete(atoms) => atoms.iter().map(|&(v, p)| v * p).sum(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            MarkDistribution::Uniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
            MarkDistribution::PointMass(c) => c * c,
            MarkDistribution::Discrete(atoms) => atoms.iter().map(|&(v, p)| v * v * p).sum(),
        }
    }

    /// Quadrature `(mark, weight)` pairs for expectations over the marks:
    /// 8-point Gauss–Legendre for a uniform law, exact atoms otherwise.
    pub fn quadrature(&self) -> Vec<(f64, f64)> {
        match self {
            MarkDistribution::Uniform { lo, hi } if hi > lo => {
                gauss_legendre_8(*lo, *hi).to_vec()
            }
            MarkDistribution::Uniform { lo, .. } => alloc::vec![(*lo, 1.0)],
            MarkDistribution::PointMass(c) => alloc::vec![(*c, 1.0)],
            MarkDistribution::Discrete(atoms) => {
                atoms.iter().copied().filter(|&(_, p)| p > 0.0).collect()
            }
        }
    }

    /// Inverse-CDF draw from a uniform variate `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> f64 {
        match self {
            MarkDistribution::Uniform { lo, hi } => lo + (hi - lo) * u,
            MarkDistribution::PointMass(c) => *c,
            MarkDistribution::Discrete(atoms) => {
                let mut acc = 0.0;
                for &(v, p) in atoms {
                    acc += p;
                    if u < acc {
                        return v;
                    }
                }
                atoms.iter().rev().find(|a| a.1 > 0.0).map_or(0.0, |a| a.0)
            }
        }
    }
}

/// Compound Poisson jump source: intensity plus mark law.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpec {
    /// Events per second.
    pub intensity: f64,
    pub marks: MarkDistribution,
}

impl JumpSpec {
    pub fn new(intensity: f64, marks: MarkDistribution) -> Self {
        Self { intensity, marks }
    }

    pub fn uniform(intensity: f64, lo: f64, hi: f64) -> Self {
        Self::new(intensity, MarkDistribution::Uniform { lo, hi })
    }

    /// A channel that never fires.
    pub fn off() -> Self {
        Self::new(0.0, MarkDistribution::PointMass(0.0))
    }

    pub fn is_active(&self) -> bool {
        self.intensity > 0.0
    }

    /// `lambda * E[mark]`.
    pub fn mean_rate(&self) -> f64 {
        self.intensity * self.marks.mean()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.intensity.is_finite() {
            return Err(Error::NonFinite("jump intensity"));
        }
        if self.intensity < 0.0 {
            return Err(invalid("intensity", "negative jump intensity"));
        }
        self.marks.validate()
    }
}

/// The five jump channels: two bid processes, two spread processes and the
/// dark-pool fill process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    /// Limit buy orders improving the bid: bid up, spread down.
    BidUp,
    /// Market sells walking the book or cancellations: bid down, spread up.
    BidDown,
    SpreadUp,
    SpreadDown,
    DarkFill,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::BidUp,
        Channel::BidDown,
        Channel::SpreadUp,
        Channel::SpreadDown,
        Channel::DarkFill,
    ];

    pub const PRICE: [Channel; 4] = [
        Channel::BidUp,
        Channel::BidDown,
        Channel::SpreadUp,
        Channel::SpreadDown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::BidUp => "bid_up",
            Channel::BidDown => "bid_down",
            Channel::SpreadUp => "spread_up",
            Channel::SpreadDown => "spread_down",
            Channel::DarkFill => "dark_fill",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bid and spread drift, affine in the lit rate:
/// `ds_b/dt = s_const + s_per_nu * nu`, `ddelta/dt = d_const + d_per_nu * nu`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriftCoefficients {
    pub s_const: f64,
    pub s_per_nu: f64,
    pub d_const: f64,
    pub d_per_nu: f64,
}

impl DriftCoefficients {
    pub fn bid(&self, nu: f64) -> f64 {
        self.s_const + self.s_per_nu * nu
    }

    pub fn spread(&self, nu: f64) -> f64 {
        self.d_const + self.d_per_nu * nu
    }
}

/// User-supplied bid/spread dynamics. Jumps are finite-activity with the
/// bounded marks of the model's [`JumpSpec`]s; the drift must be affine in
/// the lit rate so the solver can maximise the Hamiltonian in closed form.
pub trait CustomDynamics: fmt::Debug + Send + Sync {
    fn drift(&self, s_b: f64, delta: f64) -> DriftCoefficients;

    /// Post-jump `(s_b, delta)` for one of the four price channels.
    fn jump(&self, channel: Channel, s_b: f64, delta: f64, mark: f64) -> (f64, f64);
}

#[derive(Debug, Clone)]
pub enum Family {
    MeanReverting {
        /// Bid mean-reversion speed, 1/s.
        kappa_b: f64,
        /// Spread mean-reversion speed, 1/s.
        kappa_delta: f64,
        /// Long-run bid level.
        s_bar: f64,
        /// Long-run spread level.
        delta_bar: f64,
    },
    GeometricLevy,
    Custom(Arc<dyn CustomDynamics>),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::MeanReverting { .. } => "mean_reverting",
            Family::GeometricLevy => "geometric_levy",
            Family::Custom(_) => "custom",
        }
    }
}

/// Instantaneous rates of change of `(s_b, delta, x, w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRates {
    pub ds_b: f64,
    pub ddelta: f64,
    pub dx: f64,
    pub dw: f64,
}

/// Post-jump state, flagged when the bid or spread had to be clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpOutcome {
    pub state: MarketState,
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub family: Family,
    /// Permanent impact of lit trading on the bid.
    pub mu_b: f64,
    /// Permanent impact of lit trading on the spread.
    pub mu_delta: f64,
    /// Temporary impact slope: sales execute at `s_b - beta nu`.
    pub beta: f64,
    pub bid_up: JumpSpec,
    pub bid_down: JumpSpec,
    pub spread_up: JumpSpec,
    pub spread_down: JumpSpec,
    /// Dark-pool fills; marks are executed fractions in [0, 1].
    pub dark_fill: JumpSpec,
    /// Trading horizon T in seconds.
    pub horizon: f64,
    /// Inventory cap X.
    pub inventory_cap: f64,
    /// Control cap N for both the lit rate and the posting.
    pub control_cap: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("mu_b", self.mu_b),
            ("mu_delta", self.mu_delta),
            ("beta", self.beta),
            ("horizon", self.horizon),
            ("inventory_cap", self.inventory_cap),
            ("control_cap", self.control_cap),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        if self.beta < 0.0 {
            return Err(invalid("beta", "must be >= 0"));
        }
        if self.horizon <= 0.0 {
            return Err(invalid("horizon", "must be > 0"));
        }
        if self.inventory_cap < 0.0 {
            return Err(invalid("inventory_cap", "must be >= 0"));
        }
        if self.control_cap < 0.0 {
            return Err(invalid("control_cap", "must be >= 0"));
        }
        if let Family::MeanReverting {
            kappa_b,
            kappa_delta,
            s_bar,
            delta_bar,
        } = self.family
        {
            for (name, v) in [
                ("kappa_b", kappa_b),
                ("kappa_delta", kappa_delta),
                ("s_bar", s_bar),
                ("delta_bar", delta_bar),
            ] {
                if !v.is_finite() {
                    return Err(Error::NonFinite(name));
                }
                if v < 0.0 {
                    return Err(invalid(name, "must be >= 0"));
                }
            }
        }
        for channel in Channel::ALL {
            let spec = self.jumps(channel);
            spec.validate()?;
            let (lo, hi) = spec.marks.support();
            if lo < 0.0 {
                return Err(invalid("marks", "jump marks must be non-negative"));
            }
            let needs_unit = matches!(channel, Channel::DarkFill)
                || matches!(self.family, Family::GeometricLevy);
            if needs_unit && hi > 1.0 {
                return Err(invalid(
                    "marks",
                    "dark-fill fractions and geometric relative jumps must lie in [0, 1]",
                ));
            }
        }
        Ok(())
    }

    pub fn jumps(&self, channel: Channel) -> &JumpSpec {
        match channel {
            Channel::BidUp => &self.bid_up,
            Channel::BidDown => &self.bid_down,
            Channel::SpreadUp => &self.spread_up,
            Channel::SpreadDown => &self.spread_down,
            Channel::DarkFill => &self.dark_fill,
        }
    }

    /// Total intensity of the four price channels.
    pub fn price_jump_intensity(&self) -> f64 {
        Channel::PRICE
            .iter()
            .map(|&c| self.jumps(c).intensity)
            .sum()
    }

    /// Drift of bid and spread at `(s_b, delta)` as an affine function of `nu`.
    pub fn drift_coefficients(&self, s_b: f64, delta: f64) -> DriftCoefficients {
        match &self.family {
            Family::MeanReverting {
                kappa_b,
                kappa_delta,
                s_bar,
                delta_bar,
            } => DriftCoefficients {
                s_const: kappa_b * (s_bar - s_b),
                s_per_nu: -kappa_b * self.mu_b,
                d_const: kappa_delta * (delta_bar - delta),
                d_per_nu: kappa_delta * self.mu_delta,
            },
            Family::GeometricLevy => DriftCoefficients {
                s_const: 0.0,
                s_per_nu: -self.mu_b * s_b,
                d_const: 0.0,
                d_per_nu: self.mu_delta * delta,
            },
            Family::Custom(dynamics) => dynamics.drift(s_b, delta),
        }
    }

    /// Rates of change of `(s_b, delta, x, w)` under `control`.
    pub fn drift(&self, state: &MarketState, control: ControlPair) -> Result<StateRates> {
        if !state.is_finite() || !control.nu.is_finite() || !control.eta.is_finite() {
            return Err(Error::NonFinite("drift input"));
        }
        let nu = control.nu;
        let c = self.drift_coefficients(state.s_b, state.delta);
        Ok(StateRates {
            ds_b: c.bid(nu),
            ddelta: c.spread(nu),
            dx: -nu,
            dw: nu * (state.s_b - self.beta * nu),
        })
    }

    /// Raw post-jump `(s_b, delta)` for a price channel, before clamping.
    pub fn price_jump(&self, channel: Channel, s_b: f64, delta: f64, mark: f64) -> (f64, f64) {
        match &self.family {
            Family::MeanReverting { .. } => match channel {
                Channel::BidUp => (s_b + mark, delta - mark),
                Channel::BidDown => (s_b - mark, delta + mark),
                Channel::SpreadUp => (s_b, delta + mark),
                Channel::SpreadDown => (s_b, delta - mark),
                Channel::DarkFill => (s_b, delta),
            },
            Family::GeometricLevy => match channel {
                Channel::BidUp => (s_b * (1.0 + mark), delta * (1.0 - mark)),
                Channel::BidDown => (s_b * (1.0 - mark), delta * (1.0 + mark)),
                Channel::SpreadUp => (s_b, delta * (1.0 + mark)),
                Channel::SpreadDown => (s_b, delta * (1.0 - mark)),
                Channel::DarkFill => (s_b, delta),
            },
            Family::Custom(dynamics) => match channel {
                Channel::DarkFill => (s_b, delta),
                _ => dynamics.jump(channel, s_b, delta, mark),
            },
        }
    }

    /// State right after a jump of `channel` with the given mark. Dark fills
    /// need the posting in force just before the event. Negative bids or
    /// spreads are clamped at zero and reported.
    pub fn jump_map(
        &self,
        state: &MarketState,
        channel: Channel,
        mark: f64,
        posting: Option<f64>,
    ) -> Result<JumpOutcome> {
        if !mark.is_finite() || !state.is_finite() {
            return Err(Error::NonFinite("jump input"));
        }
        if !self.jumps(channel).marks.contains(mark) {
            return Err(Error::MarkOutOfSupport { channel, mark });
        }
        let mut next = *state;
        if channel == Channel::DarkFill {
            let eta = posting.ok_or(Error::MissingPosting)?;
            if !eta.is_finite() {
                return Err(Error::NonFinite("posting"));
            }
            let executed = eta * mark;
            next.x = (state.x - executed).max(0.0);
            next.w = state.w + executed * mid_price(state);
            return Ok(JumpOutcome {
                state: next,
                clamped: false,
            });
        }
        let (s_b, delta) = self.price_jump(channel, state.s_b, state.delta, mark);
        let clamped = s_b < 0.0 || delta < 0.0;
        next.s_b = s_b.max(0.0);
        next.delta = delta.max(0.0);
        Ok(JumpOutcome {
            state: next,
            clamped,
        })
    }

    /// Expected instantaneous bid drift with no trading, jumps included.
    pub fn expected_bid_drift(&self, s_b: f64, delta: f64) -> f64 {
        let jump_drift = match &self.family {
            Family::MeanReverting { .. } => self.bid_up.mean_rate() - self.bid_down.mean_rate(),
            Family::GeometricLevy => s_b * (self.bid_up.mean_rate() - self.bid_down.mean_rate()),
            Family::Custom(dynamics) => {
                let mut drift = 0.0;
                for channel in [Channel::BidUp, Channel::BidDown] {
                    let spec = self.jumps(channel);
                    if !spec.is_active() {
                        continue;
                    }
                    let mean: f64 = spec
                        .marks
                        .quadrature()
                        .iter()
                        .map(|&(z, w)| w * (dynamics.jump(channel, s_b, delta, z).0 - s_b))
                        .sum();
                    drift += spec.intensity * mean;
                }
                drift
            }
        };
        self.drift_coefficients(s_b, delta).bid(0.0) + jump_drift
    }
}

/// Objective: maximise `E[W(T) + (S_b(T) - alpha X(T)) X(T) - gamma int X^2]`,
/// discounted at rate `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    /// Running inventory penalty (risk aversion).
    pub gamma: f64,
    /// Terminal inventory penalty.
    pub alpha: f64,
    /// Discount rate.
    pub r: f64,
}

impl ObjectiveSpec {
    pub fn new(gamma: f64, alpha: f64) -> Self {
        Self {
            gamma,
            alpha,
            r: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("alpha", self.alpha), ("r", self.r)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        if self.gamma < 0.0 {
            return Err(invalid("gamma", "must be >= 0"));
        }
        if self.alpha <= 0.0 {
            return Err(invalid("alpha", "must be > 0"));
        }
        if self.r < 0.0 {
            return Err(invalid("r", "must be >= 0"));
        }
        Ok(())
    }

    /// `w + (s_b - alpha x) x`.
    pub fn terminal_reward(&self, state: &MarketState) -> f64 {
        state.w + self.terminal_inventory_value(state.x, state.s_b)
    }

    /// Terminal reward without the cash term.
    pub fn terminal_inventory_value(&self, x: f64, s_b: f64) -> f64 {
        (s_b - self.alpha * x) * x
    }

    /// `-gamma x^2`, per second.
    pub fn running_reward(&self, state: &MarketState) -> f64 {
        -self.gamma * state.x * state.x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mr_fig5() -> ModelSpec {
        ModelSpec {
            family: Family::MeanReverting {
                kappa_b: 0.02,
                kappa_delta: 0.02,
                s_bar: 40.0,
                delta_bar: 0.1,
            },
            mu_b: 0.01,
            mu_delta: 0.01,
            beta: 1e-5,
            bid_up: JumpSpec::uniform(0.2, 0.0, 0.1),
            bid_down: JumpSpec::uniform(0.2, 0.0, 0.1),
            spread_up: JumpSpec::uniform(0.2, 0.0, 0.1),
            spread_down: JumpSpec::uniform(0.2, 0.0, 0.1),
            dark_fill: JumpSpec::uniform(0.1, 0.0, 1.0),
            horizon: 60.0,
            inventory_cap: 30_000.0,
            control_cap: 5_000.0,
        }
    }

    fn geometric() -> ModelSpec {
        ModelSpec {
            family: Family::GeometricLevy,
            mu_b: 1e-4,
            mu_delta: 1e-4,
            ..mr_fig5()
        }
    }

    fn state(x: f64, s_b: f64, delta: f64, w: f64) -> MarketState {
        MarketState::new(0.0, x, s_b, delta, w)
    }

    #[test]
    fn mid_price_examples() {
        assert!((mid_price(&state(0.0, 40.0, 0.2, 0.0)) - 40.1).abs() < 1e-12);
        assert_eq!(mid_price(&state(0.0, 40.0, 0.0, 0.0)), 40.0);
        assert!((mid_price(&state(0.0, 40.0, 0.1, 0.0)) - 40.05).abs() < 1e-12);
    }

    #[test]
    fn mean_reverting_drift_examples() {
        let m = mr_fig5();
        let st = state(1000.0, 40.0, 0.1, 0.0);
        let rest = m.drift(&st, ControlPair::ZERO).unwrap();
        assert_eq!(rest.ds_b, 0.0);
        let selling = m.drift(&st, ControlPair::new(100.0, 0.0)).unwrap();
        assert!((selling.ds_b + 0.02).abs() < 1e-15);
        assert_eq!(selling.dx, -100.0);
    }

    #[test]
    fn geometric_drift_and_cash_rate() {
        let m = geometric();
        let st = state(1000.0, 40.0, 0.1, 0.0);
        let r = m.drift(&st, ControlPair::new(1000.0, 0.0)).unwrap();
        assert!((r.ds_b + 4.0).abs() < 1e-12);
        assert!((r.dw - 39_990.0).abs() < 1e-9);
        assert!((r.ddelta - 1e-4 * 1000.0 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn drift_rejects_non_finite() {
        let m = mr_fig5();
        let st = state(1.0, f64::NAN, 0.1, 0.0);
        assert!(matches!(
            m.drift(&st, ControlPair::ZERO),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn jump_map_examples() {
        let mr = mr_fig5();
        let st = state(30_000.0, 40.0, 0.2, 0.0);
        let up = mr.jump_map(&st, Channel::BidUp, 0.05, None).unwrap().state;
        assert!((up.s_b - 40.05).abs() < 1e-12 && (up.delta - 0.15).abs() < 1e-12);

        let geo = geometric();
        let down = geo.jump_map(&st, Channel::BidDown, 0.1, None).unwrap().state;
        assert!((down.s_b - 36.0).abs() < 1e-12 && (down.delta - 0.22).abs() < 1e-12);

        let st = state(30_000.0, 40.0, 0.1, 0.0);
        let fill = mr.jump_map(&st, Channel::DarkFill, 1.0, Some(1000.0)).unwrap().state;
        assert_eq!(fill.x, 29_000.0);
        assert!((fill.w - 1000.0 * 40.05).abs() < 1e-9);

        let none = mr.jump_map(&st, Channel::DarkFill, 0.0, Some(1000.0)).unwrap();
        assert_eq!(none.state, st);
    }

    #[test]
    fn jump_map_errors() {
        let m = mr_fig5();
        let st = state(10.0, 40.0, 0.2, 0.0);
        assert!(matches!(
            m.jump_map(&st, Channel::BidUp, 0.5, None),
            Err(Error::MarkOutOfSupport { .. })
        ));
        assert_eq!(
            m.jump_map(&st, Channel::DarkFill, 0.5, None),
            Err(Error::MissingPosting)
        );
    }

    #[test]
    fn mean_reverting_jump_clamps_at_zero() {
        let m = mr_fig5();
        let st = state(10.0, 40.0, 0.03, 0.0);
        let out = m.jump_map(&st, Channel::SpreadDown, 0.05, None).unwrap();
        assert!(out.clamped);
        assert_eq!(out.state.delta, 0.0);
    }

    #[test]
    fn terminal_and_running_rewards() {
        let obj = ObjectiveSpec::new(0.0, 2.0);
        assert_eq!(obj.terminal_reward(&state(0.0, 40.0, 0.1, 0.0)), 0.0);
        assert_eq!(obj.terminal_reward(&state(1.0, 40.0, 0.1, 100.0)), 138.0);
        let obj6 = ObjectiveSpec::new(0.0, 6.0);
        assert_eq!(
            obj6.terminal_reward(&state(30_000.0, 40.0, 0.1, 0.0)),
            (40.0 - 180_000.0) * 30_000.0
        );
        assert_eq!(obj.running_reward(&state(123.0, 40.0, 0.1, 0.0)), 0.0);
        let g = ObjectiveSpec::new(0.01, 2.0);
        assert!((g.running_reward(&state(10.0, 40.0, 0.1, 0.0)) + 1.0).abs() < 1e-12);
        let g = ObjectiveSpec::new(1e-4, 2.0);
        assert!((g.running_reward(&state(30_000.0, 40.0, 0.1, 0.0)) + 90_000.0).abs() < 1e-6);
    }

    #[test]
    fn objective_validation() {
        assert!(ObjectiveSpec::new(0.0, 0.0).validate().is_err());
        assert!(ObjectiveSpec::new(-1.0, 1.0).validate().is_err());
        assert!(ObjectiveSpec { r: -0.1, ..ObjectiveSpec::new(0.0, 1.0) }
            .validate()
            .is_err());
        assert!(ObjectiveSpec::new(0.0, 2.0).validate().is_ok());
    }

    #[test]
    fn discrete_marks_must_sum_to_one() {
        let bad = MarkDistribution::Discrete(alloc::vec![(0.1, 0.5), (0.2, 0.4)]);
        assert!(bad.validate().is_err());
        let good = MarkDistribution::Discrete(alloc::vec![(0.1, 0.5), (0.2, 0.5)]);
        assert!(good.validate().is_ok());
        assert!((good.mean() - 0.15).abs() < 1e-15);
        assert_eq!(good.sample(0.2), 0.1);
        assert_eq!(good.sample(0.7), 0.2);
    }

    #[test]
    fn geometric_requires_unit_marks() {
        let mut m = geometric();
        m.bid_down = JumpSpec::uniform(0.2, 0.0, 1.5);
        assert!(m.validate().is_err());
    }

    #[test]
    fn control_cap_projects_into_box() {
        let c = ControlPair::new(7000.0, 9000.0).capped(5000.0, 800.0);
        assert_eq!(c, ControlPair::new(5000.0, 800.0));
        assert_eq!(ControlPair::new(1.0, 1.0).capped(5000.0, 0.0), ControlPair::ZERO);
    }
}
