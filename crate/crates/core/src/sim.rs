//! Exact-event Monte Carlo simulation of `(S_b, delta, X, W)` under a policy.
//!
//! Each of the five jump channels has its own exponential clock and its own
//! random stream, so event times are exact. Between events the drift is
//! integrated with explicit steps no longer than `dt_max`, holding the
//! control fixed over each step. A path stops when the inventory is
//! exhausted or at the horizon.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::model::{Channel, ControlPair, Family, MarketState, ModelSpec};
use crate::rng::Stream;

/// Feedback control `(t, state) -> (nu, eta)`.
pub trait Policy: Sync {
    fn control(&self, t: f64, state: &MarketState) -> ControlPair;
}

impl<F> Policy for F
where
    F: Fn(f64, &MarketState) -> ControlPair + Sync,
{
    fn control(&self, t: f64, state: &MarketState) -> ControlPair {
        self(t, state)
    }
}

/// The same controls everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub ControlPair);

impl Policy for ConstantPolicy {
    fn control(&self, _t: f64, _state: &MarketState) -> ControlPair {
        self.0
    }
}

/// A dark-pool fill at a prescribed time with a prescribed executed fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcedFill {
    pub time: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Longest explicit drift step, seconds.
    pub dt_max: f64,
    pub seed: u64,
    /// Sampling interval of the recorded path, seconds.
    pub record_every: f64,
    /// Replaces the random dark-fill clock and marks when non-empty.
    pub forced_fills: Vec<ForcedFill>,
    /// Keep every integration step in [`PathRecord::steps`].
    pub trace: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, dt_max: f64, seed: u64, record_every: f64) -> Self {
        Self {
            n_paths,
            dt_max,
            seed,
            record_every,
            forced_fills: Vec::new(),
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(invalid("n_paths", "must be >= 1"));
        }
        if !self.dt_max.is_finite() || self.dt_max <= 0.0 {
            return Err(invalid("dt_max", "must be finite and > 0"));
        }
        if !self.record_every.is_finite() || self.record_every < self.dt_max {
            return Err(invalid("record_every", "must be finite and >= dt_max"));
        }
        for f in &self.forced_fills {
            if !f.time.is_finite() || !(0.0..=1.0).contains(&f.fraction) {
                return Err(invalid("forced_fills", "times must be finite, fractions in [0, 1]"));
            }
        }
        if self.forced_fills.windows(2).any(|p| p[1].time <= p[0].time) {
            return Err(invalid("forced_fills", "times must be strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fill {
    pub time: f64,
    /// Posting in force just before the fill.
    pub eta: f64,
    /// Executed fraction of the posting.
    pub fraction: f64,
    /// Execution price.
    pub mid: f64,
}

impl Fill {
    pub fn executed(&self) -> f64 {
        self.eta * self.fraction
    }
}

/// One explicit drift step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub t: f64,
    pub dt: f64,
    pub s_b: f64,
    pub control: ControlPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// Sample times: multiples of `record_every`, plus the stopping time.
    pub times: Vec<f64>,
    pub states: Vec<MarketState>,
    /// Controls in force from each sample time on.
    pub controls: Vec<ControlPair>,
    pub fills: Vec<Fill>,
    /// Jumps whose bid or spread had to be clamped at zero.
    pub clamp_events: u64,
    /// Events per channel over the life of the path, in [`Channel::ALL`] order.
    pub event_counts: [u64; 5],
    /// `int_0^tau X(u)^2 du`.
    pub inventory_sq_integral: f64,
    /// First time the inventory hit zero, if it did.
    pub stopped_at: Option<f64>,
    /// Every drift step, when tracing was requested.
    pub steps: Vec<Step>,
}

impl PathRecord {
    pub fn final_state(&self) -> &MarketState {
        self.states.last().expect("a path has at least one sample")
    }

    /// State recorded at time `t`, if `t` is a sample time.
    pub fn sample_at(&self, t: f64) -> Option<&MarketState> {
        let tol = 1e-9 * (1.0 + t.abs());
        self.times
            .iter()
            .position(|&u| (u - t).abs() <= tol)
            .map(|k| &self.states[k])
    }
}

/// Simulates `config.n_paths` independent paths from `start`.
pub fn simulate_paths(
    model: &ModelSpec,
    policy: &dyn Policy,
    start: MarketState,
    config: &SimConfig,
) -> Result<Vec<PathRecord>> {
    model.validate()?;
    config.validate()?;
    start.validate(model)?;
    let run = |path: usize| simulate_path(model, policy, start, config, path);
    #[cfg(feature = "parallel")]
    let out: Vec<Result<PathRecord>> = {
        use rayon::prelude::*;
        (0..config.n_paths).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Vec<Result<PathRecord>> = (0..config.n_paths).map(run).collect();
    out.into_iter().collect()
}

struct Clocks {
    streams: [Stream; 5],
    next: [f64; 5],
    forced: usize,
}

impl Clocks {
    fn new(model: &ModelSpec, config: &SimConfig, path: usize, start: f64) -> Self {
        let mut streams: [Stream; 5] =
            core::array::from_fn(|c| Stream::new(config.seed, path as u64, c as u64));
        let mut next = [f64::INFINITY; 5];
        for c in Channel::ALL {
            next[c.index()] = start + streams[c.index()].exponential(model.jumps(c).intensity);
        }
        let mut clocks = Self {
            streams,
            next,
            forced: 0,
        };
        if !config.forced_fills.is_empty() {
            clocks.forced = config.forced_fills.partition_point(|f| f.time <= start);
            clocks.next[Channel::DarkFill.index()] = config
                .forced_fills
                .get(clocks.forced)
                .map_or(f64::INFINITY, |f| f.time);
        }
        clocks
    }

    fn earliest(&self) -> (Channel, f64) {
        let mut best = (Channel::BidUp, self.next[0]);
        for c in Channel::ALL {
            if self.next[c.index()] < best.1 {
                best = (c, self.next[c.index()]);
            }
        }
        best
    }

    /// Draws the mark of an event on `channel` and schedules its next event.
    fn fire(&mut self, model: &ModelSpec, config: &SimConfig, channel: Channel) -> f64 {
        let idx = channel.index();
        if channel == Channel::DarkFill && !config.forced_fills.is_empty() {
            let mark = config.forced_fills[self.forced].fraction;
            self.forced += 1;
            self.next[idx] = config
                .forced_fills
                .get(self.forced)
                .map_or(f64::INFINITY, |f| f.time);
            return mark;
        }
        let spec = model.jumps(channel);
        let mark = spec.marks.sample(self.streams[idx].uniform());
        self.next[idx] += self.streams[idx].exponential(spec.intensity);
        mark
    }
}

fn simulate_path(
    model: &ModelSpec,
    policy: &dyn Policy,
    start: MarketState,
    config: &SimConfig,
    path: usize,
) -> Result<PathRecord> {
    let horizon = model.horizon;
    let clamp_zero = matches!(model.family, Family::MeanReverting { .. });
    let mut clocks = Clocks::new(model, config, path, start.t);
    let mut state = start;
    let mut control = policy.control(state.t, &state).capped(model.control_cap, state.x);
    let mut rec = PathRecord {
        times: vec![state.t],
        states: vec![state],
        controls: vec![control],
        fills: Vec::new(),
        clamp_events: 0,
        event_counts: [0; 5],
        inventory_sq_integral: 0.0,
        stopped_at: None,
        steps: Vec::new(),
    };
    let first_record = libm::floor(state.t / config.record_every) as u64 + 1;
    let mut record_k = first_record;
    let record_time = |k: u64| k as f64 * config.record_every;
    let bad = |t: f64| Error::SimNonFinite { path, time: t };

    while state.t < horizon {
        let (channel, t_event) = clocks.earliest();
        let t_record = record_time(record_k);
        let mut t_end = (state.t + config.dt_max).min(horizon).min(t_event).min(t_record);
        let mut depleted = false;
        if control.nu > 0.0 && state.t + state.x / control.nu <= t_end {
            t_end = state.t + state.x / control.nu;
            depleted = true;
        }
        let h = t_end - state.t;

        if h > 0.0 {
            let rates = model.drift(&state, control).map_err(|_| bad(state.t))?;
            if config.trace {
                rec.steps.push(Step {
                    t: state.t,
                    dt: h,
                    s_b: state.s_b,
                    control,
                });
            }
            let x0 = state.x;
            let nu = control.nu;
            rec.inventory_sq_integral += x0 * x0 * h - x0 * nu * h * h + nu * nu * h * h * h / 3.0;
            state.w += h * rates.dw;
            state.s_b += h * rates.ds_b;
            state.delta += h * rates.ddelta;
            state.x = if depleted { 0.0 } else { (x0 - h * nu).max(0.0) };
            if clamp_zero && (state.s_b < 0.0 || state.delta < 0.0) {
                rec.clamp_events += 1;
                state.s_b = state.s_b.max(0.0);
                state.delta = state.delta.max(0.0);
            }
        }
        state.t = t_end;
        if !state.is_finite() {
            return Err(bad(state.t));
        }

        if t_end == t_event && !depleted {
            let eta_in_force = control.eta;
            let mark = clocks.fire(model, config, channel);
            rec.event_counts[channel.index()] += 1;
            let posting = (channel == Channel::DarkFill).then_some(eta_in_force);
            if channel == Channel::DarkFill {
                rec.fills.push(Fill {
                    time: state.t,
                    eta: eta_in_force,
                    fraction: mark,
                    mid: state.mid(),
                });
            }
            let out = if channel == Channel::DarkFill && !config.forced_fills.is_empty() {
                // Forced fractions need not lie in the modelled mark support.
                let executed = eta_in_force * mark;
                let mut next = state;
                next.x = (state.x - executed).max(0.0);
                next.w = state.w + executed * state.mid();
                crate::model::JumpOutcome {
                    state: next,
                    clamped: false,
                }
            } else {
                model.jump_map(&state, channel, mark, posting).map_err(|_| bad(state.t))?
            };
            if out.clamped {
                rec.clamp_events += 1;
            }
            state = out.state;
            if state.x <= 0.0 {
                state.x = 0.0;
                depleted = true;
            }
        }

        if depleted {
            rec.stopped_at = Some(state.t);
            rec.times.push(state.t);
            rec.states.push(state);
            rec.controls.push(ControlPair::ZERO);
            return Ok(rec);
        }

        control = policy.control(state.t, &state).capped(model.control_cap, state.x);
        if t_end == t_record || t_end >= horizon {
            if t_end == t_record {
                record_k += 1;
            }
            if rec.times.last() != Some(&state.t) {
                rec.times.push(state.t);
                rec.states.push(state);
                rec.controls.push(control);
            }
        }
    }
    Ok(rec)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyPathSet);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(Self {
            mean,
            std_error: libm::sqrt(var / n),
        })
    }
}

/// Moments of the best bid at horizon `h` relative to each path's start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimates {
    pub horizon: f64,
    /// `E[S_b(h)]`.
    pub mean: Estimate,
    /// `E|S_b(h) - s_b|` and `E|S_b(h) - s_b|^2`.
    pub abs_deviation: [Estimate; 2],
    /// `E[sup_{u <= h} |S_b(u) - s_b|^p]` for `p = 1, 2`, over recorded samples.
    pub sup_deviation: [Estimate; 2],
}

/// Moment statistics of the bid at time `h` from recorded paths; every path
/// must have a sample at `h`.
pub fn estimate_moments(paths: &[PathRecord], h: f64) -> Result<MomentEstimates> {
    if paths.is_empty() {
        return Err(Error::EmptyPathSet);
    }
    let n = paths.len();
    let mut level = Vec::with_capacity(n);
    let mut dev = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut sup = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for (p, rec) in paths.iter().enumerate() {
        let s0 = rec.states[0].s_b;
        let at = rec.sample_at(h).ok_or(Error::MissingSample { path: p, time: h })?;
        let d = (at.s_b - s0).abs();
        let tol = 1e-9 * (1.0 + h.abs());
        let m = rec
            .times
            .iter()
            .zip(&rec.states)
            .take_while(|(t, _)| **t <= h + tol)
            .map(|(_, st)| (st.s_b - s0).abs())
            .fold(0.0, f64::max);
        level.push(at.s_b);
        dev[0].push(d);
        dev[1].push(d * d);
        sup[0].push(m);
        sup[1].push(m * m);
    }
    Ok(MomentEstimates {
        horizon: h,
        mean: Estimate::from_samples(&level)?,
        abs_deviation: [Estimate::from_samples(&dev[0])?, Estimate::from_samples(&dev[1])?],
        sup_deviation: [Estimate::from_samples(&sup[0])?, Estimate::from_samples(&sup[1])?],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MartingaleClass {
    Sub,
    Super,
    Martingale,
    Neither,
}

/// Sign of the expected bid drift with no trading at `(s_b, delta)`. For a
/// mean-reverting bid the label depends on the state.
pub fn classify_martingale(model: &ModelSpec, s_b: f64, delta: f64) -> MartingaleClass {
    let drift = model.expected_bid_drift(s_b, delta);
    if !drift.is_finite() {
        return MartingaleClass::Neither;
    }
    let up = model.bid_up.mean_rate();
    let down = model.bid_down.mean_rate();
    let scale = 1.0 + up.abs() + down.abs() + model.drift_coefficients(s_b, delta).s_const.abs();
    let scale = scale * (1.0 + s_b.abs());
    if drift.abs() <= 1e-12 * scale {
        MartingaleClass::Martingale
    } else if drift > 0.0 {
        MartingaleClass::Sub
    } else {
        MartingaleClass::Super
    }
}
