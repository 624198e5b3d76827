//! Optimal liquidation in a lit exchange and a dark pool.
//!
//! The crate models the best bid and the bid-ask spread of an order-driven
//! market as jump processes with drift, lets an agent sell through market
//! orders (rate `nu`) and through dark-pool postings executed at the mid-price
//! (quantity `eta`), and computes the jointly optimal policy by backward
//! dynamic programming on a grid.
//!
//! * [`model`]: state, controls, the two concrete price/spread families and
//!   the objective.
//! * [`sim`]: exact-event Monte Carlo simulation and moment statistics.
//! * [`grid`], [`solver`], [`full`]: the reduced 4-D explicit upwind solver
//!   and the tiny-grid 5-D (cash-resolved) oracle.
//! * [`policy`]: policy interpolation, Monte Carlo evaluation and the
//!   structural checks run on solved policies.
//!
//! The crate is `no_std` (with `alloc`) when built without the `std` feature.
//! The `parallel` feature runs solver slices and simulation paths on rayon;
//! results do not depend on the worker count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod full;
pub mod grid;
pub mod model;
pub mod policy;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{Axis, GridSpec, NuSearch, PolicyGrid, ValueGrid};
pub use model::{
    Channel, ControlPair, CustomDynamics, DriftCoefficients, Family, JumpSpec, MarkDistribution,
    MarketState, ModelSpec, ObjectiveSpec,
};
pub use policy::{Interpolation, PolicyFn};
pub use sim::{PathRecord, Policy, SimConfig};
pub use solver::{solve_backward, Diagnostics, Solution};
