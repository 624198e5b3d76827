use alloc::string::String;

use crate::model::Channel;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("mark {mark} outside the support of channel {channel:?}")]
    MarkOutOfSupport { channel: Channel, mark: f64 },

    #[error("dark-fill jump needs the posted quantity in force")]
    MissingPosting,

    #[error("explicit step dt={dt} exceeds the stability bound; largest admissible dt is {max_dt}")]
    Stability { dt: f64, max_dt: f64 },

    #[error("non-finite value at t={time}, node {node}")]
    NonFiniteValue { time: f64, node: usize },

    #[error("path {path} hit a non-finite state at t={time}")]
    SimNonFinite { path: usize, time: f64 },

    #[error("no paths to aggregate")]
    EmptyPathSet,

    #[error("path {path} has no sample at t={time}")]
    MissingSample { path: usize, time: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cash dimension cannot be reduced with discount rate r={r}; use the full solver")]
    ReductionUnavailable { r: f64 },

    #[error("grids differ: {0}")]
    GridMismatch(&'static str),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
