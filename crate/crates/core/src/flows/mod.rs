//! Conditional neural spline flows for the posterior-estimation algorithms.

mod flow;
mod prior_map;
pub mod spline;

pub(crate) use flow::tile;
pub use flow::{ConditionalFlow, CouplingLayer, FlowConfig, InitScheme};
pub use prior_map::PriorMapTransform;
pub use spline::{spline_forward, spline_inverse, RqSplineParams};

/// Log density reported for points outside a bounded support. Finite so that
/// loss arithmetic never sees `-inf`.
pub const LOG_ZERO: f64 = -1e10;
