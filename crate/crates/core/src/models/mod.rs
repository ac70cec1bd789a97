//! Renewal-reward models of Aloha and IEEE 802.11 DCF under the decoupling
//! approximation.
//!
//! Each station is modelled in isolation: it sees the others only through
//! the conditional collision probability `p` and, for DCF, the mean duration
//! of a backoff slot. The unsaturated system couples the attempt rate `tau`,
//! the queue occupancy `rho` and the idle slots `I` between renewals, and is
//! solved by damped fixed-point iteration from a chosen starting point.

mod backoff;
mod curve;
mod fixed_point;
mod params;

pub use backoff::{expected_backoff_slots, SlotProbabilities};
pub use curve::{service_rate_curve, service_rate_curve_with, ServiceRateCurve};
pub use fixed_point::{
    equation_residual, saturated_service_rate, saturated_service_rate_with, solve_fixed_point, solve_saturated,
    FixedPointSolution, SolverOptions, SolverStart,
};
pub use params::{compute_timings, FrameTimings, Protocol, ProtocolParams};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid protocol parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("collision probability {0} outside [0, 1)")]
    CollisionProbabilityOutOfRange(f64),
    #[error("too few contenders: {0}")]
    TooFewContenders(usize),
    #[error("arrival rate must be finite and > 0, got {0}")]
    InvalidRate(f64),
    #[error("fixed point did not converge after {} iterations (residual {:.3e})", .0.iterations, .0.residual)]
    NonConvergence(Box<FixedPointSolution>),
    #[error("service rate curve must cover at least one contender")]
    EmptyCurve,
    #[error("service rate mu({n}) = {rate} must be finite and > 0")]
    InvalidServiceRate { n: usize, rate: f64 },
    #[error("saturated solve failed for n = {n}: {source}")]
    CurvePoint {
        n: usize,
        #[source]
        source: Box<ModelError>,
    },
}
