//! Stability test for a homogeneous network with state-dependent service.
//!
//! With Poisson arrivals and infinite buffers, the queues are transient as
//! soon as the arrival rate reaches the service rate available when all `N`
//! stations contend. The smallest contender count at which that happens is
//! the limiting state `N'` used by the hitting-time methods.

use serde::{Deserialize, Serialize};

use crate::models::ServiceRateCurve;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub lambda: f64,
    /// `mu(N)` for the largest `N` on the curve.
    pub mu_sat: f64,
    pub stable: bool,
    /// Smallest `n` with `lambda >= mu(n)`.
    pub n_prime: Option<usize>,
    /// `lambda - mu_sat`; positive when unstable.
    pub margin: f64,
}

/// Assesses `lambda` against a service rate curve. Equality counts as
/// unstable.
pub fn assess(lambda: f64, curve: &ServiceRateCurve) -> StabilityReport {
    let mu_sat = curve.mu(curve.max_contenders());
    let n_prime = curve.iter().find(|&(_, mu)| lambda >= mu).map(|(n, _)| n);
    StabilityReport {
        lambda,
        mu_sat,
        stable: lambda < mu_sat,
        n_prime,
        margin: lambda - mu_sat,
    }
}
