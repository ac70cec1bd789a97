//! Reduced chain on the number of backlogged stations.
//!
//! State `x` counts stations with a non-empty queue. An arrival at one of the
//! `N - x` idle stations moves the chain up; a departure leaves the station
//! backlogged with probability `rho_x = lambda / mu(x)` (a self-loop) and
//! empties it otherwise. State `N'` is absorbing.

use serde::Serialize;

use crate::models::ServiceRateCurve;
use crate::stability::assess;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChainError {
    #[error("lambda = {lambda} is below mu(n) for every n <= {stations}; no absorbing state")]
    StableRegime { lambda: f64, stations: usize },
    #[error("service rate curve covers {available} contenders, need {stations}")]
    CurveTooShort { stations: usize, available: usize },
    #[error("arrival rate must be finite and > 0, got {0}")]
    InvalidRate(f64),
    #[error("hitting-time system is singular at state {0}")]
    SingularSystem(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacklogChain {
    pub stations: usize,
    pub n_prime: usize,
    pub lambda: f64,
    /// `mu(x)` for `x = 1..=N'`; index 0 holds `mu(1)`.
    pub mu: Vec<f64>,
    /// `rho_x` for `x = 1..N'`; index 0 holds `rho_1`.
    pub rho: Vec<f64>,
    /// Transition probabilities from transient states `x = 0..N'`.
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub stay: Vec<f64>,
}

pub fn build_chain(stations: usize, lambda: f64, curve: &ServiceRateCurve) -> Result<BacklogChain, ChainError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(ChainError::InvalidRate(lambda));
    }
    if curve.max_contenders() < stations {
        return Err(ChainError::CurveTooShort {
            stations,
            available: curve.max_contenders(),
        });
    }
    let n_prime = assess(lambda, curve)
        .n_prime
        .filter(|&np| np <= stations)
        .ok_or(ChainError::StableRegime { lambda, stations })?;

    let mu: Vec<f64> = (1..=n_prime).map(|x| curve.mu(x)).collect();
    let rho: Vec<f64> = mu[..n_prime - 1].iter().map(|&m| lambda / m).collect();
    let mut up = Vec::with_capacity(n_prime);
    let mut down = Vec::with_capacity(n_prime);
    let mut stay = Vec::with_capacity(n_prime);
    up.push(1.0);
    down.push(0.0);
    stay.push(0.0);
    for x in 1..n_prime {
        let arrivals = (stations - x) as f64 * lambda;
        let service = x as f64 * mu[x - 1];
        let total = arrivals + service;
        let r = rho[x - 1];
        up.push(arrivals / total);
        down.push(service * (1.0 - r) / total);
        stay.push(service * r / total);
    }
    Ok(BacklogChain {
        stations,
        n_prime,
        lambda,
        mu,
        rho,
        up,
        down,
        stay,
    })
}

impl BacklogChain {
    /// Total event rate out of state `x`, `(N - x) lambda + x mu(x)`.
    pub fn event_rate(&self, x: usize) -> f64 {
        let service = if x == 0 { 0.0 } else { x as f64 * self.mu[x - 1] };
        (self.stations - x) as f64 * self.lambda + service
    }

    /// Expected number of events spent in each transient state before
    /// absorption, starting from state 0 (row 0 of the fundamental matrix).
    ///
    /// With self-loops folded into the step count, the mean events from `x`
    /// satisfy `up(x) d(x) = c(x) + down(x) d(x-1)` for the differences
    /// `d(x) = h(x) - h(x+1)` under per-event cost `c`. Expanding `h(0)`
    /// as a linear function of `c` gives the visit counts
    /// `v(y) = s(y) / up(y)` with `s(y) = 1 + (down(y+1)/up(y+1)) s(y+1)`.
    pub fn expected_visits(&self) -> Result<Vec<f64>, ChainError> {
        let k = self.n_prime;
        self.check_up()?;
        let mut visits = vec![0.0; k];
        let mut s = 1.0;
        visits[k - 1] = s / self.up[k - 1];
        for y in (0..k - 1).rev() {
            s = 1.0 + self.down[y + 1] / self.up[y + 1] * s;
            visits[y] = s / self.up[y];
        }
        Ok(visits)
    }

    fn check_up(&self) -> Result<(), ChainError> {
        match self.up.iter().position(|&u| !(u.is_finite() && u > 0.0)) {
            Some(x) => Err(ChainError::SingularSystem(x)),
            None => Ok(()),
        }
    }

    /// Audit rows `(x, up, down, stay, h(x))` for every state including `N'`.
    pub fn write_csv<W: std::io::Write>(&self, hitting: &[f64], out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "up", "down", "stay", "h"])?;
        for x in 0..=self.n_prime {
            let (u, d, s) = if x < self.n_prime {
                (self.up[x], self.down[x], self.stay[x])
            } else {
                (0.0, 0.0, 1.0)
            };
            let h = hitting.get(x).copied().unwrap_or(f64::NAN);
            w.write_record([x.to_string(), u.to_string(), d.to_string(), s.to_string(), h.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean number of events (self-loops included) to reach `N'` from each
/// state; `h[N'] = 0`.
///
/// Dividing out the self-loop leaves a pure birth-death recursion on the
/// differences `d(x) = h(x) - h(x+1)`: `d(0) = 1/up(0)` and
/// `d(x) = (1 + down(x) d(x-1)) / up(x)`. All terms are positive, so the
/// recursion is free of cancellation.
pub fn hitting_times(chain: &BacklogChain) -> Result<Vec<f64>, ChainError> {
    let k = chain.n_prime;
    chain.check_up()?;
    let mut diffs = Vec::with_capacity(k);
    let mut prev = 0.0;
    for x in 0..k {
        let d = (1.0 + chain.down[x] * prev) / chain.up[x];
        diffs.push(d);
        prev = d;
    }
    let mut h = vec![0.0; k + 1];
    for x in (0..k).rev() {
        h[x] = h[x + 1] + diffs[x];
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(ChainError::SingularSystem(0));
    }
    Ok(h)
}

/// Mean time in seconds to reach `N'` from the empty state: expected visits
/// to each transient state weighted by its mean holding time.
///
/// `hitting` must come from [`hitting_times`] on the same chain; its `h(0)`
/// is cross-checked against the summed visit counts.
pub fn expected_hitting_time_seconds(chain: &BacklogChain, hitting: &[f64]) -> Result<f64, ChainError> {
    let visits = chain.expected_visits()?;
    let total: f64 = visits.iter().sum();
    if let Some(&h0) = hitting.first() {
        if (total - h0).abs() > 1e-9 * h0.abs().max(1.0) {
            return Err(ChainError::SingularSystem(0));
        }
    }
    Ok(visits
        .iter()
        .enumerate()
        .map(|(x, v)| v / chain.event_rate(x))
        .sum())
}
