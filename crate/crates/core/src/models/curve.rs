use serde::{Deserialize, Serialize};

use super::fixed_point::{saturated_service_rate_with, SolverOptions};
use super::params::ProtocolParams;
use super::ModelError;

/// Saturated per-station service rates `mu(n)` for `n = 1..=N`, in packets/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRateCurve {
    /// Model the rates were derived from; `None` for hand-built curves.
    pub params: Option<ProtocolParams>,
    rates: Vec<f64>,
}

impl ServiceRateCurve {
    /// Builds a curve from explicit rates, `rates[0]` being `mu(1)`.
    pub fn from_rates(rates: Vec<f64>) -> Result<Self, ModelError> {
        if rates.is_empty() {
            return Err(ModelError::EmptyCurve);
        }
        if let Some((i, &r)) = rates.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(ModelError::InvalidServiceRate { n: i + 1, rate: r });
        }
        Ok(Self { params: None, rates })
    }

    /// Largest contender count covered.
    pub fn max_contenders(&self) -> usize {
        self.rates.len()
    }

    /// `mu(n)`, 1-indexed. Panics when `n` is outside `1..=max_contenders()`.
    pub fn mu(&self, n: usize) -> f64 {
        assert!(n >= 1 && n <= self.rates.len(), "contender count {n} outside curve");
        self.rates[n - 1]
    }

    pub fn get(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|i| self.rates.get(i)).copied()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// `(n, mu(n))` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rates.iter().enumerate().map(|(i, &r)| (i + 1, r))
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "mu"])?;
        for (n, mu) in self.iter() {
            w.write_record([n.to_string(), mu.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn service_rate_curve(params: &ProtocolParams, max_contenders: usize) -> Result<ServiceRateCurve, ModelError> {
    service_rate_curve_with(params, max_contenders, &SolverOptions::default())
}

pub fn service_rate_curve_with(
    params: &ProtocolParams,
    max_contenders: usize,
    opts: &SolverOptions,
) -> Result<ServiceRateCurve, ModelError> {
    if max_contenders < 1 {
        return Err(ModelError::EmptyCurve);
    }
    let rates = (1..=max_contenders)
        .map(|n| {
            saturated_service_rate_with(params, n, opts).map_err(|source| ModelError::CurvePoint {
                n,
                source: Box::new(source),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ServiceRateCurve {
        params: Some(params.clone()),
        rates,
    })
}
