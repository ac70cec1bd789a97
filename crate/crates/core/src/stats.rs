//! Empirical CDFs and maximum-likelihood fits for escape-time samples.

use std::f64::consts::PI;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample has no dispersion; the inverse Gaussian fit is undefined")]
    DegenerateSample,
    #[error("invalid sample: {0}")]
    InvalidSample(String),
}

fn check_positive(samples: &[f64], min_len: usize) -> Result<(), StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if samples.len() < min_len {
        return Err(StatsError::InvalidSample(format!(
            "need at least {min_len} values, got {}",
            samples.len()
        )));
    }
    if let Some(x) = samples.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(StatsError::InvalidSample(format!("values must be finite and > 0, got {x}")));
    }
    Ok(())
}

/// Sorted sample with its step-function CDF.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EcdfSample {
    values: Vec<f64>,
}

pub fn ecdf(samples: &[f64]) -> Result<EcdfSample, StatsError> {
    check_positive(samples, 1)?;
    let mut values = samples.to_vec();
    values.sort_by(f64::total_cmp);
    Ok(EcdfSample { values })
}

impl EcdfSample {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fraction of values `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.n() as f64
    }

    /// `(x, F(x))` at each distinct value.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.n() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &v) in self.values.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = f,
                _ => out.push((v, f)),
            }
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "F"])?;
        for (x, f) in self.points() {
            w.write_record([x.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fitted family; variant order is the tie-break order in [`compare_fits`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    InverseGaussian { mean: f64, shape: f64 },
    Exponential { rate: f64 },
}

impl Family {
    fn rank(&self) -> u8 {
        match self {
            Family::InverseGaussian { .. } => 0,
            Family::Exponential { .. } => 1,
        }
    }

    /// Negative log-likelihood of the sample in nats.
    pub fn nll(&self, samples: &[f64]) -> f64 {
        match *self {
            Family::InverseGaussian { mean, shape } => samples.iter().map(|&x| -ig_log_density(x, mean, shape)).sum(),
            Family::Exponential { rate } => {
                let ln_rate = rate.ln();
                samples.iter().map(|&x| rate * x - ln_rate).sum()
            }
        }
    }
}

fn ig_log_density(x: f64, mean: f64, shape: f64) -> f64 {
    0.5 * (shape / (2.0 * PI * x.powi(3))).ln() - shape * (x - mean).powi(2) / (2.0 * mean * mean * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    #[serde(flatten)]
    pub family: Family,
    pub nll: f64,
    pub n: usize,
}

/// Closed-form MLE: `mean` is the sample mean and
/// `shape = n / sum(1/x - 1/mean)`.
pub fn fit_inverse_gaussian(samples: &[f64]) -> Result<FitResult, StatsError> {
    check_positive(samples, 2)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let inv_sum: f64 = samples.iter().map(|x| 1.0 / x).sum();
    let spread = inv_sum - n / mean;
    // By AM-HM the spread is >= 0, with equality only for a constant sample;
    // below this it is rounding noise.
    if spread <= 1e-12 * inv_sum {
        return Err(StatsError::DegenerateSample);
    }
    let family = Family::InverseGaussian {
        mean,
        shape: n / spread,
    };
    Ok(FitResult {
        family,
        nll: family.nll(samples),
        n: samples.len(),
    })
}

pub fn fit_exponential(samples: &[f64]) -> Result<FitResult, StatsError> {
    check_positive(samples, 1)?;
    let n = samples.len() as f64;
    let rate = n / samples.iter().sum::<f64>();
    let family = Family::Exponential { rate };
    Ok(FitResult {
        family,
        nll: n * (1.0 - rate.ln()),
        n: samples.len(),
    })
}

fn fit_order(a: &FitResult, b: &FitResult) -> std::cmp::Ordering {
    a.nll.total_cmp(&b.nll).then(a.family.rank().cmp(&b.family.rank()))
}

/// Both fits, best (lowest NLL) first.
pub fn compare_fits(samples: &[f64]) -> Result<Vec<FitResult>, StatsError> {
    let mut fits = vec![fit_inverse_gaussian(samples)?, fit_exponential(samples)?];
    fits.sort_by(fit_order);
    Ok(fits)
}

pub fn write_fits_json<W: std::io::Write>(fits: &[FitResult], out: W) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, fits)
}
