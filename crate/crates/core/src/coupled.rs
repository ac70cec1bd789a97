//! Monte Carlo simulation of `N` coupled queues whose per-queue service rate
//! depends on how many queues are backlogged.
//!
//! The process is a continuous-time Markov chain on queue lengths. It is
//! sampled with the direct method: the clock advances by an exponential
//! variate at the total event rate `N lambda + n_x mu(n_x)`, then the event
//! is an arrival at a uniformly chosen queue or a departure from a uniformly
//! chosen backlogged queue.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::models::ServiceRateCurve;
use crate::rng::{seed_for, SimRng};

const TRAJECTORY_LIMIT: usize = 100_000;
const BOOKKEEPING_CHECK_EVERY: u64 = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum CoupledError {
    #[error("invalid coupled-queue config: {0}")]
    InvalidConfig(String),
    #[error("no event can fire: total rate is {rate} with {backlogged} backlogged queues")]
    DegenerateRates { rate: f64, backlogged: usize },
    #[error("stopped after {} events without crossing the occupancy threshold", .0.total_events)]
    MaxEventsExceeded(Box<TransientRecord>),
    #[error("none of the {0} replications crossed the occupancy threshold")]
    AllCensored(usize),
    #[error("T_E is undefined in all {0} replications that crossed the threshold (no queue was ever empty)")]
    AllUndefined(usize),
}

#[derive(Debug, Clone)]
pub struct CoupledConfig {
    pub stations: usize,
    /// Per-queue buffer size `Q`.
    pub capacity: u32,
    /// Per-queue arrival rate in packets/s.
    pub lambda: f64,
    pub curve: Arc<ServiceRateCurve>,
    /// Mean-occupancy threshold `theta`, in packets.
    pub theta: f64,
    /// Packets placed in every queue at `t = 0`.
    pub preload: u32,
    pub max_events: u64,
    pub seed: u64,
    pub record_trajectory: bool,
    /// End the run once the limiting state is reached instead of at `theta`.
    pub stop_at_hit: bool,
    /// Track time spent at each total backlog level `0..=max`.
    pub occupancy_histogram: Option<usize>,
}

impl CoupledConfig {
    /// Config with `theta = 0.75 Q`, empty queues and no tracing.
    pub fn new(stations: usize, capacity: u32, lambda: f64, curve: Arc<ServiceRateCurve>) -> Self {
        Self {
            stations,
            capacity,
            lambda,
            curve,
            theta: 0.75 * f64::from(capacity),
            preload: 0,
            max_events: 1_000_000_000,
            seed: 0,
            record_trajectory: false,
            stop_at_hit: false,
            occupancy_histogram: None,
        }
    }

    pub fn validate(&self) -> Result<(), CoupledError> {
        let bad = |m: String| Err(CoupledError::InvalidConfig(m));
        if self.stations < 1 {
            return bad("stations must be >= 1".into());
        }
        if self.capacity < 1 {
            return bad("capacity must be >= 1".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.theta > 0.0 && self.theta <= f64::from(self.capacity)) {
            return bad(format!("theta must be in (0, {}], got {}", self.capacity, self.theta));
        }
        if self.preload > self.capacity {
            return bad(format!("preload {} exceeds capacity {}", self.preload, self.capacity));
        }
        if self.curve.max_contenders() < self.stations {
            return bad(format!(
                "service rate curve covers {} contenders, need {}",
                self.curve.max_contenders(),
                self.stations
            ));
        }
        Ok(())
    }

    /// Smallest backlog count `n <= N` with `lambda >= mu(n)`.
    pub fn limiting_state(&self) -> Option<usize> {
        (1..=self.stations).find(|&n| self.lambda >= self.curve.mu(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub min: u32,
    pub mean: f64,
    pub max: u32,
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransientRecord {
    /// Number of events up to and including the first with `N'` backlogged
    /// queues (0 if the initial state already qualifies).
    pub hit_event_index: Option<u64>,
    pub hit_time: Option<f64>,
    /// First time the mean occupancy exceeds `theta`.
    pub t_theta: Option<f64>,
    /// Supremum of the times before `t_theta` at which some queue was empty.
    pub t_e: Option<f64>,
    pub total_events: u64,
    pub reached_theta: bool,
    pub end_time: f64,
    pub dropped_arrivals: u64,
    /// Time-average of the mean queue length over `[0, end_time]`.
    pub time_avg_occupancy: f64,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Time spent at each total backlog level, when requested.
    pub occupancy_time: Vec<f64>,
}

struct Queues {
    lengths: Vec<u32>,
    backlogged: Vec<usize>,
    total: u64,
}

impl Queues {
    fn new(stations: usize, preload: u32) -> Self {
        let backlogged = if preload > 0 { (0..stations).collect() } else { Vec::new() };
        Self {
            lengths: vec![preload; stations],
            backlogged,
            total: u64::from(preload) * stations as u64,
        }
    }

    fn sample(&self, time: f64) -> TrajectoryPoint {
        let min = self.lengths.iter().copied().min().unwrap_or(0);
        let max = self.lengths.iter().copied().max().unwrap_or(0);
        TrajectoryPoint {
            time,
            min,
            mean: self.total as f64 / self.lengths.len() as f64,
            max,
        }
    }

    fn bookkeeping_consistent(&self) -> bool {
        let count = self.lengths.iter().filter(|&&x| x > 0).count();
        let total: u64 = self.lengths.iter().map(|&x| u64::from(x)).sum();
        count == self.backlogged.len() && total == self.total
    }
}

struct Trajectory {
    points: Vec<TrajectoryPoint>,
    stride: u64,
}

impl Trajectory {
    fn push(&mut self, event: u64, queues: &Queues, time: f64) {
        if !event.is_multiple_of(self.stride) {
            return;
        }
        if self.points.len() == TRAJECTORY_LIMIT {
            let mut i = 0;
            self.points.retain(|_| {
                i += 1;
                i % 2 == 1
            });
            self.stride *= 2;
            if !event.is_multiple_of(self.stride) {
                return;
            }
        }
        self.points.push(queues.sample(time));
    }
}

/// Runs one replication until the mean occupancy exceeds `theta` (or the
/// limiting state is hit, with `stop_at_hit`) or `max_events` events have
/// fired.
///
/// Arrivals at a full queue are dropped but still count as events.
pub fn run_replication(config: &CoupledConfig) -> Result<TransientRecord, CoupledError> {
    config.validate()?;
    let n = config.stations;
    let mut rng = SimRng::new(config.seed);
    let mut q = Queues::new(n, config.preload);
    let arrival_rate = n as f64 * config.lambda;
    let threshold = config.theta * n as f64;
    let n_prime = config.limiting_state();

    let mut traj = config.record_trajectory.then(|| Trajectory {
        points: Vec::new(),
        stride: 1,
    });
    let mut histogram = config.occupancy_histogram.map(|m| vec![0.0; m + 1]);

    let mut time = 0.0;
    let mut events = 0u64;
    let mut dropped = 0u64;
    let mut area = 0.0;
    let mut hit = None;
    let mut last_fill = None;
    let mut t_theta = None;
    let mut t_e = None;

    if let Some(tr) = traj.as_mut() {
        tr.push(0, &q, 0.0);
    }
    if n_prime.is_some_and(|np| q.backlogged.len() >= np) {
        hit = Some((0, 0.0));
    }
    if q.total as f64 > threshold {
        t_theta = Some(0.0);
    }

    while t_theta.is_none() && !(config.stop_at_hit && hit.is_some()) {
        if events >= config.max_events {
            let record = finish(config, hit, None, None, events, time, dropped, area, traj, histogram);
            return Err(CoupledError::MaxEventsExceeded(Box::new(record)));
        }
        let nx = q.backlogged.len();
        let departure_rate = if nx == 0 {
            0.0
        } else {
            let mu = config.curve.mu(nx);
            if !(mu > 0.0) {
                return Err(CoupledError::DegenerateRates { rate: mu, backlogged: nx });
            }
            nx as f64 * mu
        };
        let rate = arrival_rate + departure_rate;
        if !(rate > 0.0) {
            return Err(CoupledError::DegenerateRates { rate, backlogged: nx });
        }

        let dt = rng.exponential(rate);
        area += q.total as f64 * dt;
        if let Some(h) = histogram.as_mut() {
            let level = (q.total as usize).min(h.len() - 1);
            h[level] += dt;
        }
        time += dt;
        events += 1;
        let some_empty_before = nx < n;

        if rng.uniform() * rate < arrival_rate {
            let i = rng.index(n);
            if q.lengths[i] < config.capacity {
                q.lengths[i] += 1;
                q.total += 1;
                if q.lengths[i] == 1 {
                    q.backlogged.push(i);
                }
            } else {
                dropped += 1;
            }
        } else {
            let j = rng.index(nx);
            let i = q.backlogged[j];
            q.lengths[i] -= 1;
            q.total -= 1;
            if q.lengths[i] == 0 {
                q.backlogged.swap_remove(j);
            }
        }

        let nx = q.backlogged.len();
        if some_empty_before && nx == n {
            last_fill = Some(time);
        }
        if hit.is_none() && n_prime.is_some_and(|np| nx >= np) {
            hit = Some((events, time));
        }
        if q.total as f64 > threshold {
            t_theta = Some(time);
            // An empty queue right before the crossing puts the supremum at
            // the crossing itself.
            t_e = if some_empty_before { Some(time) } else { last_fill };
        }
        if let Some(tr) = traj.as_mut() {
            tr.push(events, &q, time);
        }
        if events.is_multiple_of(BOOKKEEPING_CHECK_EVERY) {
            debug_assert!(q.bookkeeping_consistent(), "backlog bookkeeping drifted at event {events}");
        }
    }

    Ok(finish(config, hit, t_theta, t_e, events, time, dropped, area, traj, histogram))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    config: &CoupledConfig,
    hit: Option<(u64, f64)>,
    t_theta: Option<f64>,
    t_e: Option<f64>,
    events: u64,
    time: f64,
    dropped: u64,
    area: f64,
    traj: Option<Trajectory>,
    histogram: Option<Vec<f64>>,
) -> TransientRecord {
    let time_avg_occupancy = if time > 0.0 {
        area / (time * config.stations as f64)
    } else {
        f64::from(config.preload)
    };
    TransientRecord {
        hit_event_index: hit.map(|h| h.0),
        hit_time: hit.map(|h| h.1),
        t_theta,
        t_e,
        total_events: events,
        reached_theta: t_theta.is_some(),
        end_time: time,
        dropped_arrivals: dropped,
        time_avg_occupancy,
        trajectory: traj.map(|t| t.points).unwrap_or_default(),
        occupancy_time: histogram.unwrap_or_default(),
    }
}

/// Runs `replications` independent replications in parallel; replication `i`
/// is seeded with `seed_for(config.seed, i)`. Replications that exhaust
/// `max_events` are returned as censored records.
pub fn run_replications(config: &CoupledConfig, replications: usize) -> Result<Vec<TransientRecord>, CoupledError> {
    config.validate()?;
    (0..replications)
        .into_par_iter()
        .map(|i| {
            let mut c = config.clone();
            c.seed = seed_for(config.seed, i as u64);
            match run_replication(&c) {
                Err(CoupledError::MaxEventsExceeded(rec)) => Ok(*rec),
                other => other,
            }
        })
        .collect()
}

/// Mean and 95% normal confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub ci_half_width: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        let n = samples.len();
        if n == 0 {
            return None;
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let half = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Some(Self {
            mean,
            ci_half_width: half,
            n,
        })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_half_width
    }
}

/// Hitting statistics of the limiting state across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metric1Summary {
    pub events: MeanEstimate,
    pub time: MeanEstimate,
    /// Replications that never reached the limiting state.
    pub censored: usize,
}

impl Metric1Summary {
    pub fn from_records(records: &[TransientRecord]) -> Option<Self> {
        let events: Vec<f64> = records.iter().filter_map(|r| r.hit_event_index).map(|e| e as f64).collect();
        let times: Vec<f64> = records.iter().filter_map(|r| r.hit_time).collect();
        Some(Self {
            events: MeanEstimate::from_samples(&events)?,
            time: MeanEstimate::from_samples(&times)?,
            censored: records.len() - events.len(),
        })
    }
}

pub fn metric1_mean(config: &CoupledConfig, replications: usize) -> Result<Metric1Summary, CoupledError> {
    if replications == 0 {
        return Err(CoupledError::InvalidConfig("replications must be >= 1".into()));
    }
    let records = run_replications(config, replications)?;
    Metric1Summary::from_records(&records).ok_or(CoupledError::AllCensored(replications))
}

/// `T_E` values, sorted, from the replications that crossed `theta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric2Samples {
    pub samples: Vec<f64>,
    /// Replications that never crossed the threshold.
    pub censored: usize,
    /// Replications that crossed it without any queue ever being empty.
    pub undefined: usize,
}

/// Why a set of replications produced no escape time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Censoring {
    /// None of this many replications crossed the threshold.
    AllCensored(usize),
    /// This many replications crossed it, none with a defined `T_E`.
    AllUndefined(usize),
}

impl Metric2Samples {
    /// Builds the sample from `(reached_theta, t_e)` per replication.
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (bool, Option<f64>)>) -> Result<Self, Censoring> {
        let mut total = 0;
        let mut crossed = 0;
        let mut samples = Vec::new();
        for (reached, t_e) in outcomes {
            total += 1;
            if reached {
                crossed += 1;
                samples.extend(t_e);
            }
        }
        if crossed == 0 {
            return Err(Censoring::AllCensored(total));
        }
        if samples.is_empty() {
            return Err(Censoring::AllUndefined(crossed));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self {
            undefined: crossed - samples.len(),
            censored: total - crossed,
            samples,
        })
    }

    pub fn from_records(records: &[TransientRecord]) -> Result<Self, CoupledError> {
        Self::from_outcomes(records.iter().map(|r| (r.reached_theta, r.t_e))).map_err(|c| match c {
            Censoring::AllCensored(n) => CoupledError::AllCensored(n),
            Censoring::AllUndefined(n) => CoupledError::AllUndefined(n),
        })
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

pub fn metric2_samples(config: &CoupledConfig, replications: usize) -> Result<Metric2Samples, CoupledError> {
    if replications == 0 {
        return Err(CoupledError::InvalidConfig("replications must be >= 1".into()));
    }
    Metric2Samples::from_records(&run_replications(config, replications)?)
}

fn opt(v: Option<impl ToString>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-replication rows; missing values are empty fields.
pub fn write_records_csv<W: std::io::Write>(records: &[TransientRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["seed_index", "hit_events", "hit_time_s", "T_theta_s", "T_E_s", "total_events", "censored"])?;
    for (i, r) in records.iter().enumerate() {
        w.write_record([
            i.to_string(),
            opt(r.hit_event_index),
            opt(r.hit_time),
            opt(r.t_theta),
            opt(r.t_e),
            r.total_events.to_string(),
            (!r.reached_theta).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv<W: std::io::Write>(points: &[TrajectoryPoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_s", "min", "mean", "max"])?;
    for p in points {
        w.write_record([p.time.to_string(), p.min.to_string(), p.mean.to_string(), p.max.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(mu: f64, n: usize) -> Arc<ServiceRateCurve> {
        Arc::new(ServiceRateCurve::from_rates(vec![mu; n]).unwrap())
    }

    fn toy() -> Arc<ServiceRateCurve> {
        Arc::new(ServiceRateCurve::from_rates(vec![2.0, 0.5]).unwrap())
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut c = CoupledConfig::new(2, 10, 1.0, toy());
        c.theta = 11.0;
        assert!(c.validate().is_err());
        let mut c = CoupledConfig::new(2, 10, 1.0, toy());
        c.preload = 11;
        assert!(c.validate().is_err());
        assert!(CoupledConfig::new(3, 10, 1.0, toy()).validate().is_err());
        assert!(CoupledConfig::new(2, 0, 1.0, toy()).validate().is_err());
    }

    #[test]
    fn preloaded_above_threshold_stops_immediately() {
        let mut c = CoupledConfig::new(2, 10, 1.0, toy());
        c.preload = 10;
        let r = run_replication(&c).unwrap();
        assert_eq!(r.t_theta, Some(0.0));
        assert_eq!(r.t_e, None);
        assert_eq!(r.total_events, 0);
        assert_eq!(r.hit_event_index, Some(0));
    }

    #[test]
    fn zero_rates_are_degenerate() {
        let c = CoupledConfig::new(2, 10, 0.0, toy());
        assert!(matches!(run_replication(&c), Err(CoupledError::DegenerateRates { .. })));
    }

    #[test]
    fn max_events_returns_censored_record() {
        let mut c = CoupledConfig::new(1, 100, 1.0, flat(2.0, 1));
        c.max_events = 1000;
        match run_replication(&c) {
            Err(CoupledError::MaxEventsExceeded(r)) => {
                assert_eq!(r.total_events, 1000);
                assert!(!r.reached_theta);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn straight_climb_when_arrivals_dominate() {
        // Service is negligible, so every event is an arrival and N' is hit
        // after N' events up to collisions on already-backlogged queues.
        let curve = Arc::new(ServiceRateCurve::from_rates(vec![1e-9; 4]).unwrap());
        let mut c = CoupledConfig::new(4, 5, 1e6, curve);
        c.theta = 0.1;
        let r = run_replication(&c).unwrap();
        assert_eq!(r.hit_event_index, Some(1));
    }

    #[test]
    fn trajectory_is_bounded_and_ordered() {
        let mut c = CoupledConfig::new(3, 50, 1.0, Arc::new(ServiceRateCurve::from_rates(vec![2.0, 0.9, 0.6]).unwrap()));
        c.record_trajectory = true;
        c.seed = 3;
        let r = run_replication(&c).unwrap();
        assert!(r.reached_theta);
        assert!(!r.trajectory.is_empty() && r.trajectory.len() <= TRAJECTORY_LIMIT);
        for w in r.trajectory.windows(2) {
            assert!(w[0].time <= w[1].time);
        }
        for p in &r.trajectory {
            assert!(p.min as f64 <= p.mean && p.mean <= p.max as f64 && p.max <= 50);
        }
    }

    #[test]
    fn metric2_reports_undefined_when_never_empty() {
        let mut c = CoupledConfig::new(2, 10, 1.0, toy());
        c.preload = 10;
        assert!(matches!(metric2_samples(&c, 4), Err(CoupledError::AllUndefined(4))));
    }

    #[test]
    fn csv_rows() {
        let mut c = CoupledConfig::new(2, 10, 1.0, toy());
        c.preload = 10;
        let recs = run_replications(&c, 2).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "seed_index,hit_events,hit_time_s,T_theta_s,T_E_s,total_events,censored\n0,0,0,0,,0,false\n1,0,0,0,,0,false\n"
        );
    }
}
