use std::sync::Arc;

use mac_transient::coupled::{
    metric1_mean, run_replication, run_replications, write_records_csv, CoupledConfig, CoupledError,
};
use mac_transient::models::ServiceRateCurve;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn curve(rates: &[f64]) -> Arc<ServiceRateCurve> {
    Arc::new(ServiceRateCurve::from_rates(rates.to_vec()).unwrap())
}

fn run_to_event_cap(config: &CoupledConfig) -> mac_transient::coupled::TransientRecord {
    match run_replication(config) {
        Err(CoupledError::MaxEventsExceeded(r)) => *r,
        other => panic!("expected the event cap to stop the run, got {other:?}"),
    }
}

fn mm1(seed: u64) -> CoupledConfig {
    let mut c = CoupledConfig::new(1, 10_000, 1.0, curve(&[2.0]));
    c.theta = 10_000.0;
    c.max_events = 1_000_000;
    c.seed = seed;
    c
}

#[test]
fn single_queue_matches_mm1_mean() {
    // rho = 1/2, so the time-average number in system is rho / (1 - rho) = 1.
    let r = run_to_event_cap(&mm1(2024));
    assert!((r.time_avg_occupancy - 1.0).abs() < 0.05, "{}", r.time_avg_occupancy);
}

#[test]
fn single_queue_occupancy_is_geometric() {
    let mut c = mm1(7);
    c.occupancy_histogram = Some(30);
    let r = run_to_event_cap(&c);
    let total: f64 = r.occupancy_time.iter().sum();
    assert!((total - r.end_time).abs() < 1e-9 * r.end_time);
    // Stationary law (1 - rho) rho^k with rho = 1/2. Treat the time shares
    // as frequencies over roughly one independent draw per busy cycle.
    let cycles = r.total_events as f64 / 4.0;
    let mut chi2 = 0.0;
    for k in 0..8 {
        let expected = 0.5f64.powi(k as i32 + 1);
        let observed = r.occupancy_time[k] / total;
        chi2 += cycles * (observed - expected).powi(2) / expected;
    }
    // 8 cells; the 0.999 quantile of chi-square(8) is 26.1. Time shares are
    // positively correlated within a cycle, hence the generous bound.
    assert!(chi2 < 60.0, "chi2 = {chi2}");
}

/// Exact mean events and seconds until both queues of the two-queue toy are
/// backlogged, by a dense linear solve over the states with an empty queue.
fn toy_oracle(capacity: usize, lambda: f64, mu: [f64; 2]) -> (f64, f64) {
    // State 0 is (0, 0); states 1..=Q are (k, 0). By symmetry (0, k) mirrors
    // (k, 0).
    let n = capacity + 1;
    let mut a = DMatrix::<f64>::identity(n, n);
    let events = DVector::<f64>::from_element(n, 1.0);
    let mut seconds = DVector::<f64>::zeros(n);
    for k in 0..n {
        if k == 0 {
            let rate = 2.0 * lambda;
            a[(0, 1)] -= 1.0;
            seconds[0] = 1.0 / rate;
            continue;
        }
        let rate = 2.0 * lambda + mu[0];
        seconds[k] = 1.0 / rate;
        // Arrival at the backlogged queue, dropped when full.
        let own = if k == capacity { k } else { k + 1 };
        a[(k, own)] -= lambda / rate;
        // Arrival at the empty queue absorbs; departure drains.
        a[(k, k - 1)] -= mu[0] / rate;
    }
    let lu = a.lu();
    let h = lu.solve(&events).unwrap();
    let t = lu.solve(&seconds).unwrap();
    (h[0], t[0])
}

#[test]
fn toy_oracle_sanity() {
    let (events, _) = toy_oracle(200, 1.0, [2.0, 0.5]);
    // One step to (1, 0), then each visit there absorbs with probability
    // 1/4; the walk on k >= 1 returns to 0 a geometric number of times.
    assert!((events - (5.0 + 2f64.sqrt())).abs() < 1e-9, "{events}");
}

#[test]
fn toy_hitting_events_match_exact_chain() {
    let (events, seconds) = toy_oracle(30, 1.0, [2.0, 0.5]);
    let mut c = CoupledConfig::new(2, 30, 1.0, curve(&[2.0, 0.5]));
    c.stop_at_hit = true;
    c.seed = 99;
    let s = metric1_mean(&c, 20_000).unwrap();
    assert_eq!(s.censored, 0);
    let z_events = (s.events.mean - events) / (s.events.ci_half_width / 1.96);
    let z_time = (s.time.mean - seconds) / (s.time.ci_half_width / 1.96);
    assert!(z_events.abs() < 4.0, "events {} vs {events}", s.events.mean);
    assert!(z_time.abs() < 4.0, "seconds {} vs {seconds}", s.time.mean);
}

#[test]
fn preloaded_queues_start_saturated() {
    let mut c = CoupledConfig::new(4, 20, 3.0, curve(&[5.0, 4.0, 3.5, 2.0]));
    c.preload = 20;
    let r = run_replication(&c).unwrap();
    assert_eq!((r.t_theta, r.t_e, r.hit_event_index), (Some(0.0), None, Some(0)));
}

#[test]
fn replications_replay_byte_for_byte() {
    let mut c = CoupledConfig::new(5, 40, 3.0, curve(&[6.0, 4.5, 3.5, 3.1, 2.8]));
    c.seed = 1234;
    let csv = |recs: &[_]| {
        let mut buf = Vec::new();
        write_records_csv(recs, &mut buf).unwrap();
        buf
    };
    let a = run_replications(&c, 16).unwrap();
    let b = run_replications(&c, 16).unwrap();
    assert_eq!(a, b);
    assert_eq!(csv(&a), csv(&b));
    c.seed = 1235;
    assert_ne!(csv(&a), csv(&run_replications(&c, 16).unwrap()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hit_precedes_escape_precedes_threshold(
        seed in any::<u64>(),
        stations in 2usize..7,
        excess in 0.05f64..0.6,
    ) {
        let rates: Vec<f64> = (0..stations).map(|n| 4.0 / (1.0 + 0.3 * n as f64)).collect();
        let lambda = rates[stations - 1] * (1.0 + excess);
        let mut c = CoupledConfig::new(stations, 25, lambda, curve(&rates));
        c.seed = seed;
        c.record_trajectory = true;
        let r = run_replication(&c).unwrap();
        let (hit, te, tt) = (r.hit_time.unwrap(), r.t_e.unwrap(), r.t_theta.unwrap());
        prop_assert!(hit <= te && te <= tt);
        prop_assert_eq!(tt, r.end_time);
        for p in &r.trajectory {
            prop_assert!(p.max <= 25);
        }
    }
}
