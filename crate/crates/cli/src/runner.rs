//! Executes a validated scenario and writes its artifacts.

use std::sync::Arc;

use mac_transient::backlog::{build_chain, expected_hitting_time_seconds, hitting_times, ChainError};
use mac_transient::coupled::{self, CoupledConfig, MeanEstimate, Metric1Summary, Metric2Samples};
use mac_transient::dcf::{self, DcfSimConfig, DcfSimError};
use mac_transient::models::{
    service_rate_curve_with, solve_fixed_point, solve_saturated, FixedPointSolution, ModelError, ServiceRateCurve,
    SolverStart,
};
use mac_transient::rng::seed_for;
use mac_transient::stability::assess;
use mac_transient::stats::{compare_fits, ecdf, write_fits_json};

use crate::error::CliError;
use crate::output::OutputDir;
use crate::scenario::{Method, Point, Scenario, Variant};

/// One (configuration, network point) pair.
struct Case<'a> {
    index: usize,
    variant: &'a Variant,
    point: Point,
}

impl Case<'_> {
    fn lambda(&self) -> f64 {
        // Validation guarantees a rate for every method that calls this.
        self.point.lambda.expect("validated arrival rate")
    }

    fn tag(&self) -> String {
        match self.point.lambda {
            Some(l) => format!("{}_n{}_lambda{}", self.variant.label, self.point.stations, l),
            None => format!("{}_n{}", self.variant.label, self.point.stations),
        }
    }

    fn seed(&self, master: u64) -> u64 {
        seed_for(master, self.index as u64)
    }
}

fn cases(s: &Scenario) -> Vec<Case<'_>> {
    s.variants
        .iter()
        .flat_map(|v| s.points.iter().map(move |&p| (v, p)))
        .enumerate()
        .map(|(index, (variant, point))| Case { index, variant, point })
        .collect()
}

fn opt(v: Option<impl ToString>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_rows(header: &[&str], rows: &[Vec<String>], out: &mut Vec<u8>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    log::info!(
        "running `{}` ({}), {} case(s)",
        s.raw.name,
        s.raw.method.label(),
        s.variants.len() * s.points.len()
    );
    match s.raw.method {
        Method::FixedPoint => fixed_point(s, out),
        Method::Stability => stability(s, out),
        Method::Method2 => method2(s, out),
        Method::Method1 => method1(s, out),
        Method::Method3 => method3(s, out),
        Method::Mitigation => mitigation(s, out),
    }
}

fn solution_row(label: &str, n: usize, init: &str, sol: &FixedPointSolution) -> Vec<String> {
    vec![
        label.to_string(),
        n.to_string(),
        opt(sol.lambda),
        init.to_string(),
        (sol.aggregate_throughput() / 1e6).to_string(),
        sol.tau.to_string(),
        sol.p.to_string(),
        sol.rho.to_string(),
        sol.converged.to_string(),
    ]
}

fn fixed_point(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for c in cases(s) {
        let n = c.point.stations;
        let p = &c.variant.params;
        let results: Vec<(&str, Result<FixedPointSolution, ModelError>)> = match c.point.lambda {
            Some(l) => SolverStart::ALL
                .iter()
                .map(|&init| (init.label(), solve_fixed_point(p, n, l, init, &s.solver)))
                .collect(),
            None => vec![("saturated", solve_saturated(p, n, &s.solver))],
        };
        for (init, r) in results {
            let sol = match r {
                Ok(sol) => sol,
                Err(ModelError::NonConvergence(sol)) => {
                    log::warn!("{} from {init}: no convergence (residual {:.3e})", c.tag(), sol.residual);
                    *sol
                }
                Err(e) => return Err(e.into()),
            };
            rows.push(solution_row(&c.variant.label, n, init, &sol));
        }
    }
    out.write("fixed_point.csv", |w| {
        csv_rows(&["config", "N", "lambda", "init", "S_mbps", "tau", "p", "rho", "converged"], &rows, w)
    })
}

fn curve_for(s: &Scenario, v: &Variant, stations: usize) -> Result<ServiceRateCurve, CliError> {
    Ok(service_rate_curve_with(&v.params, stations, &s.solver)?)
}

fn stability(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let max_n = s.points.iter().map(|p| p.stations).max().unwrap_or(1);
    let mut rows = Vec::new();
    for v in &s.variants {
        let curve = curve_for(s, v, max_n)?;
        out.write(&format!("curve_{}.csv", v.label), |w| curve.write_csv(w))?;
        for p in &s.points {
            let lambda = p.lambda.expect("validated arrival rate");
            let sub = ServiceRateCurve::from_rates(curve.rates()[..p.stations].to_vec())?;
            let r = assess(lambda, &sub);
            rows.push(vec![
                v.label.clone(),
                p.stations.to_string(),
                lambda.to_string(),
                r.mu_sat.to_string(),
                r.stable.to_string(),
                opt(r.n_prime),
                r.margin.to_string(),
            ]);
        }
    }
    out.write("stability.csv", |w| {
        csv_rows(&["config", "N", "lambda", "mu_N", "stable", "N_prime", "margin"], &rows, w)
    })
}

/// Reduced-chain hitting time from the empty state, `None` when stable.
fn reduced_chain(
    curve: &ServiceRateCurve,
    stations: usize,
    lambda: f64,
) -> Result<Option<(mac_transient::backlog::BacklogChain, Vec<f64>, f64)>, CliError> {
    let chain = match build_chain(stations, lambda, curve) {
        Ok(c) => c,
        Err(ChainError::StableRegime { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let h = hitting_times(&chain)?;
    let secs = expected_hitting_time_seconds(&chain, &h)?;
    Ok(Some((chain, h, secs)))
}

fn method2(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for c in cases(s) {
        let curve = curve_for(s, c.variant, c.point.stations)?;
        let lambda = c.lambda();
        let row_head = vec![c.variant.label.clone(), c.point.stations.to_string(), lambda.to_string()];
        match reduced_chain(&curve, c.point.stations, lambda)? {
            Some((chain, h, secs)) => {
                out.write(&format!("chain_{}.csv", c.tag()), |w| chain.write_csv(&h, w))?;
                let mut row = row_head;
                row.extend([chain.n_prime.to_string(), h[0].to_string(), secs.to_string()]);
                rows.push(row);
            }
            None => {
                log::info!("{}: stable, no limiting state", c.tag());
                let mut row = row_head;
                row.extend([String::new(), String::new(), String::new()]);
                rows.push(row);
            }
        }
    }
    out.write("method2.csv", |w| {
        csv_rows(&["config", "N", "lambda", "N_prime", "h0", "h0_seconds"], &rows, w)
    })
}

fn estimate_fields(e: Option<MeanEstimate>) -> [String; 2] {
    match e {
        Some(e) => [e.mean.to_string(), e.ci_half_width.to_string()],
        None => [String::new(), String::new()],
    }
}

/// ECDF and fitted families of the escape times, when there are enough.
fn write_escape_distribution(out: &mut OutputDir, tag: &str, samples: &[f64]) -> Result<(), CliError> {
    let e = ecdf(samples)?;
    out.write(&format!("ecdf_{tag}.csv"), |w| e.write_csv(w))?;
    match compare_fits(samples) {
        Ok(fits) => out.write(&format!("fits_{tag}.json"), |w| write_fits_json(&fits, w)),
        Err(err) => {
            log::warn!("{tag}: no fits ({err})");
            Ok(())
        }
    }
}

fn escape_fields(m: &Result<Metric2Samples, impl std::fmt::Display>) -> Vec<String> {
    match m {
        Ok(m) => {
            let est = MeanEstimate::from_samples(&m.samples);
            let [mean, ci] = estimate_fields(est);
            vec![m.samples.len().to_string(), m.censored.to_string(), m.undefined.to_string(), mean, ci]
        }
        Err(_) => vec!["0".into(), String::new(), String::new(), String::new(), String::new()],
    }
}

fn method1(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let net = &s.raw.network;
    let reps = s.raw.replications;
    let mut rows = Vec::new();
    for c in cases(s) {
        let tag = c.tag();
        let lambda = c.lambda();
        let curve = Arc::new(curve_for(s, c.variant, c.point.stations)?);
        let mut cfg = CoupledConfig::new(c.point.stations, net.capacity, lambda, Arc::clone(&curve));
        if let Some(t) = net.theta {
            cfg.theta = t;
        }
        cfg.preload = net.preload;
        if let Some(m) = net.max_events {
            cfg.max_events = m;
        }
        cfg.seed = c.seed(s.raw.master_seed);
        cfg.validate()?;

        log::info!("{tag}: {reps} coupled-queue replication(s)");
        let records = coupled::run_replications(&cfg, reps)?;
        out.write(&format!("records_{tag}.csv"), |w| coupled::write_records_csv(&records, w))?;

        let hits = Metric1Summary::from_records(&records);
        let escapes = Metric2Samples::from_records(&records);
        if let Ok(m) = &escapes {
            write_escape_distribution(out, &tag, &m.samples)?;
        } else if let Err(e) = &escapes {
            log::warn!("{tag}: {e}");
        }
        let h0 = reduced_chain(&curve, c.point.stations, lambda)?.map(|(_, h, _)| h[0]);

        let mut row = vec![c.variant.label.clone(), c.point.stations.to_string(), lambda.to_string(), reps.to_string()];
        row.push(opt(hits.map(|h| h.censored)));
        row.extend(estimate_fields(hits.map(|h| h.events)));
        row.extend(estimate_fields(hits.map(|h| h.time)));
        row.push(opt(h0));
        row.extend(escape_fields(&escapes));
        rows.push(row);

        for i in 0..net.traces.min(reps) {
            let mut t = cfg.clone();
            t.seed = seed_for(cfg.seed, i as u64);
            t.record_trajectory = true;
            let rec = match coupled::run_replication(&t) {
                Ok(r) => r,
                Err(coupled::CoupledError::MaxEventsExceeded(r)) => *r,
                Err(e) => return Err(e.into()),
            };
            out.write(&format!("trajectory_{tag}_r{i}.csv"), |w| {
                coupled::write_trajectory_csv(&rec.trajectory, w)
            })?;
        }
    }
    out.write("summary.csv", |w| {
        csv_rows(
            &[
                "config",
                "N",
                "lambda",
                "replications",
                "hit_censored",
                "hit_events_mean",
                "hit_events_ci95",
                "hit_time_mean_s",
                "hit_time_ci95_s",
                "h0_reduced_chain",
                "T_E_n",
                "theta_censored",
                "T_E_undefined",
                "T_E_mean_s",
                "T_E_ci95_s",
            ],
            &rows,
            w,
        )
    })
}

fn dcf_config(s: &Scenario, c: &Case<'_>) -> Result<DcfSimConfig, CliError> {
    let net = &s.raw.network;
    let mut cfg = DcfSimConfig::new(
        c.variant.params.clone(),
        c.point.stations,
        net.capacity,
        c.lambda(),
        net.horizon_s,
    );
    if let Some(t) = net.theta {
        cfg.theta = t;
    }
    cfg.preload = net.preload;
    cfg.throughput_bin = net.throughput_bin_s;
    cfg.traffic = s.traffic;
    cfg.seed = c.seed(s.raw.master_seed);
    cfg.validate()?;
    Ok(cfg)
}

fn write_trace(out: &mut OutputDir, name: &str, trace: &dcf::SimTrace) -> Result<(), CliError> {
    out.write(&format!("throughput_{name}.csv"), |w| dcf::write_throughput_csv(trace, w))?;
    out.write(&format!("queues_{name}.csv"), |w| {
        coupled::write_trajectory_csv(&trace.queue_series, w)
    })
}

fn method3(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let reps = s.raw.replications;
    let mut rows = Vec::new();
    for c in cases(s) {
        let tag = c.tag();
        let cfg = dcf_config(s, &c)?;
        log::info!("{tag}: {reps} slot-level replication(s), horizon {} s", cfg.horizon);
        let mut stop = cfg.clone();
        stop.stop_at_theta = true;
        stop.record_series = false;
        let traces = dcf::run_replications(&stop, reps)?;
        out.write(&format!("runs_{tag}.csv"), |w| dcf::write_summary_csv(&traces, w))?;
        let escapes = dcf::escape_samples(&traces);
        match &escapes {
            Ok(m) => write_escape_distribution(out, &tag, &m.samples)?,
            Err(e) => log::warn!("{tag}: {e}"),
        }
        let mut row = vec![c.variant.label.clone(), c.point.stations.to_string(), c.lambda().to_string(), reps.to_string()];
        row.extend(escape_fields(&escapes));
        rows.push(row);

        for i in 0..s.raw.network.traces.min(reps) {
            let mut t = cfg.clone();
            t.seed = seed_for(cfg.seed, i as u64);
            write_trace(out, &format!("{tag}_r{i}"), &dcf::run(&t)?)?;
        }
    }
    out.write("summary.csv", |w| {
        csv_rows(
            &[
                "config",
                "N",
                "lambda",
                "replications",
                "T_E_n",
                "theta_censored",
                "T_E_undefined",
                "T_E_mean_s",
                "T_E_ci95_s",
            ],
            &rows,
            w,
        )
    })
}

fn mitigation(s: &Scenario, out: &mut OutputDir) -> Result<(), CliError> {
    let reps = s.raw.replications;
    let mut rows = Vec::new();
    for c in cases(s) {
        let tag = c.tag();
        let base = dcf_config(s, &c)?;
        let hold = match s.raw.network.mitigation_delay_s {
            Some(d) => d,
            None => dcf::default_mitigation_delay(&c.variant.params, c.point.stations).map_err(DcfSimError::from)?,
        };
        for (mode, delay) in [("plain", None), ("hold", Some(hold))] {
            let mut cfg = base.clone();
            cfg.mitigation_mean_delay = delay;
            log::info!("{tag} {mode}: {reps} replication(s), horizon {} s", cfg.horizon);
            let traces = dcf::run_replications(&cfg, reps)?;
            let crossed = traces.iter().filter(|t| t.reached_theta()).count();
            let mean_tp = traces.iter().map(|t| t.aggregate_throughput()).sum::<f64>() / traces.len() as f64;
            let first_cross = traces.iter().filter_map(|t| t.t_theta).reduce(f64::min);
            rows.push(vec![
                c.variant.label.clone(),
                c.point.stations.to_string(),
                c.lambda().to_string(),
                mode.to_string(),
                opt(delay),
                reps.to_string(),
                crossed.to_string(),
                (mean_tp / 1e6).to_string(),
                opt(first_cross),
            ]);
            for (i, t) in traces.iter().take(s.raw.network.traces.max(1)).enumerate() {
                write_trace(out, &format!("{tag}_{mode}_r{i}"), t)?;
            }
        }
    }
    out.write("summary.csv", |w| {
        csv_rows(
            &[
                "config",
                "N",
                "lambda",
                "mode",
                "hold_mean_s",
                "replications",
                "crossed_theta",
                "mean_throughput_mbps",
                "first_T_theta_s",
            ],
            &rows,
            w,
        )
    })
}
