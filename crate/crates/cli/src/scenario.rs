//! Scenario files: TOML with a top-level table plus `[protocol]`,
//! `[network]`, `[sweep]` and `[solver]` sections.

use std::path::{Path, PathBuf};

use mac_transient::dcf::{Traffic, DEFAULT_HORIZON};
use mac_transient::models::{Protocol, ProtocolParams, SolverOptions};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FixedPoint,
    Stability,
    Method1,
    Method2,
    Method3,
    Mitigation,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::FixedPoint => "fixed-point",
            Method::Stability => "stability",
            Method::Method1 => "method1",
            Method::Method2 => "method2",
            Method::Method3 => "method3",
            Method::Mitigation => "mitigation",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub method: Method,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub network: NetworkSection,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub solver: SolverSection,
}

fn default_replications() -> usize {
    1
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: Option<Protocol>,
    pub cw_min: Option<u32>,
    pub backoff_stages: Option<u32>,
    pub payload_bytes: Option<u32>,
    /// Several configurations at once, e.g. `["dcf:32:5", "aloha:32"]`.
    pub variants: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    #[default]
    Poisson,
    Cbr,
    Bursty,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub stations: usize,
    pub capacity: u32,
    pub theta: Option<f64>,
    pub preload: u32,
    pub lambda: Option<f64>,
    pub horizon_s: f64,
    pub throughput_bin_s: f64,
    pub traffic: TrafficKind,
    pub burst_size: Option<u32>,
    pub burst_gap_s: Option<f64>,
    pub mitigation_delay_s: Option<f64>,
    pub max_events: Option<u64>,
    /// Full-horizon runs whose throughput and queue series are written out.
    pub traces: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            stations: 50,
            capacity: 1000,
            theta: None,
            preload: 0,
            lambda: None,
            horizon_s: DEFAULT_HORIZON,
            throughput_bin_s: 1.0,
            traffic: TrafficKind::Poisson,
            burst_size: None,
            burst_gap_s: None,
            mitigation_delay_s: None,
            max_events: None,
            traces: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Lambda,
    Stations,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Option<Vec<f64>>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub step: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub damping: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
}

/// A protocol configuration with a file-name friendly label.
#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub params: ProtocolParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub stations: usize,
    pub lambda: Option<f64>,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub raw: RawScenario,
    pub hash: String,
    pub variants: Vec<Variant>,
    pub points: Vec<Point>,
    pub solver: SolverOptions,
    pub traffic: Traffic,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_variant(entry: &str, payload_bytes: u32) -> Result<Variant, CliError> {
    let parts: Vec<&str> = entry.split(':').collect();
    let num = |s: &str, what: &str| {
        s.parse::<u32>()
            .map_err(|_| config_err(format!("protocol.variants: `{entry}`: {what} `{s}` is not a non-negative integer")))
    };
    let (protocol, w, m) = match parts.as_slice() {
        ["dcf", w, m] => (Protocol::Dcf, num(w, "cw_min")?, num(m, "backoff_stages")?),
        ["aloha", w] => (Protocol::Aloha, num(w, "cw_min")?, 0),
        _ => {
            return Err(config_err(format!(
                "protocol.variants: `{entry}` must be `dcf:<W>:<m>` or `aloha:<W>`"
            )))
        }
    };
    let params = ProtocolParams::ieee80211b(protocol, w, m).with_payload_bytes(f64::from(payload_bytes));
    Ok(Variant {
        label: variant_label(&params),
        params,
    })
}

fn variant_label(p: &ProtocolParams) -> String {
    match p.protocol {
        Protocol::Dcf => format!("dcf-w{}-m{}", p.cw_min, p.backoff_stages),
        Protocol::Aloha => format!("aloha-w{}", p.cw_min),
    }
}

pub fn load(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse(text: &str) -> Result<Scenario, CliError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| config_err(e.to_string().trim_end().to_string()))?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    validate(raw, hash)
}

fn validate(raw: RawScenario, hash: String) -> Result<Scenario, CliError> {
    if raw.name.trim().is_empty() {
        return Err(config_err("name: must not be empty"));
    }
    if raw.replications < 1 {
        return Err(config_err("replications: must be >= 1"));
    }

    let proto = &raw.protocol;
    let payload = proto.payload_bytes.unwrap_or(1500);
    if payload == 0 {
        return Err(config_err("protocol.payload_bytes: must be > 0"));
    }
    let variants = match &proto.variants {
        Some(list) => {
            if proto.kind.is_some() || proto.cw_min.is_some() || proto.backoff_stages.is_some() {
                return Err(config_err(
                    "protocol: give either `variants` or `kind`/`cw_min`/`backoff_stages`, not both",
                ));
            }
            if list.is_empty() {
                return Err(config_err("protocol.variants: must not be empty"));
            }
            list.iter().map(|s| parse_variant(s, payload)).collect::<Result<Vec<_>, _>>()?
        }
        None => {
            let kind = proto.kind.ok_or_else(|| config_err("protocol.kind: missing (`dcf` or `aloha`)"))?;
            let w = proto.cw_min.ok_or_else(|| config_err("protocol.cw_min: missing"))?;
            let m = match kind {
                Protocol::Dcf => proto
                    .backoff_stages
                    .ok_or_else(|| config_err("protocol.backoff_stages: missing for dcf"))?,
                Protocol::Aloha => proto.backoff_stages.unwrap_or(0),
            };
            let params = ProtocolParams::ieee80211b(kind, w, m).with_payload_bytes(f64::from(payload));
            vec![Variant {
                label: variant_label(&params),
                params,
            }]
        }
    };
    for v in &variants {
        v.params
            .validate()
            .map_err(|e| config_err(format!("protocol ({}): {e}", v.label)))?;
    }

    let net = &raw.network;
    if net.stations < 1 {
        return Err(config_err("network.stations: must be >= 1"));
    }
    if net.capacity < 1 {
        return Err(config_err("network.capacity: must be >= 1"));
    }
    if let Some(theta) = net.theta {
        if !(theta > 0.0 && theta <= f64::from(net.capacity)) {
            return Err(config_err(format!(
                "network.theta: must be in (0, capacity = {}], got {theta}",
                net.capacity
            )));
        }
    }
    if net.preload > net.capacity {
        return Err(config_err("network.preload: must not exceed network.capacity"));
    }
    if !(net.horizon_s.is_finite() && net.horizon_s > 0.0) {
        return Err(config_err("network.horizon_s: must be finite and > 0"));
    }
    if !(net.throughput_bin_s.is_finite() && net.throughput_bin_s > 0.0) {
        return Err(config_err("network.throughput_bin_s: must be finite and > 0"));
    }
    if let Some(d) = net.mitigation_delay_s {
        if !(d.is_finite() && d > 0.0) {
            return Err(config_err("network.mitigation_delay_s: must be finite and > 0"));
        }
    }
    if net.max_events == Some(0) {
        return Err(config_err("network.max_events: must be >= 1"));
    }
    let traffic = match net.traffic {
        TrafficKind::Poisson => Traffic::Poisson,
        TrafficKind::Cbr => Traffic::Cbr,
        TrafficKind::Bursty => {
            let burst_size = net
                .burst_size
                .ok_or_else(|| config_err("network.burst_size: required for bursty traffic"))?;
            let burst_gap = net
                .burst_gap_s
                .ok_or_else(|| config_err("network.burst_gap_s: required for bursty traffic"))?;
            if burst_size < 1 || !(burst_gap.is_finite() && burst_gap >= 0.0) {
                return Err(config_err("network.burst_size must be >= 1 and network.burst_gap_s >= 0"));
            }
            Traffic::Bursty { burst_size, burst_gap }
        }
    };
    if net.traffic != TrafficKind::Bursty && (net.burst_size.is_some() || net.burst_gap_s.is_some()) {
        return Err(config_err("network.burst_size/burst_gap_s: only valid with traffic = \"bursty\""));
    }

    let points = sweep_points(&raw)?;
    let needs_lambda = raw.method != Method::FixedPoint || points.iter().any(|p| p.lambda.is_some());
    for p in &points {
        match p.lambda {
            Some(l) if !(l.is_finite() && l > 0.0) => {
                return Err(config_err(format!("arrival rate must be finite and > 0, got {l}")))
            }
            None if needs_lambda => {
                return Err(config_err("network.lambda: required unless the sweep variable is `lambda`"))
            }
            _ => {}
        }
        if p.stations < 1 {
            return Err(config_err("sweep.values: station counts must be >= 1"));
        }
        if raw.method == Method::FixedPoint && p.stations < 2 {
            return Err(config_err("fixed-point scenarios need at least 2 stations"));
        }
    }
    if matches!(raw.method, Method::Method3 | Method::Mitigation) {
        if let Some(v) = variants.iter().find(|v| v.params.protocol != Protocol::Dcf) {
            return Err(config_err(format!(
                "protocol: method `{}` simulates DCF only, got `{}`",
                raw.method.label(),
                v.label
            )));
        }
    }

    let mut solver = SolverOptions::default();
    if let Some(d) = raw.solver.damping {
        solver.damping = d;
    }
    if let Some(t) = raw.solver.tolerance {
        solver.tolerance = t;
    }
    if let Some(i) = raw.solver.max_iterations {
        solver.max_iterations = i;
    }
    if !(solver.damping > 0.0 && solver.damping <= 1.0) {
        return Err(config_err("solver.damping: must be in (0, 1]"));
    }
    if !(solver.tolerance > 0.0 && solver.tolerance.is_finite()) {
        return Err(config_err("solver.tolerance: must be finite and > 0"));
    }
    if solver.max_iterations < 1 {
        return Err(config_err("solver.max_iterations: must be >= 1"));
    }

    Ok(Scenario {
        raw,
        hash,
        variants,
        points,
        solver,
        traffic,
    })
}

fn sweep_points(raw: &RawScenario) -> Result<Vec<Point>, CliError> {
    let base = Point {
        stations: raw.network.stations,
        lambda: raw.network.lambda,
    };
    let Some(sweep) = &raw.sweep else {
        return Ok(vec![base]);
    };
    let values = match (&sweep.values, sweep.start, sweep.stop, sweep.step) {
        (Some(v), None, None, None) => v.clone(),
        (None, Some(start), Some(stop), Some(step)) => {
            if !(step > 0.0 && stop >= start) {
                return Err(config_err("sweep: need step > 0 and stop >= start"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| start + step * i as f64).collect()
        }
        _ => return Err(config_err("sweep: give either `values` or all of `start`, `stop`, `step`")),
    };
    if values.is_empty() {
        return Err(config_err("sweep.values: must not be empty"));
    }
    values
        .iter()
        .map(|&v| match sweep.variable {
            SweepVariable::Lambda => Ok(Point {
                lambda: Some(v),
                ..base
            }),
            SweepVariable::Stations => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(config_err(format!("sweep.values: station count {v} is not a positive integer")));
                }
                Ok(Point {
                    stations: v as usize,
                    ..base
                })
            }
        })
        .collect()
}
