use serde::{Deserialize, Serialize};

use super::backoff::{expected_backoff_slots, SlotProbabilities};
use super::params::{compute_timings, FrameTimings, Protocol, ProtocolParams};
use super::ModelError;

/// Starting point of the iterative solver.
///
/// The decoupled model can have two fixed points right above the stability
/// limit; which one the iteration lands on depends on where it starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStart {
    /// No idle slots, full queues, attempt rate 0.5.
    SaturatedStart,
    /// 1000 idle slots, empty queues, attempt rate 1e-5.
    LightStart,
}

impl SolverStart {
    pub const ALL: [SolverStart; 2] = [SolverStart::SaturatedStart, SolverStart::LightStart];

    fn initial_state(self) -> IterState {
        match self {
            SolverStart::SaturatedStart => IterState {
                tau: 0.5,
                rho: 1.0,
                idle: 0.0,
            },
            SolverStart::LightStart => IterState {
                tau: 1e-5,
                rho: 0.0,
                idle: 1000.0,
            },
        }
    }

    /// Starting state for `n` contenders. With many contenders `p` computed
    /// from `tau = 0.5` rounds to 1, so the start is halved until it does not.
    fn initial_state_for(self, n: usize) -> IterState {
        let mut state = self.initial_state();
        while 1.0 - (1.0 - state.tau).powi(n as i32 - 1) >= 1.0 {
            state.tau *= 0.5;
        }
        state
    }

    pub fn label(self) -> &'static str {
        match self {
            SolverStart::SaturatedStart => "saturated-start",
            SolverStart::LightStart => "light-start",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Weight `g` of the fresh update in `x <- (1 - g) x + g update(x)`.
    pub damping: f64,
    /// Maximum relative change accepted as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

/// A fixed point (or the last iterate, when not converged) of the decoupled
/// renewal-reward model for one tagged station among `contenders`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSolution {
    pub contenders: usize,
    /// Per-station arrival rate; `None` when solved in saturation.
    pub lambda: Option<f64>,
    pub tau: f64,
    pub p: f64,
    pub rho: f64,
    pub attempts: f64,
    /// Service time `D`, in seconds.
    pub service_time: f64,
    /// Idle slots between renewals.
    pub idle_slots: f64,
    /// Mean backoff slots per attempt (DCF only).
    pub backoff_slots: Option<f64>,
    /// Mean backoff slot duration in seconds (DCF only).
    pub mean_slot: Option<f64>,
    /// Per-station throughput in bits/s.
    pub throughput: f64,
    pub init: SolverStart,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
}

impl FixedPointSolution {
    pub fn aggregate_throughput(&self) -> f64 {
        self.contenders as f64 * self.throughput
    }

    pub fn service_rate(&self) -> f64 {
        1.0 / self.service_time
    }
}

#[derive(Debug, Clone, Copy)]
struct IterState {
    tau: f64,
    rho: f64,
    idle: f64,
}

/// Quantities that follow deterministically from the attempt rate.
#[derive(Debug, Clone, Copy)]
struct Derived {
    p: f64,
    attempts: f64,
    service_time: f64,
    backoff_slots: f64,
    /// Contention-slot duration entering the idle-slot term.
    slot: f64,
    mean_slot: Option<f64>,
}

/// One evaluation of the model equations.
struct Model<'a> {
    params: &'a ProtocolParams,
    timings: FrameTimings,
    contenders: usize,
}

impl<'a> Model<'a> {
    fn new(params: &'a ProtocolParams, contenders: usize) -> Self {
        Self {
            params,
            timings: compute_timings(params),
            contenders,
        }
    }

    fn derive(&self, tau: f64) -> Result<Derived, ModelError> {
        let t = &self.timings;
        let others = self.contenders.saturating_sub(1) as i32;
        let p = 1.0 - (1.0 - tau).powi(others);
        if p >= 1.0 {
            return Err(ModelError::CollisionProbabilityOutOfRange(p));
        }
        let attempts = 1.0 / (1.0 - p);
        match self.params.protocol {
            Protocol::Aloha => {
                let backoff_slots = f64::from(self.params.cw_min) / 2.0;
                let backoff = backoff_slots * t.aloha_slot;
                let service_time = (attempts - 1.0) * (backoff + t.collision) + backoff + t.success;
                Ok(Derived {
                    p,
                    attempts,
                    service_time,
                    backoff_slots,
                    slot: t.aloha_slot,
                    mean_slot: None,
                })
            }
            Protocol::Dcf => {
                let probs = SlotProbabilities::new(tau, self.contenders);
                let alpha = probs.mean_slot(self.params.empty_slot, t.success, t.collision);
                let backoff_slots =
                    expected_backoff_slots(p, self.params.cw_min, self.params.backoff_stages)?;
                let backoff = backoff_slots * alpha;
                let service_time = (attempts - 1.0) * (backoff + t.collision) + backoff + t.success;
                Ok(Derived {
                    p,
                    attempts,
                    service_time,
                    backoff_slots,
                    slot: alpha,
                    mean_slot: Some(alpha),
                })
            }
        }
    }

    fn attempt_rate(d: &Derived, idle: f64) -> f64 {
        d.attempts / (d.attempts * (d.backoff_slots + 1.0) + idle)
    }

    fn solution(&self, lambda: Option<f64>, state: IterState, d: &Derived, init: SolverStart) -> FixedPointSolution {
        FixedPointSolution {
            contenders: self.contenders,
            lambda,
            tau: state.tau,
            p: d.p,
            rho: state.rho,
            attempts: d.attempts,
            service_time: d.service_time,
            idle_slots: state.idle,
            backoff_slots: d.mean_slot.map(|_| d.backoff_slots),
            mean_slot: d.mean_slot,
            throughput: state.rho * self.params.payload_bits / d.service_time,
            init,
            converged: false,
            iterations: 0,
            residual: f64::INFINITY,
        }
    }
}

fn relative_change(old: f64, new: f64, floor: f64) -> f64 {
    let scale = old.abs().max(new.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (new - old).abs() / scale
    }
}

fn check_options(opts: &SolverOptions) -> Result<(), ModelError> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(ModelError::InvalidOptions(format!("damping must be in (0, 1], got {}", opts.damping)));
    }
    if !(opts.tolerance > 0.0) || opts.max_iterations == 0 {
        return Err(ModelError::InvalidOptions("tolerance and max_iterations must be positive".into()));
    }
    Ok(())
}

/// Solves the unsaturated decoupled model for `contenders` stations, each
/// receiving Poisson traffic at `lambda` packets/s.
///
/// The attempt rate, queue occupancy and idle slots are iterated with
/// damping; the collision probability and service time are re-derived from
/// the attempt rate on every pass, so `p = 1 - (1 - tau)^(n-1)` holds exactly
/// in the returned solution. Once converged, `rho` and `idle_slots` are
/// reported as the exact update from the final attempt rate, which leaves the
/// attempt-rate equation as the only one satisfied to within `tolerance`.
pub fn solve_fixed_point(
    params: &ProtocolParams,
    contenders: usize,
    lambda: f64,
    init: SolverStart,
    opts: &SolverOptions,
) -> Result<FixedPointSolution, ModelError> {
    params.validate()?;
    check_options(opts)?;
    if contenders < 2 {
        return Err(ModelError::TooFewContenders(contenders));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(ModelError::InvalidRate(lambda));
    }
    let model = Model::new(params, contenders);
    let g = opts.damping;
    let mut state = init.initial_state_for(contenders);
    let mut residual = f64::INFINITY;
    let mut derived = model.derive(state.tau)?;

    for iteration in 1..=opts.max_iterations {
        derived = model.derive(state.tau)?;
        let rho = (lambda * derived.service_time).min(1.0);
        let idle = (1.0 - rho) / -(-lambda * derived.slot).exp_m1();
        let tau = Model::attempt_rate(&derived, idle);

        residual = relative_change(state.tau, tau, 0.0)
            .max(relative_change(state.rho, rho, 0.0))
            .max(relative_change(state.idle, idle, 1.0));
        if residual < opts.tolerance {
            let polished = IterState { tau: state.tau, rho, idle };
            let mut sol = model.solution(Some(lambda), polished, &derived, init);
            sol.converged = true;
            sol.iterations = iteration;
            sol.residual = residual;
            return Ok(sol);
        }
        state = IterState {
            tau: (1.0 - g) * state.tau + g * tau,
            rho: (1.0 - g) * state.rho + g * rho,
            idle: (1.0 - g) * state.idle + g * idle,
        };
    }
    let mut sol = model.solution(Some(lambda), state, &derived, init);
    sol.iterations = opts.max_iterations;
    sol.residual = residual;
    Err(ModelError::NonConvergence(Box::new(sol)))
}

/// Solves the model with every station permanently backlogged (`rho = 1`,
/// no idle slots) and `n` contenders.
pub fn solve_saturated(params: &ProtocolParams, n: usize, opts: &SolverOptions) -> Result<FixedPointSolution, ModelError> {
    params.validate()?;
    check_options(opts)?;
    if n < 1 {
        return Err(ModelError::TooFewContenders(n));
    }
    let model = Model::new(params, n);
    let g = opts.damping;
    let mut state = SolverStart::SaturatedStart.initial_state_for(n);
    let mut residual = f64::INFINITY;
    let mut derived = model.derive(state.tau)?;
    for iteration in 1..=opts.max_iterations {
        derived = model.derive(state.tau)?;
        let tau = Model::attempt_rate(&derived, 0.0);
        residual = relative_change(state.tau, tau, 0.0);
        if residual < opts.tolerance {
            let mut sol = model.solution(None, state, &derived, SolverStart::SaturatedStart);
            sol.converged = true;
            sol.iterations = iteration;
            sol.residual = residual;
            return Ok(sol);
        }
        state.tau = (1.0 - g) * state.tau + g * tau;
    }
    let mut sol = model.solution(None, state, &derived, SolverStart::SaturatedStart);
    sol.iterations = opts.max_iterations;
    sol.residual = residual;
    Err(ModelError::NonConvergence(Box::new(sol)))
}

/// Per-station service rate `1/D` in packets/s with `n` saturated contenders.
pub fn saturated_service_rate(params: &ProtocolParams, n: usize) -> Result<f64, ModelError> {
    saturated_service_rate_with(params, n, &SolverOptions::default())
}

pub fn saturated_service_rate_with(params: &ProtocolParams, n: usize, opts: &SolverOptions) -> Result<f64, ModelError> {
    Ok(solve_saturated(params, n, opts)?.service_rate())
}

/// Re-evaluates every model equation at a reported solution and returns the
/// largest relative discrepancy among `(tau, p, rho, D, I)`.
pub fn equation_residual(params: &ProtocolParams, sol: &FixedPointSolution) -> Result<f64, ModelError> {
    let model = Model::new(params, sol.contenders);
    let d = model.derive(sol.tau)?;
    let (rho, idle) = match sol.lambda {
        Some(lambda) => {
            let rho = (lambda * d.service_time).min(1.0);
            (rho, (1.0 - rho) / -(-lambda * d.slot).exp_m1())
        }
        None => (1.0, 0.0),
    };
    let tau = Model::attempt_rate(&d, idle);
    Ok(relative_change(sol.tau, tau, 0.0)
        .max(relative_change(sol.p, d.p, 0.0))
        .max(relative_change(sol.rho, rho, 0.0))
        .max(relative_change(sol.service_time, d.service_time, 0.0))
        .max(relative_change(sol.idle_slots, idle, 1.0)))
}
