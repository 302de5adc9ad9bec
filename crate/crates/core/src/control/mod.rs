//! Closed-loop controllers: the offline optimum, centralized predictive
//! control, and distributed truncated predictive control with exact or
//! forecast disturbances.

pub mod audit;
mod record;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::costs::{CostSchedule, NodeCost};
use crate::forecast::{ForecastError, ForecastLog, ForecastModel, Forecaster, ParamTrajectory};
use crate::lti::{LtiError, NetworkedSystem};
use crate::network::TruncationSet;
use crate::ocp::{OcpError, OcpProblem, Support, TerminalSpec};
pub use audit::{Audit, AuditReport, AuditedInfo, Disturbances};
pub use record::{RunRecord, StepStats};

/// Slack below which a negative regret is treated as a logic error.
pub const REGRET_SLACK: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("solve failed at t = {t}{}: {source}", agent.map(|i| format!(", agent {i}")).unwrap_or_default())]
    Solve {
        t: usize,
        agent: Option<usize>,
        source: OcpError,
    },
    #[error(transparent)]
    Dynamics(#[from] LtiError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error("prediction horizon k = {k} outside 1..={horizon}")]
    BadLookahead { k: usize, horizon: usize },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("runs come from different scenarios: {0}")]
    Mismatch(String),
    #[error("regret {value:e} is below the numerical slack")]
    NegativeRegret { value: f64 },
    #[error("target is not reachable in one step (residual {residual:e})")]
    Unreachable { residual: f64 },
}

/// One closed-loop experiment: system, costs, initial state and the realized
/// disturbance sequence `w_0..w_{T-1}`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: Arc<NetworkedSystem>,
    pub schedule: Arc<CostSchedule>,
    pub x0: DVector<f64>,
    pub disturbances: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Scenario {
    pub fn new(
        system: Arc<NetworkedSystem>,
        schedule: Arc<CostSchedule>,
        x0: DVector<f64>,
        disturbances: Vec<DVector<f64>>,
        seed: u64,
    ) -> Result<Self, ControlError> {
        let n = system.state_dim();
        if disturbances.is_empty() {
            return Err(ControlError::Scenario("horizon T must be at least 1".into()));
        }
        if schedule.horizon() != disturbances.len() {
            return Err(ControlError::Scenario(format!(
                "cost schedule covers {} steps, disturbances {}",
                schedule.horizon(),
                disturbances.len()
            )));
        }
        if schedule.state_layout().total() != n || schedule.input_layout().total() != system.input_dim() {
            return Err(ControlError::Scenario("cost dimensions do not match the system".into()));
        }
        if x0.len() != n || disturbances.iter().any(|w| w.len() != n) {
            return Err(ControlError::Scenario("state dimension mismatch".into()));
        }
        Ok(Self {
            system,
            schedule,
            x0,
            disturbances,
            seed,
        })
    }

    /// Total horizon `T`.
    pub fn horizon(&self) -> usize {
        self.disturbances.len()
    }

    fn check_lookahead(&self, k: usize) -> Result<(), ControlError> {
        if k == 0 || k > self.horizon() {
            return Err(ControlError::BadLookahead { k, horizon: self.horizon() });
        }
        Ok(())
    }

    fn rollout(&self, inputs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, ControlError> {
        Ok(self.system.rollout(&self.x0, inputs, &self.disturbances)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerTag {
    Opt,
    Pc { k: usize },
    Dtpc { k: usize, kappa: usize },
    Udtpc { k: usize, kappa: usize, model: ForecastModel },
}

impl ControllerTag {
    pub fn k(&self) -> Option<usize> {
        match self {
            ControllerTag::Opt => None,
            ControllerTag::Pc { k } | ControllerTag::Dtpc { k, .. } | ControllerTag::Udtpc { k, .. } => Some(*k),
        }
    }

    pub fn kappa(&self) -> Option<usize> {
        match self {
            ControllerTag::Dtpc { kappa, .. } | ControllerTag::Udtpc { kappa, .. } => Some(*kappa),
            _ => None,
        }
    }
}

/// File-name friendly label, e.g. `dtpc_k11_kappa2`.
impl fmt::Display for ControllerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerTag::Opt => write!(f, "opt"),
            ControllerTag::Pc { k } => write!(f, "pc_k{k}"),
            ControllerTag::Dtpc { k, kappa } => write!(f, "dtpc_k{k}_kappa{kappa}"),
            ControllerTag::Udtpc { k, kappa, model } => write!(f, "udtpc_k{k}_kappa{kappa}_{}", model.kind.name()),
        }
    }
}

/// Offline optimum: one solve over the whole horizon with terminal cost `f_T`.
pub fn run_opt(sc: &Scenario) -> Result<RunRecord, ControlError> {
    let p = OcpProblem::full(&sc.system, &sc.schedule, 0, &sc.x0, &sc.disturbances, TerminalSpec::StageCost)
        .map_err(|e| solve_err(0, None, e))?;
    let s = p.solve().map_err(|e| solve_err(0, None, e))?;
    let mut stats = vec![StepStats::default(); sc.horizon()];
    stats[0].record(&s);
    let states = sc.rollout(&s.inputs)?;
    RunRecord::new(ControllerTag::Opt, sc, states, s.inputs, stats, None)
}

/// Centralized predictive control with lookahead `k`.
///
/// Steps `t < T - k` solve a `k`-step problem with the terminal regularizer
/// and apply the first input; at `t = T - k` a single solve with terminal cost
/// `f_T` supplies the remaining `k` inputs.
pub fn run_pc(sc: &Scenario, k: usize) -> Result<RunRecord, ControlError> {
    sc.check_lookahead(k)?;
    let t_total = sc.horizon();
    let audit = Audit::default();
    let mut stats = vec![StepStats::default(); t_total];
    let mut x = sc.x0.clone();
    let mut inputs = Vec::with_capacity(t_total);
    let solve = |t: usize, x: &DVector<f64>, terminal: TerminalSpec| {
        let info = AuditedInfo {
            system: &sc.system,
            schedule: &sc.schedule,
            time: t,
            lookahead: k,
            state: x,
            disturbances: Disturbances::Truth(&sc.disturbances),
            truncation: None,
            audit: &audit,
        };
        OcpProblem::assemble(&info, Support::full(sc.system.graph()), t, k, terminal)
            .and_then(|p| p.solve())
            .map_err(|e| solve_err(t, None, e))
    };
    for t in 0..t_total - k {
        let s = solve(t, &x, TerminalSpec::Regularizer)?;
        stats[t].record(&s);
        x = sc.system.step(&x, &s.inputs[0], &sc.disturbances[t])?;
        inputs.push(s.inputs[0].clone());
    }
    let t = t_total - k;
    let s = solve(t, &x, TerminalSpec::StageCost)?;
    stats[t].record(&s);
    inputs.extend(s.inputs);
    let states = sc.rollout(&inputs)?;
    RunRecord::new(ControllerTag::Pc { k }, sc, states, inputs, stats, Some(audit.report()))
}

/// Distributed truncated predictive control with exact disturbances.
pub fn run_dtpc(sc: &Scenario, k: usize, kappa: usize) -> Result<RunRecord, ControlError> {
    let (states, inputs, stats, audit) = run_distributed(sc, k, kappa, |_| Disturbances::Truth(&sc.disturbances))?;
    RunRecord::new(ControllerTag::Dtpc { k, kappa }, sc, states, inputs, stats, Some(audit))
}

/// Result of a forecast-driven run: the record plus every issued forecast error.
#[derive(Debug, Clone)]
pub struct UncertainRun {
    pub record: RunRecord,
    pub forecasts: ForecastLog,
}

/// Distributed truncated predictive control where agents plan with forecast
/// disturbances `θ_{t+τ|t}`; the true system still evolves with `w_t`.
pub fn run_udtpc(
    sc: &Scenario,
    k: usize,
    kappa: usize,
    truth: &ParamTrajectory,
    model: ForecastModel,
    forecast_seed: u64,
) -> Result<UncertainRun, ControlError> {
    model.validate()?;
    if truth.horizon() != sc.horizon() || truth.values[..sc.horizon()] != sc.disturbances[..] {
        return Err(ControlError::Mismatch("parameter trajectory differs from realized disturbances".into()));
    }
    let forecaster = Forecaster::new(truth, model, forecast_seed);
    let mut windows: Vec<Vec<DVector<f64>>> = Vec::with_capacity(sc.horizon());
    let mut log = ForecastLog::default();
    for t in 0..sc.horizon() {
        let w = forecaster.window(t, k.min(sc.horizon() - t))?;
        log.record_window(t, &w, truth);
        windows.push(w);
    }
    let (states, inputs, stats, audit) = run_distributed(sc, k, kappa, |t| Disturbances::Window(&windows[t]))?;
    let record = RunRecord::new(ControllerTag::Udtpc { k, kappa, model }, sc, states, inputs, stats, Some(audit))?;
    Ok(UncertainRun { record, forecasts: log })
}

type DistributedRun = (Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<StepStats>, AuditReport);

/// Shared loop of the distributed controllers; `source(t)` supplies what the
/// agents see as disturbances at time `t`.
fn run_distributed<'d>(
    sc: &Scenario,
    k: usize,
    kappa: usize,
    source: impl Fn(usize) -> Disturbances<'d>,
) -> Result<DistributedRun, ControlError> {
    sc.check_lookahead(k)?;
    let t_total = sc.horizon();
    let graph = sc.system.graph();
    let il = graph.input_layout();
    let agents: Vec<TruncationSet> = (0..graph.node_count())
        .filter(|&i| il.dim(i) > 0)
        .map(|i| graph.khop(i, kappa))
        .collect();
    let audit = Audit::default();
    let mut stats = vec![StepStats::default(); t_total];
    let mut x = sc.x0.clone();
    let mut inputs = Vec::with_capacity(t_total);
    for t in 0..t_total {
        let len = k.min(t_total - t);
        let terminal = if t + k < t_total {
            TerminalSpec::Regularizer
        } else {
            TerminalSpec::StageCost
        };
        let disturbances = source(t);
        let results: Vec<_> = agents
            .par_iter()
            .map(|ts| {
                let info = AuditedInfo {
                    system: &sc.system,
                    schedule: &sc.schedule,
                    time: t,
                    lookahead: k,
                    state: &x,
                    disturbances,
                    truncation: Some(ts),
                    audit: &audit,
                };
                OcpProblem::assemble(&info, ts.into(), t, len, terminal.clone())
                    .and_then(|p| p.solve())
                    .map_err(|e| solve_err(t, Some(ts.center), e))
            })
            .collect();
        let mut u = DVector::zeros(sc.system.input_dim());
        for (ts, res) in agents.iter().zip(results) {
            let s = res?;
            stats[t].record(&s);
            u.rows_range_mut(il.range(ts.center)).copy_from(&s.input_of(0, ts.center));
        }
        x = sc.system.step(&x, &u, &sc.disturbances[t])?;
        inputs.push(u);
    }
    let states = sc.rollout(&inputs)?;
    Ok((states, inputs, stats, audit.report()))
}

fn solve_err(t: usize, agent: Option<usize>, source: OcpError) -> ControlError {
    ControlError::Solve { t, agent, source }
}

/// Dynamic regret `cost(run) − cost(opt)`.
pub fn regret(run: &RunRecord, opt: &RunRecord) -> Result<f64, ControlError> {
    if run.states.len() != opt.states.len() || run.states[0] != opt.states[0] {
        return Err(ControlError::Mismatch(format!("{} vs {}", run.tag, opt.tag)));
    }
    let value = run.total_cost - opt.total_cost;
    if value < -REGRET_SLACK {
        return Err(ControlError::NegativeRegret { value });
    }
    Ok(value)
}

/// `Σ_{s≤t} (cost_s(run) − cost_s(opt))` for `t = 0..=T`.
pub fn regret_over_time(run: &RunRecord, opt: &RunRecord) -> Result<Vec<f64>, ControlError> {
    if run.step_costs.len() != opt.step_costs.len() {
        return Err(ControlError::Mismatch(format!("{} vs {}", run.tag, opt.tag)));
    }
    let mut acc = 0.0;
    Ok(run
        .step_costs
        .iter()
        .zip(&opt.step_costs)
        .map(|(a, b)| {
            acc += a - b;
            acc
        })
        .collect())
}

/// Cheapest input steering `x_t` to `x_{t+1}` in one step:
/// `argmin c(v)` subject to `B v = x_{t+1} − A x_t − w_t`.
///
/// The feasible set is `v_y + null(B)` with `v_y = B⁺ d`; the null-space
/// coordinates are found by Newton's method on the reduced problem.
pub fn one_step_terminal(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x_t: &DVector<f64>,
    x_next: &DVector<f64>,
    w_t: &DVector<f64>,
    cost: &[Arc<NodeCost>],
) -> Result<DVector<f64>, ControlError> {
    let d = x_next - a * x_t - w_t;
    let m = b.ncols();
    let pinv = b.clone().pseudo_inverse(1e-12).map_err(|e| ControlError::Scenario(e.to_string()))?;
    let v_y = &pinv * &d;
    let residual = (b * &v_y - &d).amax();
    if residual > 1e-8 * (1.0 + d.amax()) {
        return Err(ControlError::Unreachable { residual });
    }
    let eig = (b.transpose() * b).symmetric_eigen();
    let tol = 1e-12 * eig.eigenvalues.amax().max(1.0);
    let null: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i].abs() <= tol).collect();
    if null.is_empty() {
        return Ok(v_y);
    }
    let basis = eig.eigenvectors.select_columns(&null);
    let dims: Vec<usize> = cost.iter().map(|c| c.dim()).collect();
    let layout = crate::network::BlockLayout::from_dims(&dims);
    let eval = |v: &DVector<f64>| {
        let mut g = DVector::zeros(m);
        let mut h = DMatrix::zeros(m, m);
        for (i, c) in cost.iter().enumerate() {
            let r = layout.range(i);
            let vi = v.rows_range(r.clone()).into_owned();
            g.rows_range_mut(r.clone()).copy_from(&c.gradient(&vi));
            h.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&c.hessian(&vi));
        }
        (g, h)
    };
    let mut s = DVector::zeros(null.len());
    for _ in 0..crate::ocp::MAX_NEWTON_ITERS {
        let v = &v_y + &basis * &s;
        let (g, h) = eval(&v);
        let rg = basis.transpose() * g;
        if rg.amax() <= 1e-12 {
            break;
        }
        let rh = basis.transpose() * h * &basis;
        let step = rh
            .cholesky()
            .ok_or_else(|| ControlError::Scenario("input cost is not strongly convex".into()))?
            .solve(&rg);
        s -= step;
    }
    Ok(v_y + basis * s)
}

#[cfg(test)]
mod tests;
