use std::fmt::Write as _;

use nalgebra::DVector;

use super::{ControlError, ControllerTag, Scenario};
use crate::ocp::OcpSolution;

/// Solver statistics of one closed-loop step (all agents combined).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub solves: usize,
    pub max_residual: f64,
    pub newton_iters: usize,
}

impl StepStats {
    pub fn record(&mut self, s: &OcpSolution) {
        self.solves += 1;
        self.max_residual = self.max_residual.max(s.kkt_residual);
        self.newton_iters += s.newton_iters;
    }
}

/// A closed-loop trajectory and its costs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub tag: ControllerTag,
    pub seed: u64,
    /// `x_0..x_T`.
    pub states: Vec<DVector<f64>>,
    /// `u_0..u_{T-1}`.
    pub inputs: Vec<DVector<f64>>,
    /// `f_t(x_t) + c_{t+1}(u_t)` for `t < T`, and `f_T(x_T)` last.
    pub step_costs: Vec<f64>,
    pub total_cost: f64,
    pub stats: Vec<StepStats>,
    pub audit: Option<super::AuditReport>,
}

impl RunRecord {
    pub(super) fn new(
        tag: ControllerTag,
        sc: &Scenario,
        states: Vec<DVector<f64>>,
        inputs: Vec<DVector<f64>>,
        stats: Vec<StepStats>,
        audit: Option<super::AuditReport>,
    ) -> Result<Self, ControlError> {
        let sched = &sc.schedule;
        let total_cost = sched
            .total_cost(&states, &inputs)
            .map_err(|e| ControlError::Scenario(e.to_string()))?;
        let step_costs = (0..states.len())
            .map(|t| {
                let u = inputs.get(t).map_or(0.0, |u| sched.input_cost(t, u));
                sched.state_cost(t, &states[t]) + u
            })
            .collect();
        Ok(Self {
            tag,
            seed: sc.seed,
            states,
            inputs,
            step_costs,
            total_cost,
            stats,
            audit,
        })
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// `<tag>_<seed>.csv`.
    pub fn file_name(&self) -> String {
        format!("{}_{}.csv", self.tag, self.seed)
    }

    /// Rows `t,state_norm,step_cost,cum_cost,residual` for `t = 0..=T`. The
    /// residual column is the largest KKT residual of the solves made at `t`
    /// (0 when nothing was solved).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,state_norm,step_cost,cum_cost,residual\n");
        let mut cum = 0.0;
        for (t, x) in self.states.iter().enumerate() {
            cum += self.step_costs[t];
            let residual = self.stats.get(t).map_or(0.0, |s| s.max_residual);
            writeln!(out, "{t},{},{},{cum},{residual}", x.norm(), self.step_costs[t]).unwrap();
        }
        out
    }

    /// Largest state-norm difference to another run of the same scenario.
    pub fn max_state_gap(&self, other: &RunRecord) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `Σ_t ‖x_t − x'_t‖`.
    pub fn summed_state_gap(&self, other: &RunRecord) -> f64 {
        self.states.iter().zip(&other.states).map(|(a, b)| (a - b).norm()).sum()
    }
}
