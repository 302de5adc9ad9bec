//! Finite-horizon optimal control problems over a (possibly truncated) node
//! support, solved through their KKT conditions.
//!
//! A problem over support `(S, U)` has states on the nodes `S` and inputs on
//! the nodes `U`; for the full problem both are every node. The objective is
//!
//! ```text
//! Σ_{τ<ℓ} f_{t+τ}(y_τ) + Σ_{τ<ℓ} c_{t+τ+1}(v_τ) + g(y_ℓ)
//! ```
//!
//! where `g` is the terminal regularizer `F`, the stage cost `f_{t+ℓ}`, or
//! `f_{t+ℓ}` together with the hard constraint `y_ℓ = x̄`.

pub mod banded;
pub mod kkt;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::costs::{CostSchedule, NodeCost};
use crate::lti::NetworkedSystem;
use crate::network::{BlockLayout, NetworkGraph, TruncationSet};
pub use kkt::{KktFactor, KktIndex, KktSystem, Role};

/// KKT residual target for Newton iterations.
pub const KKT_TOL: f64 = 1e-9;
/// KKT residual target for direct solves of quadratic problems.
pub const KKT_TOL_QUADRATIC: f64 = 1e-10;
pub const MAX_NEWTON_ITERS: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum OcpError {
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("{what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("KKT system is singular (column {column}); infeasible terminal constraint or degenerate costs")]
    Singular { column: usize },
    #[error("Newton iteration stopped after {iterations} iterations with residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("Newton residual increased from {previous:e} to {current:e} at iteration {iteration}")]
    ResidualIncrease {
        iteration: usize,
        previous: f64,
        current: f64,
    },
    #[error("principle-of-optimality check needs a free-terminal problem with horizon >= 2")]
    NotShiftable,
}

impl From<banded::SingularMatrix> for OcpError {
    fn from(e: banded::SingularMatrix) -> Self {
        OcpError::Singular { column: e.column }
    }
}

/// Node support of a problem: state nodes and input nodes, both ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Support {
    pub state_nodes: Vec<usize>,
    pub input_nodes: Vec<usize>,
}

impl Support {
    pub fn full(graph: &NetworkGraph) -> Self {
        let all: Vec<usize> = (0..graph.node_count()).collect();
        Self {
            state_nodes: all.clone(),
            input_nodes: all,
        }
    }
}

impl From<&TruncationSet> for Support {
    fn from(ts: &TruncationSet) -> Self {
        Self {
            state_nodes: ts.state_nodes.clone(),
            input_nodes: ts.input_nodes.clone(),
        }
    }
}

/// How the prediction window ends.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalSpec {
    /// `F(y_ℓ)`.
    Regularizer,
    /// `f_{t+ℓ}(y_ℓ)`.
    StageCost,
    /// `f_{t+ℓ}(y_ℓ)` and `y_ℓ = x̄` (target given in the support's coordinates).
    Fixed(DVector<f64>),
}

/// Data an agent reads to assemble its problem. Times are relative to the
/// window start: `state_cost(τ, j)` is `f_{t+τ}[j]`, `input_cost(τ, j)` is
/// `c_{t+τ+1}[j]`, `disturbance(τ, j)` is `ζ_τ[j]`.
pub trait LocalInfo {
    fn graph(&self) -> &NetworkGraph;
    fn a_block(&self, i: usize, j: usize) -> DMatrix<f64>;
    fn b_block(&self, i: usize, j: usize) -> DMatrix<f64>;
    fn state(&self, node: usize) -> DVector<f64>;
    fn disturbance(&self, tau: usize, node: usize) -> DVector<f64>;
    fn state_cost(&self, tau: usize, node: usize) -> Arc<NodeCost>;
    fn input_cost(&self, tau: usize, node: usize) -> Arc<NodeCost>;
    fn terminal_cost(&self, node: usize) -> Arc<NodeCost>;
}

/// Direct, uninstrumented view of a system, schedule and window data.
pub struct WindowInfo<'a> {
    pub system: &'a NetworkedSystem,
    pub schedule: &'a CostSchedule,
    pub start: usize,
    pub state: &'a DVector<f64>,
    pub disturbances: &'a [DVector<f64>],
}

impl LocalInfo for WindowInfo<'_> {
    fn graph(&self) -> &NetworkGraph {
        self.system.graph()
    }

    fn a_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.system.a_block(i, j)
    }

    fn b_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.system.b_block(i, j)
    }

    fn state(&self, node: usize) -> DVector<f64> {
        let l = self.system.graph().state_layout();
        self.state.rows(l.offset(node), l.dim(node)).into_owned()
    }

    fn disturbance(&self, tau: usize, node: usize) -> DVector<f64> {
        let l = self.system.graph().state_layout();
        self.disturbances[tau].rows(l.offset(node), l.dim(node)).into_owned()
    }

    fn state_cost(&self, tau: usize, node: usize) -> Arc<NodeCost> {
        self.schedule.state_costs[self.start + tau][node].clone()
    }

    fn input_cost(&self, tau: usize, node: usize) -> Arc<NodeCost> {
        self.schedule.input_costs[self.start + tau][node].clone()
    }

    fn terminal_cost(&self, node: usize) -> Arc<NodeCost> {
        self.schedule.terminal[node].clone()
    }
}

/// One finite-horizon OCP instance in the coordinates of its support.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub start_time: usize,
    pub horizon: usize,
    pub support: Support,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub init_state: DVector<f64>,
    pub disturbances: Vec<DVector<f64>>,
    /// `ℓ + 1` rows; row `ℓ` is the cost on the final predicted state.
    pub state_costs: Vec<Vec<Arc<NodeCost>>>,
    pub input_costs: Vec<Vec<Arc<NodeCost>>>,
    /// Regularizer blocks, kept so the problem can be shifted in time.
    pub regularizer: Option<Vec<Arc<NodeCost>>>,
    terminal_target: Option<DVector<f64>>,
    state_layout: BlockLayout,
    input_layout: BlockLayout,
}

impl OcpProblem {
    /// Assembles a problem over `support` from whatever `info` exposes.
    /// Only blocks indexed by the support are requested.
    pub fn assemble(
        info: &dyn LocalInfo,
        support: Support,
        start_time: usize,
        horizon: usize,
        terminal: TerminalSpec,
    ) -> Result<Self, OcpError> {
        if horizon == 0 {
            return Err(OcpError::EmptyHorizon);
        }
        let graph = info.graph();
        let state_layout = graph.state_layout().restrict(&support.state_nodes);
        let input_layout = graph.input_layout().restrict(&support.input_nodes);
        let n = state_layout.total();
        let m = input_layout.total();
        let s_pos = |node: usize| support.state_nodes.binary_search(&node).ok();
        let u_pos = |node: usize| support.input_nodes.binary_search(&node).ok();

        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        for (p, &j) in support.state_nodes.iter().enumerate() {
            for k in std::iter::once(j).chain(graph.neighbors(j).iter().copied()) {
                if let Some(q) = s_pos(k) {
                    let blk = info.a_block(j, k);
                    a.view_mut((state_layout.offset(p), state_layout.offset(q)), blk.shape())
                        .copy_from(&blk);
                }
                if graph.input_layout().dim(k) > 0 {
                    let q = u_pos(k).expect("input support covers neighbors of state nodes");
                    let blk = info.b_block(j, k);
                    b.view_mut((state_layout.offset(p), input_layout.offset(q)), blk.shape())
                        .copy_from(&blk);
                }
            }
        }

        let gather = |f: &dyn Fn(usize) -> DVector<f64>| -> DVector<f64> {
            let mut v = DVector::zeros(n);
            for (p, &j) in support.state_nodes.iter().enumerate() {
                v.rows_mut(state_layout.offset(p), state_layout.dim(p)).copy_from(&f(j));
            }
            v
        };
        let init_state = gather(&|j| info.state(j));
        let disturbances = (0..horizon).map(|tau| gather(&|j| info.disturbance(tau, j))).collect();

        let mut state_costs: Vec<Vec<Arc<NodeCost>>> = (0..horizon)
            .map(|tau| support.state_nodes.iter().map(|&j| info.state_cost(tau, j)).collect())
            .collect();
        let input_costs = (0..horizon)
            .map(|tau| support.input_nodes.iter().map(|&j| info.input_cost(tau, j)).collect())
            .collect();
        let regularizer: Option<Vec<Arc<NodeCost>>> = match terminal {
            TerminalSpec::Regularizer => Some(support.state_nodes.iter().map(|&j| info.terminal_cost(j)).collect()),
            _ => None,
        };
        let terminal_target = match terminal {
            TerminalSpec::Regularizer => {
                state_costs.push(regularizer.clone().unwrap());
                None
            }
            TerminalSpec::StageCost => {
                state_costs.push(support.state_nodes.iter().map(|&j| info.state_cost(horizon, j)).collect());
                None
            }
            TerminalSpec::Fixed(target) => {
                if target.len() != n {
                    return Err(OcpError::Dimension {
                        what: "terminal target",
                        expected: n,
                        got: target.len(),
                    });
                }
                state_costs.push(support.state_nodes.iter().map(|&j| info.state_cost(horizon, j)).collect());
                Some(target)
            }
        };
        Ok(Self {
            start_time,
            horizon,
            support,
            a,
            b,
            init_state,
            disturbances,
            state_costs,
            input_costs,
            regularizer,
            terminal_target,
            state_layout,
            input_layout,
        })
    }

    /// Full-support problem starting at `start_time` from `x` with window
    /// disturbances `ζ_0..ζ_{ℓ-1}`.
    pub fn full(
        system: &NetworkedSystem,
        schedule: &CostSchedule,
        start_time: usize,
        x: &DVector<f64>,
        disturbances: &[DVector<f64>],
        terminal: TerminalSpec,
    ) -> Result<Self, OcpError> {
        Self::check_window(system, x, disturbances)?;
        let info = WindowInfo {
            system,
            schedule,
            start: start_time,
            state: x,
            disturbances,
        };
        Self::assemble(&info, Support::full(system.graph()), start_time, disturbances.len(), terminal)
    }

    /// The (i, κ)-truncated counterpart of the full problem with the same data.
    pub fn truncated(
        system: &NetworkedSystem,
        schedule: &CostSchedule,
        ts: &TruncationSet,
        start_time: usize,
        x: &DVector<f64>,
        disturbances: &[DVector<f64>],
        terminal: TerminalSpec,
    ) -> Result<Self, OcpError> {
        Self::check_window(system, x, disturbances)?;
        let info = WindowInfo {
            system,
            schedule,
            start: start_time,
            state: x,
            disturbances,
        };
        Self::assemble(&info, ts.into(), start_time, disturbances.len(), terminal)
    }

    fn check_window(system: &NetworkedSystem, x: &DVector<f64>, ds: &[DVector<f64>]) -> Result<(), OcpError> {
        let n = system.state_dim();
        if x.len() != n {
            return Err(OcpError::Dimension {
                what: "initial state",
                expected: n,
                got: x.len(),
            });
        }
        if let Some(d) = ds.iter().find(|d| d.len() != n) {
            return Err(OcpError::Dimension {
                what: "disturbance",
                expected: n,
                got: d.len(),
            });
        }
        if ds.is_empty() {
            return Err(OcpError::EmptyHorizon);
        }
        Ok(())
    }

    pub fn state_layout(&self) -> &BlockLayout {
        &self.state_layout
    }

    pub fn input_layout(&self) -> &BlockLayout {
        &self.input_layout
    }

    pub fn terminal_target(&self) -> Option<&DVector<f64>> {
        self.terminal_target.as_ref()
    }

    pub fn is_fixed_terminal(&self) -> bool {
        self.terminal_target.is_some()
    }

    pub fn kkt_index(&self) -> KktIndex {
        KktIndex::new(
            self.horizon,
            self.state_layout.clone(),
            self.input_layout.clone(),
            self.is_fixed_terminal(),
        )
    }

    pub fn all_quadratic(&self) -> bool {
        self.state_costs.iter().chain(&self.input_costs).flatten().all(|c| c.is_quadratic())
    }

    fn block_eval<R>(
        costs: &[Arc<NodeCost>],
        layout: &BlockLayout,
        z: &DVector<f64>,
        f: impl Fn(&NodeCost, &DVector<f64>) -> R,
    ) -> Vec<R> {
        costs
            .iter()
            .enumerate()
            .map(|(p, c)| f(c, &z.rows(layout.offset(p), layout.dim(p)).into_owned()))
            .collect()
    }

    fn block_diag(blocks: Vec<DMatrix<f64>>, layout: &BlockLayout) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(layout.total(), layout.total());
        for (p, blk) in blocks.into_iter().enumerate() {
            h.view_mut((layout.offset(p), layout.offset(p)), blk.shape()).copy_from(&blk);
        }
        h
    }

    fn stack(parts: Vec<DVector<f64>>, len: usize) -> DVector<f64> {
        let mut v = DVector::zeros(len);
        let mut off = 0;
        for p in parts {
            v.rows_mut(off, p.len()).copy_from(&p);
            off += p.len();
        }
        v
    }

    pub fn state_hessian(&self, tau: usize, y: &DVector<f64>) -> DMatrix<f64> {
        let blocks = Self::block_eval(&self.state_costs[tau], &self.state_layout, y, |c, z| c.hessian(z));
        Self::block_diag(blocks, &self.state_layout)
    }

    pub fn input_hessian(&self, tau: usize, v: &DVector<f64>) -> DMatrix<f64> {
        let blocks = Self::block_eval(&self.input_costs[tau], &self.input_layout, v, |c, z| c.hessian(z));
        Self::block_diag(blocks, &self.input_layout)
    }

    pub fn state_gradient(&self, tau: usize, y: &DVector<f64>) -> DVector<f64> {
        let parts = Self::block_eval(&self.state_costs[tau], &self.state_layout, y, |c, z| c.gradient(z));
        Self::stack(parts, self.state_layout.total())
    }

    pub fn input_gradient(&self, tau: usize, v: &DVector<f64>) -> DVector<f64> {
        let parts = Self::block_eval(&self.input_costs[tau], &self.input_layout, v, |c, z| c.gradient(z));
        Self::stack(parts, self.input_layout.total())
    }

    /// Objective value of a primal trajectory.
    pub fn objective(&self, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> f64 {
        let sx: f64 = states
            .iter()
            .enumerate()
            .map(|(tau, y)| Self::block_eval(&self.state_costs[tau], &self.state_layout, y, |c, z| c.value(z)).iter().sum::<f64>())
            .sum();
        let su: f64 = inputs
            .iter()
            .enumerate()
            .map(|(tau, v)| Self::block_eval(&self.input_costs[tau], &self.input_layout, v, |c, z| c.value(z)).iter().sum::<f64>())
            .sum();
        sx + su
    }

    /// Max-abs KKT residual `[∇f̂(z) + Jᵀλ; Jz − b]` evaluated from the
    /// problem data (not from an assembled matrix).
    pub fn kkt_residual(&self, q: &DVector<f64>) -> DVector<f64> {
        let idx = self.kkt_index();
        let y = |tau: usize| q.rows_range(idx.y(tau)).into_owned();
        let v = |tau: usize| q.rows_range(idx.v(tau)).into_owned();
        let lam = |tau: usize| q.rows_range(idx.lambda(tau)).into_owned();
        let mut r = DVector::zeros(idx.dim());
        for tau in 0..=self.horizon {
            let mut g = self.state_gradient(tau, &y(tau)) + lam(tau);
            if tau < self.horizon {
                g -= self.a.transpose() * lam(tau + 1);
            } else if let Some(mu) = idx.mu() {
                g += q.rows_range(mu);
            }
            r.rows_range_mut(idx.y(tau)).copy_from(&g);
            if tau < self.horizon {
                let gv = self.input_gradient(tau, &v(tau)) - self.b.transpose() * lam(tau + 1);
                r.rows_range_mut(idx.v(tau)).copy_from(&gv);
            }
        }
        r.rows_range_mut(idx.lambda(0)).copy_from(&(y(0) - &self.init_state));
        for tau in 0..self.horizon {
            let c = y(tau + 1) - &self.a * y(tau) - &self.b * v(tau) - &self.disturbances[tau];
            r.rows_range_mut(idx.lambda(tau + 1)).copy_from(&c);
        }
        if let (Some(mu), Some(target)) = (idx.mu(), &self.terminal_target) {
            r.rows_range_mut(mu).copy_from(&(y(self.horizon) - target));
        }
        r
    }

    /// The same problem one step later, started from `init` (free terminal only).
    pub fn shifted(&self, init: DVector<f64>) -> Result<Self, OcpError> {
        if self.horizon < 2 || self.is_fixed_terminal() {
            return Err(OcpError::NotShiftable);
        }
        let mut p = self.clone();
        p.start_time += 1;
        p.horizon -= 1;
        p.init_state = init;
        p.disturbances.remove(0);
        p.state_costs.remove(0);
        p.input_costs.remove(0);
        Ok(p)
    }

    /// Restricts a full-support problem to a truncation set: rows outside the
    /// κ-hop neighborhood and inputs outside its reach are dropped.
    pub fn restrict(&self, graph: &NetworkGraph, ts: &TruncationSet) -> Result<Self, OcpError> {
        let info = ProblemInfo { problem: self, graph };
        let terminal = match (&self.regularizer, &self.terminal_target) {
            (Some(_), _) => TerminalSpec::Regularizer,
            (None, None) => TerminalSpec::StageCost,
            (None, Some(target)) => {
                let idx = graph.state_layout().indices(&ts.state_nodes);
                TerminalSpec::Fixed(target.select_rows(&idx))
            }
        };
        Self::assemble(&info, ts.into(), self.start_time, self.horizon, terminal)
    }

    /// Solves the problem. Quadratic problems take one factorization of the
    /// exact KKT matrix; others run Newton's method on the KKT conditions.
    pub fn solve(&self) -> Result<OcpSolution, OcpError> {
        let idx = self.kkt_index();
        let quadratic = self.all_quadratic();
        let sys = KktSystem::build(self, None);
        let factor = sys.factor()?;
        let mut q = factor.solve(&sys.rhs);
        let mut residual = self.kkt_residual(&q);
        let mut res_norm = residual.amax();
        let mut iters = 1;
        if quadratic {
            if res_norm > KKT_TOL_QUADRATIC {
                // one step of iterative refinement with the same factors
                q -= factor.solve(&residual);
                residual = self.kkt_residual(&q);
                res_norm = residual.amax();
            }
        } else {
            let mut previous = res_norm;
            while res_norm > KKT_TOL {
                if iters >= MAX_NEWTON_ITERS {
                    return Err(OcpError::NotConverged {
                        iterations: iters,
                        residual: res_norm,
                    });
                }
                let z = q.rows(0, idx.primal_dim()).into_owned();
                let step = KktSystem::build(self, Some(&z)).factor()?.solve(&residual);
                q -= step;
                iters += 1;
                residual = self.kkt_residual(&q);
                res_norm = residual.amax();
                if iters > 2 && res_norm > previous {
                    return Err(OcpError::ResidualIncrease {
                        iteration: iters,
                        previous,
                        current: res_norm,
                    });
                }
                previous = res_norm;
            }
        }
        Ok(OcpSolution::unpack(self, &q, res_norm, iters))
    }
}

/// Exposes a full-support problem through [`LocalInfo`] so it can be restricted.
struct ProblemInfo<'a> {
    problem: &'a OcpProblem,
    graph: &'a NetworkGraph,
}

impl ProblemInfo<'_> {
    fn state_block(&self, v: &DVector<f64>, node: usize) -> DVector<f64> {
        let l = self.graph.state_layout();
        v.rows(l.offset(node), l.dim(node)).into_owned()
    }
}

impl LocalInfo for ProblemInfo<'_> {
    fn graph(&self) -> &NetworkGraph {
        self.graph
    }

    fn a_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let l = self.graph.state_layout();
        self.problem.a.view((l.offset(i), l.offset(j)), (l.dim(i), l.dim(j))).into_owned()
    }

    fn b_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let l = self.graph.state_layout();
        let u = self.graph.input_layout();
        self.problem.b.view((l.offset(i), u.offset(j)), (l.dim(i), u.dim(j))).into_owned()
    }

    fn state(&self, node: usize) -> DVector<f64> {
        self.state_block(&self.problem.init_state, node)
    }

    fn disturbance(&self, tau: usize, node: usize) -> DVector<f64> {
        self.state_block(&self.problem.disturbances[tau], node)
    }

    fn state_cost(&self, tau: usize, node: usize) -> Arc<NodeCost> {
        self.problem.state_costs[tau][node].clone()
    }

    fn input_cost(&self, tau: usize, node: usize) -> Arc<NodeCost> {
        self.problem.input_costs[tau][node].clone()
    }

    fn terminal_cost(&self, node: usize) -> Arc<NodeCost> {
        self.problem.regularizer.as_ref().expect("free-terminal problem")[node].clone()
    }
}

/// Primal-dual solution in the coordinates of the problem's support.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub support: Support,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub duals: Vec<DVector<f64>>,
    pub terminal_dual: Option<DVector<f64>>,
    pub kkt_residual: f64,
    pub newton_iters: usize,
    state_layout: BlockLayout,
    input_layout: BlockLayout,
}

impl OcpSolution {
    fn unpack(problem: &OcpProblem, q: &DVector<f64>, residual: f64, iters: usize) -> Self {
        let idx = problem.kkt_index();
        Self {
            support: problem.support.clone(),
            states: (0..=problem.horizon).map(|t| q.rows_range(idx.y(t)).into_owned()).collect(),
            inputs: (0..problem.horizon).map(|t| q.rows_range(idx.v(t)).into_owned()).collect(),
            duals: (0..=problem.horizon).map(|t| q.rows_range(idx.lambda(t)).into_owned()).collect(),
            terminal_dual: idx.mu().map(|r| q.rows_range(r).into_owned()),
            kkt_residual: residual,
            newton_iters: iters,
            state_layout: problem.state_layout.clone(),
            input_layout: problem.input_layout.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// Stacked `(z, λ, μ)` in KKT order.
    pub fn stacked(&self) -> DVector<f64> {
        let mut parts: Vec<f64> = Vec::new();
        for t in 0..=self.horizon() {
            parts.extend(self.states[t].iter());
            if t < self.horizon() {
                parts.extend(self.inputs[t].iter());
            }
        }
        for d in &self.duals {
            parts.extend(d.iter());
        }
        if let Some(mu) = &self.terminal_dual {
            parts.extend(mu.iter());
        }
        DVector::from_vec(parts)
    }

    /// Input block of `node` at prediction step `tau`; zero-length if the node
    /// has no inputs. Panics if `node` is outside the input support.
    pub fn input_of(&self, tau: usize, node: usize) -> DVector<f64> {
        let p = self
            .support
            .input_nodes
            .binary_search(&node)
            .expect("node outside input support");
        self.inputs[tau].rows(self.input_layout.offset(p), self.input_layout.dim(p)).into_owned()
    }

    /// Expands a predicted state to the full state vector (zero off-support).
    pub fn embed_state(&self, tau: usize, full: &BlockLayout) -> DVector<f64> {
        embed(&self.states[tau], &self.support.state_nodes, &self.state_layout, full)
    }

    pub fn embed_input(&self, tau: usize, full: &BlockLayout) -> DVector<f64> {
        embed(&self.inputs[tau], &self.support.input_nodes, &self.input_layout, full)
    }

    pub fn embed_dual(&self, tau: usize, full: &BlockLayout) -> DVector<f64> {
        embed(&self.duals[tau], &self.support.state_nodes, &self.state_layout, full)
    }

    /// All primal and dual entries belonging to `node`, over every time step,
    /// in the order states, inputs, duals. Zeros if the node is off-support.
    pub fn node_entries(&self, node: usize, full_state: &BlockLayout, full_input: &BlockLayout) -> DVector<f64> {
        let mut out = Vec::new();
        for t in 0..=self.horizon() {
            out.extend(self.embed_state(t, full_state).rows_range(full_state.range(node)).iter());
        }
        for t in 0..self.horizon() {
            out.extend(self.embed_input(t, full_input).rows_range(full_input.range(node)).iter());
        }
        for t in 0..=self.horizon() {
            out.extend(self.embed_dual(t, full_state).rows_range(full_state.range(node)).iter());
        }
        DVector::from_vec(out)
    }

    /// Largest dynamics violation `‖y_{τ+1} − A y_τ − B v_τ − ζ_τ‖∞`.
    pub fn dynamics_violation(&self, problem: &OcpProblem) -> f64 {
        (0..self.horizon())
            .map(|t| {
                (&self.states[t + 1] - &problem.a * &self.states[t] - &problem.b * &self.inputs[t] - &problem.disturbances[t])
                    .amax()
            })
            .fold(0.0, f64::max)
    }
}

fn embed(local: &DVector<f64>, nodes: &[usize], local_layout: &BlockLayout, full: &BlockLayout) -> DVector<f64> {
    let mut v = DVector::zeros(full.total());
    for (p, &j) in nodes.iter().enumerate() {
        v.rows_range_mut(full.range(j))
            .copy_from(&local.rows(local_layout.offset(p), local_layout.dim(p)));
    }
    v
}

/// Solves the truncated counterpart of a full-support problem.
pub fn solve_truncated(problem: &OcpProblem, graph: &NetworkGraph, ts: &TruncationSet) -> Result<OcpSolution, OcpError> {
    problem.restrict(graph, ts)?.solve()
}

/// Principle-of-optimality residual: re-solves the problem one step later from
/// the predicted `y_1` and returns `max_τ ‖y_{τ+1} − y'_τ‖∞`.
pub fn popt_check(solution: &OcpSolution, problem: &OcpProblem) -> Result<f64, OcpError> {
    let tail = problem.shifted(solution.states[1].clone())?.solve()?;
    Ok(tail
        .states
        .iter()
        .enumerate()
        .map(|(tau, y)| (y - &solution.states[tau + 1]).amax())
        .fold(0.0, f64::max))
}
