//! Scenario construction and experiment orchestration.

pub mod config;
mod experiment;

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::control::{ControlError, Scenario};
use crate::costs::{random_input_cost, CostError, CostSchedule, NodeCost};
use crate::decay::DecayError;
use crate::forecast::ParamTrajectory;
use crate::lti::{operator_norm, LtiError, NetworkedSystem};
use crate::network::{NetworkError, NetworkGraph};
use crate::rng::{sub_seed, Stream};
pub use config::{
    ConfigError, ControllerSpec, CostSpec, DisturbanceSpec, GraphSpec, InitialStateSpec, InputCostSpec, ScenarioConfig,
    SweepParam, SweepSpec, SystemSpec,
};
pub use experiment::{
    run_decay, run_experiment, write_outputs, DecayMode, ExperimentOutput, OutputFile, RunSummary, SUMMARY_HEADER,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Decay(#[from] DecayError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}

impl BenchError {
    fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        BenchError::Io {
            context: context.into(),
            source,
        }
    }
}

/// Building thermal model on a `side × side` grid of zones. Each zone has an
/// integrator `U` and a temperature `T`:
///
/// ```text
/// U⁺ = U + t_s T
/// T⁺ = (I − t_s L) T + 0.5 t_s u
/// ```
///
/// with `L` the Laplacian whose off-diagonal weights are `coupling`.
pub fn hvac_system(side: usize, sampling_time: f64, coupling: f64) -> Result<NetworkedSystem, BenchError> {
    let graph = Arc::new(NetworkGraph::mesh(side, 2, 1)?);
    hvac_on_graph(graph, sampling_time, coupling)
}

/// The thermal model on an arbitrary graph with 2 states and 1 input per node.
pub fn hvac_on_graph(graph: Arc<NetworkGraph>, ts: f64, coupling: f64) -> Result<NetworkedSystem, BenchError> {
    if graph.state_dims().iter().any(|&d| d != 2) || graph.input_dims().iter().any(|&d| d != 1) {
        return Err(BenchError::Data("thermal model needs 2 states and 1 input per zone".into()));
    }
    let mut a_blocks = Vec::new();
    let mut b_blocks = Vec::new();
    for i in 0..graph.node_count() {
        let deg = graph.neighbors(i).len() as f64;
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0 - ts * coupling * deg]);
        a_blocks.push(((i, i), diag));
        for &j in graph.neighbors(i) {
            a_blocks.push(((i, j), DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, ts * coupling])));
        }
        b_blocks.push(((i, i), DMatrix::from_row_slice(2, 1, &[0.0, 0.5 * ts])));
    }
    Ok(NetworkedSystem::assemble(graph, &a_blocks, &b_blocks)?)
}

/// Gaussian blocks on the graph support with `A` rescaled to operator norm
/// `1 − margin`.
pub fn random_system(graph: Arc<NetworkGraph>, margin: f64, seed: u64) -> Result<NetworkedSystem, BenchError> {
    let mut rng = Stream::labeled(seed, "system");
    let sl = graph.state_layout().clone();
    let il = graph.input_layout().clone();
    let mut a_blocks = Vec::new();
    let mut b_blocks = Vec::new();
    for i in 0..graph.node_count() {
        for j in std::iter::once(i).chain(graph.neighbors(i).iter().copied()) {
            let a = DMatrix::from_fn(sl.dim(i), sl.dim(j), |_, _| rng.normal());
            a_blocks.push(((i, j), a));
            let b = DMatrix::from_fn(sl.dim(i), il.dim(j), |_, _| rng.normal());
            b_blocks.push(((i, j), b));
        }
    }
    let raw = NetworkedSystem::assemble(graph.clone(), &a_blocks, &b_blocks)?;
    let norm = operator_norm(raw.a());
    let scale = if norm > 0.0 { (1.0 - margin) / norm } else { 1.0 };
    Ok(NetworkedSystem::from_dense(graph, raw.a() * scale, raw.b().clone())?)
}

/// Quadratic schedule: `f_t = ½ q ‖x‖²` for all `t ≤ T`, `F = ½ q_f ‖x‖²`,
/// inputs weighted per `spec`.
pub fn quadratic_schedule(graph: &NetworkGraph, horizon: usize, costs: &CostSpec, seed: u64) -> Result<CostSchedule, BenchError> {
    let state: Vec<Arc<NodeCost>> = graph
        .state_dims()
        .iter()
        .map(|&d| NodeCost::scaled_identity(d, costs.q).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let terminal: Vec<Arc<NodeCost>> = graph
        .state_dims()
        .iter()
        .map(|&d| NodeCost::scaled_identity(d, costs.q_f).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let inputs: Vec<Vec<Arc<NodeCost>>> = match costs.input {
        InputCostSpec::Random => {
            let mut rng = Stream::labeled(seed, "input-costs");
            (0..horizon)
                .map(|_| random_input_cost(graph.input_dims(), &mut rng).into_iter().map(Arc::new).collect())
                .collect()
        }
        InputCostSpec::Fixed { r } => {
            let row: Vec<Arc<NodeCost>> = graph
                .input_dims()
                .iter()
                .map(|&d| NodeCost::scaled_identity(d, r).map(Arc::new))
                .collect::<Result<_, _>>()?;
            vec![row; horizon]
        }
    };
    Ok(CostSchedule::new(vec![state; horizon + 1], inputs, terminal)?)
}

/// `w_t ~ N(0, variance · I)` for `t = 0..T`.
pub fn gaussian_disturbances(dim: usize, horizon: usize, variance: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = Stream::labeled(seed, "disturbance");
    let sd = variance.sqrt();
    (0..horizon).map(|_| DVector::from_vec(rng.normals(dim)) * sd).collect()
}

/// The thermal benchmark: `n × n` zones, `Q = q I`, `Q_F = q_f I`,
/// `R_t = diag(5|z|) + I`, `w_t ~ N(0, noise_var · I)`, zero initial state.
#[allow(clippy::too_many_arguments)]
pub fn build_hvac_mesh(
    n: usize,
    sampling_time: f64,
    coupling: f64,
    q: f64,
    q_f: f64,
    noise_var: f64,
    horizon: usize,
    seed: u64,
) -> Result<Scenario, BenchError> {
    if n < 2 {
        return Err(BenchError::Data("mesh size must be at least 2".into()));
    }
    let sys = hvac_system(n, sampling_time, coupling)?;
    let costs = CostSpec {
        q,
        q_f,
        input: InputCostSpec::Random,
    };
    let sched = quadratic_schedule(sys.graph(), horizon, &costs, seed)?;
    let ws = gaussian_disturbances(sys.state_dim(), horizon, noise_var, seed);
    let x0 = DVector::zeros(sys.state_dim());
    Ok(Scenario::new(Arc::new(sys), Arc::new(sched), x0, ws, seed)?)
}

/// The benchmark with its parameters at their reference values.
pub fn benchmark_scenario(horizon: usize, seed: u64) -> Result<Scenario, BenchError> {
    build_hvac_mesh(5, 1.0, 0.05, 1.0, 10.0, 25.0, horizon, seed)
}

/// Ground-truth parameters for forecast experiments: `θ*_t = w_t`.
pub fn build_uncertainty_scenario(base: &Scenario) -> ParamTrajectory {
    ParamTrajectory::from_disturbances(&base.disturbances)
}

/// Seed used for forecast error directions, derived from the root seed.
pub fn forecast_seed(root: u64) -> u64 {
    sub_seed(root, "forecast")
}

/// Builds the scenario described by a configuration.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario, BenchError> {
    cfg.validate()?;
    let graph = Arc::new(match &cfg.graph {
        GraphSpec::Mesh { size, state_dim, input_dim } => NetworkGraph::mesh(*size, *state_dim, *input_dim)?,
        GraphSpec::Path { nodes, state_dim, input_dim } => NetworkGraph::path(*nodes, *state_dim, *input_dim)?,
        GraphSpec::File { path } => NetworkGraph::parse(&read(path)?)?,
    });
    let sys = match &cfg.system {
        SystemSpec::Hvac { sampling_time, coupling } => hvac_on_graph(graph.clone(), *sampling_time, *coupling)?,
        SystemSpec::Random { stability_margin } => random_system(graph.clone(), *stability_margin, cfg.seed)?,
        SystemSpec::File { path } => NetworkedSystem::parse(graph.clone(), &read(path)?)?,
    };
    let n = sys.state_dim();
    let sched = quadratic_schedule(&graph, cfg.horizon, &cfg.costs, cfg.seed)?;
    let x0 = match &cfg.initial_state {
        InitialStateSpec::Zero => DVector::zeros(n),
        InitialStateSpec::Constant { value } => DVector::from_element(n, *value),
        InitialStateSpec::File { path } => {
            let v = parse_numbers(&read(path)?)?;
            if v.len() != n {
                return Err(BenchError::Data(format!("initial state has {} values, expected {n}", v.len())));
            }
            DVector::from_vec(v)
        }
    };
    let ws = match &cfg.disturbance {
        DisturbanceSpec::Gaussian { variance } => gaussian_disturbances(n, cfg.horizon, *variance, cfg.seed),
        DisturbanceSpec::File { path } => {
            let text = read(path)?;
            let rows: Vec<DVector<f64>> = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty())
                .map(|l| parse_numbers(l).map(DVector::from_vec))
                .collect::<Result<_, _>>()?;
            if rows.len() != cfg.horizon || rows.iter().any(|r| r.len() != n) {
                return Err(BenchError::Data(format!(
                    "disturbance file needs {} rows of {n} values",
                    cfg.horizon
                )));
            }
            rows
        }
    };
    Ok(Scenario::new(Arc::new(sys), Arc::new(sched), x0, ws, cfg.seed)?)
}

fn read(path: &Path) -> Result<String, BenchError> {
    std::fs::read_to_string(path).map_err(|e| BenchError::io(format!("reading {}", path.display()), e))
}

fn parse_numbers(text: &str) -> Result<Vec<f64>, BenchError> {
    text.split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| BenchError::Data(format!("not a number: {s}"))))
        .collect()
}
