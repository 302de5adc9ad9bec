//! Node-separable, strongly convex stage and terminal costs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::network::BlockLayout;
use crate::rng::Stream;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("cost matrix is not symmetric")]
    NotSymmetric,
    #[error("cost matrix has smallest eigenvalue {0}, expected > 0")]
    NotPositiveDefinite(f64),
    #[error("log-cosh weight must be finite and non-negative, got {0}")]
    BadScale(f64),
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Quadratic,
    QuadraticLogCosh,
}

/// `½ zᵀ M z + scale · Σ log cosh(z_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCost {
    kind: CostKind,
    matrix: DMatrix<f64>,
    scale: f64,
    mu: f64,
    l: f64,
}

fn log_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl NodeCost {
    pub fn quadratic(matrix: DMatrix<f64>) -> Result<Self, CostError> {
        Self::build(CostKind::Quadratic, matrix, 0.0)
    }

    pub fn quadratic_logcosh(matrix: DMatrix<f64>, scale: f64) -> Result<Self, CostError> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(CostError::BadScale(scale));
        }
        Self::build(CostKind::QuadraticLogCosh, matrix, scale)
    }

    /// `½ c ‖z‖²` on a `dim`-dimensional block.
    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self, CostError> {
        Self::quadratic(DMatrix::identity(dim, dim) * c)
    }

    fn build(kind: CostKind, matrix: DMatrix<f64>, scale: f64) -> Result<Self, CostError> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(CostError::NotSymmetric);
        }
        let (mu, l) = if n == 0 {
            (f64::INFINITY, 0.0)
        } else {
            if (&matrix - matrix.transpose()).amax() > 1e-12 * matrix.amax().max(1.0) {
                return Err(CostError::NotSymmetric);
            }
            let eig = matrix.clone().symmetric_eigenvalues();
            let lo = eig.min();
            if lo <= 0.0 {
                return Err(CostError::NotPositiveDefinite(lo));
            }
            (lo, eig.max() + scale)
        };
        Ok(Self {
            kind,
            matrix,
            scale,
            mu,
            l,
        })
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Strong-convexity modulus (smallest Hessian eigenvalue over all inputs).
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Smoothness constant (largest Hessian eigenvalue over all inputs).
    pub fn smoothness(&self) -> f64 {
        self.l
    }

    pub fn is_quadratic(&self) -> bool {
        self.kind == CostKind::Quadratic || self.scale == 0.0
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        let mut v = 0.5 * z.dot(&(&self.matrix * z));
        if self.kind == CostKind::QuadraticLogCosh {
            v += self.scale * z.iter().map(|&x| log_cosh(x)).sum::<f64>();
        }
        v
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.matrix * z;
        if self.kind == CostKind::QuadraticLogCosh {
            for (gi, &zi) in g.iter_mut().zip(z.iter()) {
                *gi += self.scale * zi.tanh();
            }
        }
        g
    }

    pub fn hessian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.matrix.clone();
        if self.kind == CostKind::QuadraticLogCosh {
            for (k, &zi) in z.iter().enumerate() {
                let sech = 1.0 / zi.cosh();
                h[(k, k)] += self.scale * sech * sech;
            }
        }
        h
    }

    /// Value, gradient and Hessian at `z`.
    pub fn eval(&self, z: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        (self.value(z), self.gradient(z), self.hessian(z))
    }
}

/// Time-indexed cost grids.
///
/// `state_costs[t][i]` is `f_t[i]` for `t = 0..=T`, `input_costs[t][i]` is
/// `c_{t+1}[i]` (the cost paid on `u_t`) for `t = 0..T`, and `terminal[i]`
/// is the regularizer `F[i]` used when a prediction window ends before `T`.
#[derive(Debug, Clone)]
pub struct CostSchedule {
    pub state_costs: Vec<Vec<Arc<NodeCost>>>,
    pub input_costs: Vec<Vec<Arc<NodeCost>>>,
    pub terminal: Vec<Arc<NodeCost>>,
    state_layout: BlockLayout,
    input_layout: BlockLayout,
}

impl CostSchedule {
    pub fn new(
        state_costs: Vec<Vec<Arc<NodeCost>>>,
        input_costs: Vec<Vec<Arc<NodeCost>>>,
        terminal: Vec<Arc<NodeCost>>,
    ) -> Result<Self, CostError> {
        if state_costs.len() != input_costs.len() + 1 {
            return Err(CostError::Length {
                what: "state cost schedule",
                expected: input_costs.len() + 1,
                got: state_costs.len(),
            });
        }
        let n = terminal.len();
        let state_dims: Vec<usize> = terminal.iter().map(|c| c.dim()).collect();
        let input_dims: Vec<usize> = match input_costs.first() {
            Some(row) => row.iter().map(|c| c.dim()).collect(),
            None => vec![0; n],
        };
        for row in &state_costs {
            if row.len() != n || row.iter().zip(&state_dims).any(|(c, &d)| c.dim() != d) {
                return Err(CostError::Length {
                    what: "state cost row",
                    expected: n,
                    got: row.len(),
                });
            }
        }
        for row in &input_costs {
            if row.len() != n || row.iter().zip(&input_dims).any(|(c, &d)| c.dim() != d) {
                return Err(CostError::Length {
                    what: "input cost row",
                    expected: n,
                    got: row.len(),
                });
            }
        }
        Ok(Self {
            state_costs,
            input_costs,
            terminal,
            state_layout: BlockLayout::from_dims(&state_dims),
            input_layout: BlockLayout::from_dims(&input_dims),
        })
    }

    /// Same cost at every step: `Q` on states (including `f_T`), `R` on inputs.
    pub fn stationary(
        horizon: usize,
        state: Vec<NodeCost>,
        input: Vec<NodeCost>,
        terminal: Vec<NodeCost>,
    ) -> Result<Self, CostError> {
        let state: Vec<Arc<NodeCost>> = state.into_iter().map(Arc::new).collect();
        let input: Vec<Arc<NodeCost>> = input.into_iter().map(Arc::new).collect();
        Self::new(
            vec![state; horizon + 1],
            vec![input; horizon],
            terminal.into_iter().map(Arc::new).collect(),
        )
    }

    /// Number of transitions `T`.
    pub fn horizon(&self) -> usize {
        self.input_costs.len()
    }

    pub fn node_count(&self) -> usize {
        self.terminal.len()
    }

    pub fn state_layout(&self) -> &BlockLayout {
        &self.state_layout
    }

    pub fn input_layout(&self) -> &BlockLayout {
        &self.input_layout
    }

    /// `f_t(x)` summed over nodes.
    pub fn state_cost(&self, t: usize, x: &DVector<f64>) -> f64 {
        self.separable(&self.state_costs[t], &self.state_layout, x)
    }

    /// `c_{t+1}(u)` summed over nodes.
    pub fn input_cost(&self, t: usize, u: &DVector<f64>) -> f64 {
        self.separable(&self.input_costs[t], &self.input_layout, u)
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        self.separable(&self.terminal, &self.state_layout, x)
    }

    fn separable(&self, costs: &[Arc<NodeCost>], layout: &BlockLayout, z: &DVector<f64>) -> f64 {
        costs
            .iter()
            .enumerate()
            .map(|(i, c)| c.value(&z.rows(layout.offset(i), layout.dim(i)).into_owned()))
            .sum()
    }

    /// `Σ_t f_t(x_t) + Σ_t c_{t+1}(u_t)` over a trajectory `x_0..x_T`, `u_0..u_{T-1}`.
    pub fn total_cost(&self, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> Result<f64, CostError> {
        self.check_trajectory(states, inputs)?;
        let x: f64 = states.iter().enumerate().map(|(t, x)| self.state_cost(t, x)).sum();
        let u: f64 = inputs.iter().enumerate().map(|(t, u)| self.input_cost(t, u)).sum();
        Ok(x + u)
    }

    /// Total cost counting only the given state and input nodes.
    pub fn total_cost_on(
        &self,
        states: &[DVector<f64>],
        inputs: &[DVector<f64>],
        state_nodes: &[usize],
        input_nodes: &[usize],
    ) -> Result<f64, CostError> {
        self.check_trajectory(states, inputs)?;
        let part = |costs: &[Arc<NodeCost>], layout: &BlockLayout, z: &DVector<f64>, nodes: &[usize]| -> f64 {
            nodes
                .iter()
                .map(|&i| costs[i].value(&z.rows(layout.offset(i), layout.dim(i)).into_owned()))
                .sum()
        };
        let x: f64 = states
            .iter()
            .enumerate()
            .map(|(t, x)| part(&self.state_costs[t], &self.state_layout, x, state_nodes))
            .sum();
        let u: f64 = inputs
            .iter()
            .enumerate()
            .map(|(t, u)| part(&self.input_costs[t], &self.input_layout, u, input_nodes))
            .sum();
        Ok(x + u)
    }

    fn check_trajectory(&self, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> Result<(), CostError> {
        if inputs.len() != self.horizon() {
            return Err(CostError::Length {
                what: "input trajectory",
                expected: self.horizon(),
                got: inputs.len(),
            });
        }
        if states.len() != self.horizon() + 1 {
            return Err(CostError::Length {
                what: "state trajectory",
                expected: self.horizon() + 1,
                got: states.len(),
            });
        }
        Ok(())
    }

    /// Whether every terminal block is a multiple of the identity, i.e. the
    /// terminal cost is a function of the Euclidean norm alone.
    pub fn terminal_is_isotropic(&self) -> bool {
        self.terminal.iter().all(|c| {
            let n = c.dim();
            if n == 0 {
                return true;
            }
            let m = c.matrix();
            let s = m[(0, 0)];
            (m - DMatrix::identity(n, n) * s).amax() <= 1e-12 * s.abs().max(1.0)
        })
    }

    pub fn all_quadratic(&self) -> bool {
        self.state_costs
            .iter()
            .chain(&self.input_costs)
            .flatten()
            .chain(&self.terminal)
            .all(|c| c.is_quadratic())
    }
}

/// One step of random diagonal input weights `diag(5|z| + 1)`, `z ~ N(0, I)`,
/// drawn node by node from `rng`.
pub fn random_input_cost(node_dims: &[usize], rng: &mut Stream) -> Vec<NodeCost> {
    node_dims
        .iter()
        .map(|&d| {
            let diag: Vec<f64> = (0..d).map(|_| 5.0 * rng.normal().abs() + 1.0).collect();
            NodeCost::quadratic(DMatrix::from_diagonal(&DVector::from_vec(diag)))
                .expect("diagonal entries are >= 1")
        })
        .collect()
}
