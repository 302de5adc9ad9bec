//! Networked LTI dynamics `x⁺ = A x + B u + w` and regularity diagnostics.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::network::{NetworkGraph, TruncationSet};

#[derive(Debug, Error, PartialEq)]
pub enum LtiError {
    #[error("{matrix} block ({i}, {j}) supplied for nodes at distance > 1")]
    NonAdjacentBlock { matrix: char, i: usize, j: usize },
    #[error("{matrix} block ({i}, {j}) has shape {got:?}, expected {expected:?}")]
    BlockShape {
        matrix: char,
        i: usize,
        j: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("system file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum StabilizabilityError {
    #[error("Riccati iteration did not converge within {iterations} iterations")]
    RiccatiDiverged { iterations: usize },
    #[error("closed loop has spectral radius {spectral_radius} >= 1")]
    NotStabilizing { spectral_radius: f64 },
}

/// Dense `A`, `B` whose off-graph blocks are structurally zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkedSystem {
    graph: Arc<NetworkGraph>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

pub type Block = ((usize, usize), DMatrix<f64>);

impl NetworkedSystem {
    /// Assembles a system from per-pair blocks. Pairs may only be adjacent or
    /// equal nodes; missing blocks are zero. Later duplicates overwrite.
    pub fn assemble(
        graph: Arc<NetworkGraph>,
        a_blocks: &[Block],
        b_blocks: &[Block],
    ) -> Result<Self, LtiError> {
        let mut a = DMatrix::zeros(graph.total_state_dim(), graph.total_state_dim());
        let mut b = DMatrix::zeros(graph.total_state_dim(), graph.total_input_dim());
        for (matrix, blocks) in [('A', a_blocks), ('B', b_blocks)] {
            let cols = if matrix == 'A' {
                graph.state_layout()
            } else {
                graph.input_layout()
            };
            let target = if matrix == 'A' { &mut a } else { &mut b };
            for ((i, j), blk) in blocks {
                let (i, j) = (*i, *j);
                if i >= graph.node_count() || j >= graph.node_count() || graph.distance(i, j) > 1 {
                    return Err(LtiError::NonAdjacentBlock { matrix, i, j });
                }
                let expected = (graph.state_layout().dim(i), cols.dim(j));
                if blk.shape() != expected {
                    return Err(LtiError::BlockShape {
                        matrix,
                        i,
                        j,
                        expected,
                        got: blk.shape(),
                    });
                }
                target
                    .view_mut((graph.state_layout().offset(i), cols.offset(j)), expected)
                    .copy_from(blk);
            }
        }
        Ok(Self { graph, a, b })
    }

    /// Wraps dense matrices, checking that every off-graph block is zero.
    pub fn from_dense(
        graph: Arc<NetworkGraph>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    ) -> Result<Self, LtiError> {
        let nx = graph.total_state_dim();
        let nu = graph.total_input_dim();
        if a.shape() != (nx, nx) {
            return Err(LtiError::Dimension {
                what: "A",
                expected: nx * nx,
                got: a.len(),
            });
        }
        if b.shape() != (nx, nu) {
            return Err(LtiError::Dimension {
                what: "B",
                expected: nx * nu,
                got: b.len(),
            });
        }
        let n = graph.node_count();
        for i in 0..n {
            for j in 0..n {
                if graph.distance(i, j) <= 1 {
                    continue;
                }
                let rows = graph.state_layout().range(i);
                let a_nz = rows
                    .clone()
                    .any(|r| graph.state_layout().range(j).any(|c| a[(r, c)] != 0.0));
                if a_nz {
                    return Err(LtiError::NonAdjacentBlock { matrix: 'A', i, j });
                }
                let b_nz = rows.clone().any(|r| graph.input_layout().range(j).any(|c| b[(r, c)] != 0.0));
                if b_nz {
                    return Err(LtiError::NonAdjacentBlock { matrix: 'B', i, j });
                }
            }
        }
        Ok(Self { graph, a, b })
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<NetworkGraph> {
        &self.graph
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let sl = self.graph.state_layout();
        self.a
            .view((sl.offset(i), sl.offset(j)), (sl.dim(i), sl.dim(j)))
            .into_owned()
    }

    pub fn b_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let sl = self.graph.state_layout();
        let il = self.graph.input_layout();
        self.b
            .view((sl.offset(i), il.offset(j)), (sl.dim(i), il.dim(j)))
            .into_owned()
    }

    /// Reduced dynamics seen by a truncated agent: `A` over state nodes and
    /// `B` from input nodes into state nodes.
    pub fn truncated_blocks(&self, ts: &TruncationSet) -> (DMatrix<f64>, DMatrix<f64>) {
        let rows = self.graph.state_layout().indices(&ts.state_nodes);
        let cols_u = self.graph.input_layout().indices(&ts.input_nodes);
        (
            self.a.select_rows(&rows).select_columns(&rows),
            self.b.select_rows(&rows).select_columns(&cols_u),
        )
    }

    /// One transition, accumulated node by node over graph neighbors.
    pub fn step(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>, LtiError> {
        self.check_len("x", x.len(), self.state_dim())?;
        self.check_len("u", u.len(), self.input_dim())?;
        self.check_len("w", w.len(), self.state_dim())?;
        let sl = self.graph.state_layout();
        let il = self.graph.input_layout();
        let mut next = w.clone();
        for i in 0..self.graph.node_count() {
            let ri = sl.range(i);
            let mut acc = next.rows_range_mut(ri.start..ri.end);
            for j in std::iter::once(i).chain(self.graph.neighbors(i).iter().copied()) {
                let aij = self.a.view((sl.offset(i), sl.offset(j)), (sl.dim(i), sl.dim(j)));
                acc += aij * x.rows(sl.offset(j), sl.dim(j));
                if il.dim(j) > 0 {
                    let bij = self.b.view((sl.offset(i), il.offset(j)), (sl.dim(i), il.dim(j)));
                    acc += bij * u.rows(il.offset(j), il.dim(j));
                }
            }
        }
        Ok(next)
    }

    /// States `x_0..x_T` under the given inputs and disturbances.
    pub fn rollout(
        &self,
        x0: &DVector<f64>,
        inputs: &[DVector<f64>],
        disturbances: &[DVector<f64>],
    ) -> Result<Vec<DVector<f64>>, LtiError> {
        if inputs.len() != disturbances.len() {
            return Err(LtiError::Dimension {
                what: "disturbance sequence",
                expected: inputs.len(),
                got: disturbances.len(),
            });
        }
        let mut traj = Vec::with_capacity(inputs.len() + 1);
        traj.push(x0.clone());
        for (u, w) in inputs.iter().zip(disturbances) {
            let next = self.step(traj.last().unwrap(), u, w)?;
            traj.push(next);
        }
        Ok(traj)
    }

    fn check_len(&self, what: &'static str, got: usize, expected: usize) -> Result<(), LtiError> {
        if got == expected {
            Ok(())
        } else {
            Err(LtiError::Dimension { what, expected, got })
        }
    }

    /// Smallest `d ≤ n` for which `[B, AB, …, A^{d-1}B]` has minimum singular
    /// value at least `threshold`, with that singular value.
    pub fn controllability_index(&self, threshold: f64) -> Option<ControllabilityIndex> {
        let n = self.state_dim();
        let m = self.input_dim();
        if m == 0 {
            return None;
        }
        let mut blocks: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut power = self.b.clone();
        for d in 1..=n {
            blocks.push(power.clone());
            if d * m >= n {
                let mut c = DMatrix::zeros(n, d * m);
                for (k, blk) in blocks.iter().enumerate() {
                    c.columns_mut(k * m, m).copy_from(blk);
                }
                // full row rank <=> the n-th singular value of the n × dm matrix
                let sigma_min = c.singular_values().iter().copied().fold(f64::INFINITY, f64::min);
                if sigma_min >= threshold {
                    return Some(ControllabilityIndex { index: d, sigma_min });
                }
            }
            power = &self.a * power;
        }
        None
    }

    /// Operator norm of `B⁺`; reported, never enforced.
    pub fn input_pinv_norm(&self) -> f64 {
        let svd = self.b.clone().svd(false, false);
        let tol = 1e-12 * svd.singular_values.max().max(1.0);
        svd.singular_values
            .iter()
            .filter(|&&s| s > tol)
            .map(|s| 1.0 / s)
            .fold(0.0, f64::max)
    }

    /// Synthesizes `K` from the unit-weight discrete Riccati equation and fits
    /// `‖(A − BK)^t‖ ≈ L γ^t` over `t = 0..=horizon` by log-linear least squares.
    pub fn stabilizability_probe(&self, horizon: usize) -> Result<StabilizabilityFit, StabilizabilityError> {
        let horizon = horizon.max(2);
        let gain = riccati_gain(&self.a, &self.b)?;
        let closed = &self.a - &self.b * &gain;
        let spectral_radius = spectral_radius(&closed);
        if spectral_radius >= 1.0 {
            return Err(StabilizabilityError::NotStabilizing { spectral_radius });
        }
        let mut power = DMatrix::identity(closed.nrows(), closed.ncols());
        let mut pts = Vec::new();
        for t in 0..=horizon {
            let norm = operator_norm(&power);
            if norm > 1e-300 {
                pts.push((t as f64, norm.ln()));
            }
            power = &closed * power;
        }
        let (intercept, slope, _) = crate::decay::linear_fit(&pts);
        Ok(StabilizabilityFit {
            gain,
            spectral_radius,
            l_hat: intercept.exp(),
            gamma_hat: slope.exp(),
        })
    }

    /// Serializes `A` and `B` blocks as `A i j v…` / `B i j v…` lines
    /// (row-major block entries). Structurally absent blocks are skipped.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let g = &self.graph;
        for i in 0..g.node_count() {
            for j in std::iter::once(i).chain(g.neighbors(i).iter().copied()) {
                let a = self.a_block(i, j);
                write_block(&mut out, 'A', i, j, &a);
            }
        }
        for i in 0..g.node_count() {
            for j in std::iter::once(i).chain(g.neighbors(i).iter().copied()) {
                if g.input_layout().dim(j) > 0 {
                    write_block(&mut out, 'B', i, j, &self.b_block(i, j));
                }
            }
        }
        out
    }

    pub fn parse(graph: Arc<NetworkGraph>, text: &str) -> Result<Self, LtiError> {
        let mut a_blocks = Vec::new();
        let mut b_blocks = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| LtiError::Parse { line: lineno + 1, msg };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() < 3 {
                return Err(err("expected `A i j values…` or `B i j values…`".into()));
            }
            let i: usize = tokens[1].parse().map_err(|_| err(format!("bad node `{}`", tokens[1])))?;
            let j: usize = tokens[2].parse().map_err(|_| err(format!("bad node `{}`", tokens[2])))?;
            if i >= graph.node_count() || j >= graph.node_count() {
                return Err(err(format!("node pair ({i}, {j}) outside the graph")));
            }
            let vals = tokens[3..]
                .iter()
                .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = graph.state_layout().dim(i);
            let (cols, list) = match tokens[0] {
                "A" => (graph.state_layout().dim(j), &mut a_blocks),
                "B" => (graph.input_layout().dim(j), &mut b_blocks),
                other => return Err(err(format!("unknown key `{other}`"))),
            };
            if vals.len() != rows * cols {
                return Err(err(format!("expected {} entries, got {}", rows * cols, vals.len())));
            }
            list.push(((i, j), DMatrix::from_row_slice(rows, cols, &vals)));
        }
        Self::assemble(graph, &a_blocks, &b_blocks)
    }
}

fn write_block(out: &mut String, key: char, i: usize, j: usize, m: &DMatrix<f64>) {
    write!(out, "{key} {i} {j}").unwrap();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            write!(out, " {:?}", m[(r, c)]).unwrap();
        }
    }
    out.push('\n');
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllabilityIndex {
    pub index: usize,
    pub sigma_min: f64,
}

#[derive(Debug, Clone)]
pub struct StabilizabilityFit {
    pub gain: DMatrix<f64>,
    pub spectral_radius: f64,
    pub l_hat: f64,
    pub gamma_hat: f64,
}

const RICCATI_MAX_ITERS: usize = 100_000;

/// Gain of the infinite-horizon LQR with `Q = I`, `R = I` by fixed-point
/// iteration on the discrete algebraic Riccati equation.
pub fn riccati_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, StabilizabilityError> {
    let n = a.nrows();
    let m = b.ncols();
    if m == 0 {
        // nothing to synthesize: K is empty and A must be stable on its own
        return Ok(DMatrix::zeros(0, n));
    }
    let q = DMatrix::<f64>::identity(n, n);
    let r = DMatrix::<f64>::identity(m, m);
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITERS {
        let bt_p = b.transpose() * &p;
        let s = &r + &bt_p * b;
        let k = s
            .cholesky()
            .ok_or(StabilizabilityError::RiccatiDiverged { iterations: 0 })?
            .solve(&(&bt_p * a));
        let next = &q + a.transpose() * &p * a - a.transpose() * p.transpose() * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        let scale = next.amax().max(1.0);
        if !scale.is_finite() || scale > 1e150 {
            break;
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= 1e-12 * scale {
            let bt_p = b.transpose() * &p;
            let s = &r + &bt_p * b;
            return s
                .cholesky()
                .map(|c| c.solve(&(bt_p * a)))
                .ok_or(StabilizabilityError::RiccatiDiverged { iterations: RICCATI_MAX_ITERS });
        }
    }
    Err(StabilizabilityError::RiccatiDiverged {
        iterations: RICCATI_MAX_ITERS,
    })
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Ground-truth disturbance sequence `w_0..w_{T-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSeq {
    pub values: Vec<DVector<f64>>,
}

impl DisturbanceSeq {
    pub fn new(values: Vec<DVector<f64>>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Self {
            values: vec![DVector::zeros(dim); len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
