//! Saddle-point (KKT) systems `[[G, Jᵀ], [J, 0]] q = b` of finite-horizon OCPs.
//!
//! Unknowns are stacked as `z = (y_0, v_0, y_1, v_1, …, y_ℓ)` followed by the
//! duals `λ_0..λ_ℓ` (one per row block of the constraint Jacobian) and, for
//! fixed-terminal problems, the terminal dual `μ`. The Jacobian rows are
//! `y_0 = x` and `-A y_τ - B v_τ + y_{τ+1} = ζ_τ`.
//!
//! The factorization reorders unknowns time step by time step
//! (`λ_τ, y_τ, v_τ`), which makes the matrix banded with bandwidth about
//! `2n + m`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::banded::{BandLu, SingularMatrix};
use super::OcpProblem;
use crate::network::BlockLayout;

/// What a KKT coordinate stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    State,
    Input,
    Dual,
    TerminalDual,
}

/// Coordinate map of a KKT system.
#[derive(Debug, Clone, PartialEq)]
pub struct KktIndex {
    horizon: usize,
    n: usize,
    m: usize,
    fixed_terminal: bool,
    state_layout: BlockLayout,
    input_layout: BlockLayout,
}

impl KktIndex {
    pub fn new(horizon: usize, state_layout: BlockLayout, input_layout: BlockLayout, fixed_terminal: bool) -> Self {
        Self {
            horizon,
            n: state_layout.total(),
            m: input_layout.total(),
            fixed_terminal,
            state_layout,
            input_layout,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn fixed_terminal(&self) -> bool {
        self.fixed_terminal
    }

    pub fn primal_dim(&self) -> usize {
        (self.horizon + 1) * self.n + self.horizon * self.m
    }

    /// Number of constraint rows: `ℓ + 1` blocks of `n`, plus `n` when fixed.
    pub fn dual_dim(&self) -> usize {
        (self.horizon + 1 + usize::from(self.fixed_terminal)) * self.n
    }

    pub fn dim(&self) -> usize {
        self.primal_dim() + self.dual_dim()
    }

    pub fn y(&self, tau: usize) -> Range<usize> {
        let s = tau * (self.n + self.m);
        s..s + self.n
    }

    pub fn v(&self, tau: usize) -> Range<usize> {
        debug_assert!(tau < self.horizon);
        let s = tau * (self.n + self.m) + self.n;
        s..s + self.m
    }

    pub fn lambda(&self, tau: usize) -> Range<usize> {
        let s = self.primal_dim() + tau * self.n;
        s..s + self.n
    }

    pub fn mu(&self) -> Option<Range<usize>> {
        self.fixed_terminal.then(|| self.lambda(self.horizon + 1))
    }

    pub fn state_layout(&self) -> &BlockLayout {
        &self.state_layout
    }

    pub fn input_layout(&self) -> &BlockLayout {
        &self.input_layout
    }

    /// `(role, time, local node)` of every coordinate, in stacked order.
    pub fn entities(&self) -> Vec<(Role, usize, usize)> {
        let mut out = Vec::with_capacity(self.dim());
        let node_of = |layout: &BlockLayout| -> Vec<usize> {
            (0..layout.node_count()).flat_map(|i| std::iter::repeat_n(i, layout.dim(i))).collect()
        };
        let xs = node_of(&self.state_layout);
        let us = node_of(&self.input_layout);
        for tau in 0..=self.horizon {
            out.extend(xs.iter().map(|&i| (Role::State, tau, i)));
            if tau < self.horizon {
                out.extend(us.iter().map(|&i| (Role::Input, tau, i)));
            }
        }
        for tau in 0..=self.horizon {
            out.extend(xs.iter().map(|&i| (Role::Dual, tau, i)));
        }
        if self.fixed_terminal {
            out.extend(xs.iter().map(|&i| (Role::TerminalDual, self.horizon, i)));
        }
        out
    }

    /// Position of every stacked coordinate in the banded (time-major) order.
    fn band_order(&self) -> Vec<usize> {
        let mut pos = vec![0; self.dim()];
        let mut next = 0;
        let mut place = |r: Range<usize>, next: &mut usize| {
            for k in r {
                pos[k] = *next;
                *next += 1;
            }
        };
        for tau in 0..=self.horizon {
            place(self.lambda(tau), &mut next);
            place(self.y(tau), &mut next);
            if tau < self.horizon {
                place(self.v(tau), &mut next);
            }
        }
        if let Some(r) = self.mu() {
            place(r, &mut next);
        }
        pos
    }
}

/// KKT matrix and right-hand side of one OCP, linearized at a primal point.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub index: KktIndex,
    /// Hessian blocks of `G`: `(y_0, v_0, …, y_ℓ)` in stacked order.
    pub g_blocks: Vec<DMatrix<f64>>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl KktSystem {
    /// Assembles `G` from cost Hessians at `z` (zero if `None`) and `J`, `b`
    /// from the problem data.
    pub fn build(problem: &OcpProblem, z: Option<&DVector<f64>>) -> Self {
        let index = problem.kkt_index();
        let zero = DVector::zeros(index.primal_dim());
        let z = z.unwrap_or(&zero);
        let mut g_blocks = Vec::with_capacity(2 * problem.horizon + 1);
        for tau in 0..=problem.horizon {
            g_blocks.push(problem.state_hessian(tau, &z.rows_range(index.y(tau)).into_owned()));
            if tau < problem.horizon {
                g_blocks.push(problem.input_hessian(tau, &z.rows_range(index.v(tau)).into_owned()));
            }
        }
        let mut rhs = DVector::zeros(index.dim());
        rhs.rows_range_mut(index.lambda(0)).copy_from(&problem.init_state);
        for tau in 0..problem.horizon {
            rhs.rows_range_mut(index.lambda(tau + 1)).copy_from(&problem.disturbances[tau]);
        }
        if let (Some(r), Some(target)) = (index.mu(), problem.terminal_target()) {
            rhs.rows_range_mut(r).copy_from(target);
        }
        Self {
            index,
            g_blocks,
            a: problem.a.clone(),
            b: problem.b.clone(),
            rhs,
        }
    }

    fn primal_block_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        for tau in 0..=self.index.horizon {
            out.push(self.index.y(tau));
            if tau < self.index.horizon {
                out.push(self.index.v(tau));
            }
        }
        out
    }

    /// Nonzero entries of `H` in stacked coordinates (both triangles).
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let idx = &self.index;
        let mut out = Vec::new();
        for (blk, r) in self.g_blocks.iter().zip(self.primal_block_ranges()) {
            for i in 0..blk.nrows() {
                for j in 0..blk.ncols() {
                    let v = blk[(i, j)];
                    if v != 0.0 {
                        out.push((r.start + i, r.start + j, v));
                    }
                }
            }
        }
        let sym = |row: usize, col: usize, v: f64, out: &mut Vec<(usize, usize, f64)>| {
            if v != 0.0 {
                out.push((row, col, v));
                out.push((col, row, v));
            }
        };
        let n = idx.n;
        for k in 0..n {
            sym(idx.lambda(0).start + k, idx.y(0).start + k, 1.0, &mut out);
        }
        for tau in 0..idx.horizon {
            let row0 = idx.lambda(tau + 1).start;
            for i in 0..n {
                for j in 0..n {
                    sym(row0 + i, idx.y(tau).start + j, -self.a[(i, j)], &mut out);
                }
                for j in 0..idx.m {
                    sym(row0 + i, idx.v(tau).start + j, -self.b[(i, j)], &mut out);
                }
                sym(row0 + i, idx.y(tau + 1).start + i, 1.0, &mut out);
            }
        }
        if let Some(r) = idx.mu() {
            for k in 0..n {
                sym(r.start + k, idx.y(idx.horizon).start + k, 1.0, &mut out);
            }
        }
        out
    }

    /// Dense copy of `H`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.index.dim();
        let mut h = DMatrix::zeros(d, d);
        for (i, j, v) in self.entries() {
            h[(i, j)] += v;
        }
        h
    }

    /// The constraint Jacobian `J` as a dense matrix.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let p = self.index.primal_dim();
        self.to_dense().view((p, 0), (self.index.dual_dim(), p)).into_owned()
    }

    /// The Hessian block `G` as a dense matrix.
    pub fn hessian(&self) -> DMatrix<f64> {
        let p = self.index.primal_dim();
        self.to_dense().view((0, 0), (p, p)).into_owned()
    }

    pub fn factor(&self) -> Result<KktFactor, SingularMatrix> {
        let order = self.index.band_order();
        let permuted: Vec<_> = self
            .entries()
            .into_iter()
            .map(|(i, j, v)| (order[i], order[j], v))
            .collect();
        let lu = BandLu::factor(self.index.dim(), &permuted)?;
        Ok(KktFactor { lu, order })
    }
}

/// Banded factorization of a KKT matrix.
#[derive(Debug, Clone)]
pub struct KktFactor {
    lu: BandLu,
    order: Vec<usize>,
}

impl KktFactor {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut work = vec![0.0; rhs.len()];
        for (k, &p) in self.order.iter().enumerate() {
            work[p] = rhs[k];
        }
        self.lu.solve_in_place(&mut work);
        DVector::from_iterator(rhs.len(), self.order.iter().map(|&p| work[p]))
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        self.lu.bandwidths()
    }
}
