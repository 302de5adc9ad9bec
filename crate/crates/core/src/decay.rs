//! Empirical decay profiles: KKT-inverse block norms against graph distance,
//! truncation gaps against the truncation radius, and closed-loop trajectory
//! gaps between truncated and centralized control.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::control::{run_dtpc, run_pc, ControlError, Scenario};
use crate::network::NetworkGraph;
use crate::ocp::{solve_truncated, KktSystem, OcpError, OcpProblem, Role};

/// Values at or below this are treated as factorization noise and not fitted.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DecayError {
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("sequence of length {len} is shorter than the window {k}")]
    ShortSequence { len: usize, k: usize },
    #[error("inverse decay needs quadratic costs")]
    NotQuadratic,
    #[error("radii must be ascending")]
    Unsorted,
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b, r²)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    if points.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return (my, 0.0, f64::NAN);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (my - slope * mx, slope, r2)
}

/// Norms against a distance-like index with a fitted envelope `α ρ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayProfile {
    pub distances: Vec<usize>,
    pub max_block_norms: Vec<f64>,
    pub fit_alpha: f64,
    pub fit_rho: f64,
    pub fit_r2: f64,
}

impl DecayProfile {
    /// Builds a profile and fits it over every point above the noise floor.
    pub fn new(distances: Vec<usize>, max_block_norms: Vec<f64>) -> Self {
        let mut p = Self {
            distances,
            max_block_norms,
            fit_alpha: f64::NAN,
            fit_rho: f64::NAN,
            fit_r2: f64::NAN,
        };
        p.refit(0, usize::MAX);
        p
    }

    fn from_bins(bins: BTreeMap<usize, f64>) -> Self {
        let (d, v) = bins.into_iter().unzip();
        Self::new(d, v)
    }

    /// Refits over distances in `lo..=hi` (points above the noise floor only).
    pub fn refit(&mut self, lo: usize, hi: usize) {
        let pts: Vec<(f64, f64)> = self
            .distances
            .iter()
            .zip(&self.max_block_norms)
            .filter(|(&d, &v)| d >= lo && d <= hi && v > NOISE_FLOOR)
            .map(|(&d, &v)| (d as f64, v.ln()))
            .collect();
        if pts.len() < 2 {
            return;
        }
        let (a, b, r2) = linear_fit(&pts);
        self.fit_alpha = a.exp();
        self.fit_rho = b.exp();
        self.fit_r2 = r2;
    }

    /// Log-linear slope `ln ρ̂`.
    pub fn fit_slope(&self) -> f64 {
        self.fit_rho.ln()
    }

    pub fn norm_at(&self, distance: usize) -> Option<f64> {
        self.distances.iter().position(|&d| d == distance).map(|k| self.max_block_norms[k])
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.max_block_norms.windows(2).all(|w| w[1] < w[0])
    }

    /// `distance,max_norm` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("distance,max_norm\n");
        for (d, v) in self.distances.iter().zip(&self.max_block_norms) {
            writeln!(out, "{d},{v}").unwrap();
        }
        out
    }

    /// `alpha,rho,r2` header and one value line.
    pub fn summary_csv(&self) -> String {
        format!("alpha,rho,r2\n{},{},{}\n", self.fit_alpha, self.fit_rho, self.fit_r2)
    }
}

/// Which distance the KKT-inverse blocks are binned by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairGraph {
    /// Blocks are nodes (all times); distance is the network hop count.
    Network,
    /// Blocks are time steps (all nodes); distance is `|τ − τ'|`.
    Temporal,
    /// Blocks are (node, time) pairs; distance is hop count plus `|τ − τ'|`.
    Product,
}

/// Block norms of `H⁻¹` binned by distance in `pair` (maximum per bin).
pub fn kkt_inverse_decay(problem: &OcpProblem, graph: &NetworkGraph, pair: PairGraph) -> Result<DecayProfile, DecayError> {
    if !problem.all_quadratic() {
        return Err(DecayError::NotQuadratic);
    }
    let inv = kkt_inverse(problem)?;
    let index = problem.kkt_index();
    let nodes = &problem.support;
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, (role, tau, local)) in index.entities().into_iter().enumerate() {
        let node = match role {
            Role::Input => nodes.input_nodes[local],
            _ => nodes.state_nodes[local],
        };
        let key = match pair {
            PairGraph::Network => (node, 0),
            PairGraph::Temporal => (0, tau),
            PairGraph::Product => (node, tau),
        };
        groups.entry(key).or_default().push(k);
    }
    let groups: Vec<((usize, usize), Vec<usize>)> = groups.into_iter().collect();
    let mut bins: BTreeMap<usize, f64> = BTreeMap::new();
    for (ka, ia) in &groups {
        for (kb, ib) in &groups {
            let hop = graph.distance(ka.0, kb.0);
            if hop == crate::network::UNREACHABLE {
                continue;
            }
            let d = hop + ka.1.abs_diff(kb.1);
            let block = inv.select_rows(ia).select_columns(ib);
            let norm = crate::lti::operator_norm(&block);
            let e = bins.entry(d).or_insert(0.0);
            *e = e.max(norm);
        }
    }
    Ok(DecayProfile::from_bins(bins))
}

/// Dense `H⁻¹` from column solves with the banded factorization.
pub fn kkt_inverse(problem: &OcpProblem) -> Result<DMatrix<f64>, OcpError> {
    let sys = KktSystem::build(problem, None);
    let f = sys.factor()?;
    let d = sys.index.dim();
    let mut inv = DMatrix::zeros(d, d);
    let mut e = DVector::zeros(d);
    for j in 0..d {
        e[j] = 1.0;
        inv.set_column(j, &f.solve(&e));
        e[j] = 0.0;
    }
    Ok(inv)
}

/// Gap `‖q^c[i] − q^d[i]‖` between the centralized solution and the
/// `(i, κ)`-truncated one, over all primal and dual entries of node `i`.
pub fn truncation_gap(problem: &OcpProblem, graph: &NetworkGraph, center: usize, kappas: &[usize]) -> Result<DecayProfile, DecayError> {
    if kappas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DecayError::Unsorted);
    }
    let full = problem.solve()?;
    let sl = graph.state_layout();
    let il = graph.input_layout();
    let reference = full.node_entries(center, sl, il);
    let gaps = kappas
        .iter()
        .map(|&kappa| {
            let t = solve_truncated(problem, graph, &graph.khop(center, kappa))?;
            Ok((t.node_entries(center, sl, il) - &reference).norm())
        })
        .collect::<Result<Vec<f64>, OcpError>>()?;
    Ok(DecayProfile::new(kappas.to_vec(), gaps))
}

/// `Σ_t ‖x_t^{DTPC} − x_t^{PC}‖` per truncation radius, with lookahead `k`.
pub fn trajectory_gap_curve(sc: &Scenario, k: usize, kappas: &[usize]) -> Result<DecayProfile, DecayError> {
    if kappas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DecayError::Unsorted);
    }
    let pc = run_pc(sc, k)?;
    let gaps = kappas
        .iter()
        .map(|&kappa| Ok(run_dtpc(sc, k, kappa)?.summed_state_gap(&pc)))
        .collect::<Result<Vec<f64>, ControlError>>()?;
    Ok(DecayProfile::new(kappas.to_vec(), gaps))
}

/// `(D, D_k)`: the largest `‖w_t‖` and the largest `k`-window sum of norms,
/// over window starts `t = 0..=T−k`.
pub fn disturbance_bounds(ws: &[DVector<f64>], k: usize) -> Result<(f64, f64), DecayError> {
    if k == 0 || ws.len() < k {
        return Err(DecayError::ShortSequence { len: ws.len(), k });
    }
    let norms: Vec<f64> = ws.iter().map(|w| w.norm()).collect();
    let starts = ws.len() - k + 1;
    let d = norms[..starts].iter().copied().fold(0.0, f64::max);
    let dk = (0..starts)
        .map(|t| norms[t..t + k].iter().sum::<f64>())
        .fold(0.0, f64::max);
    Ok((d, dk))
}
