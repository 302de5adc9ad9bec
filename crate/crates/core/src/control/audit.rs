//! Instrumented access to scenario data for causality and locality checks.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::costs::{CostSchedule, NodeCost};
use crate::lti::NetworkedSystem;
use crate::network::{NetworkGraph, TruncationSet};
use crate::ocp::LocalInfo;

/// Counters shared by every agent of a run.
#[derive(Debug, Default)]
pub struct Audit {
    reads: AtomicUsize,
    future_reads: AtomicUsize,
    nonlocal_reads: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditReport {
    /// Total number of data reads.
    pub reads: usize,
    /// Disturbance reads at absolute index beyond `t + k - 1`.
    pub future_reads: usize,
    /// Reads of blocks outside the reader's truncation set.
    pub nonlocal_reads: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.future_reads == 0 && self.nonlocal_reads == 0
    }
}

impl Audit {
    pub fn report(&self) -> AuditReport {
        AuditReport {
            reads: self.reads.load(Ordering::Relaxed),
            future_reads: self.future_reads.load(Ordering::Relaxed),
            nonlocal_reads: self.nonlocal_reads.load(Ordering::Relaxed),
        }
    }

    fn read(&self, local: bool) {
        self.reads.fetch_add(1, Ordering::Relaxed);
        if !local {
            self.nonlocal_reads.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn future(&self) {
        self.future_reads.fetch_add(1, Ordering::Relaxed);
    }
}

/// Where an agent's disturbance values come from.
#[derive(Debug, Clone, Copy)]
pub enum Disturbances<'a> {
    /// The whole realized sequence `w_0..w_{T-1}`, indexed absolutely.
    Truth(&'a [DVector<f64>]),
    /// A forecast window issued at the current time, indexed from 0.
    Window(&'a [DVector<f64>]),
}

/// [`LocalInfo`] over the true system that records every read.
pub struct AuditedInfo<'a> {
    pub system: &'a NetworkedSystem,
    pub schedule: &'a CostSchedule,
    pub time: usize,
    pub lookahead: usize,
    pub state: &'a DVector<f64>,
    pub disturbances: Disturbances<'a>,
    /// `None` means the reader may see the whole network.
    pub truncation: Option<&'a TruncationSet>,
    pub audit: &'a Audit,
}

impl AuditedInfo<'_> {
    fn state_local(&self, node: usize) -> bool {
        self.truncation.is_none_or(|ts| ts.contains_state(node))
    }

    fn input_local(&self, node: usize) -> bool {
        self.truncation.is_none_or(|ts| ts.contains_input(node))
    }

    fn block(v: &DVector<f64>, graph: &NetworkGraph, node: usize) -> DVector<f64> {
        v.rows_range(graph.state_layout().range(node)).into_owned()
    }
}

impl LocalInfo for AuditedInfo<'_> {
    fn graph(&self) -> &NetworkGraph {
        self.system.graph()
    }

    fn a_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.audit.read(self.state_local(i) && self.state_local(j));
        self.system.a_block(i, j)
    }

    fn b_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.audit.read(self.state_local(i) && self.input_local(j));
        self.system.b_block(i, j)
    }

    fn state(&self, node: usize) -> DVector<f64> {
        self.audit.read(self.state_local(node));
        Self::block(self.state, self.system.graph(), node)
    }

    fn disturbance(&self, tau: usize, node: usize) -> DVector<f64> {
        self.audit.read(self.state_local(node));
        if tau >= self.lookahead {
            self.audit.future();
        }
        let g = self.system.graph();
        let source = match self.disturbances {
            Disturbances::Truth(ws) => ws.get(self.time + tau),
            Disturbances::Window(ws) => ws.get(tau),
        };
        match source {
            Some(w) => Self::block(w, g, node),
            None => {
                self.audit.future();
                DVector::zeros(g.state_layout().dim(node))
            }
        }
    }

    fn state_cost(&self, tau: usize, node: usize) -> Arc<NodeCost> {
        self.audit.read(self.state_local(node));
        self.schedule.state_costs[self.time + tau][node].clone()
    }

    fn input_cost(&self, tau: usize, node: usize) -> Arc<NodeCost> {
        self.audit.read(self.input_local(node));
        self.schedule.input_costs[self.time + tau][node].clone()
    }

    fn terminal_cost(&self, node: usize) -> Arc<NodeCost> {
        self.audit.read(self.state_local(node));
        self.schedule.terminal[node].clone()
    }
}
