//! Parameter trajectories, synthetic forecasts and cumulative forecast error.
//!
//! Disturbances are parameterized by the identity map `w_t(θ) = θ`, so a
//! forecast of `θ*_{t+n}` is a forecast of `w_{t+n}`. A forecast issued at
//! time `t` for `n` steps ahead is `θ*_{t+n} + e_{t,n}`, where `‖e_{t,n}‖` is
//! exactly the model magnitude `φ(t, n)` and the direction is a seeded
//! uniformly random unit vector.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{indexed_seed, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("forecast issued at t = {t} outside 0..={last}")]
    TimeOutOfRange { t: usize, last: usize },
    #[error("forecast model needs R >= 0 and rate > 0 (got R = {r}, rate = {rate})")]
    BadModel { r: f64, rate: f64 },
}

/// Ground-truth parameters `θ*_0..θ*_T`.
///
/// The last entry `θ*_T` never drives the dynamics; it exists so forecasts can
/// be issued at every `t ∈ 0..=T` when accumulating `Φ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTrajectory {
    pub values: Vec<DVector<f64>>,
}

impl ParamTrajectory {
    /// Uses the realized disturbances `w_0..w_{T-1}` and appends `θ*_T = 0`.
    pub fn from_disturbances(ws: &[DVector<f64>]) -> Self {
        let dim = ws.first().map_or(0, |w| w.len());
        let mut values = ws.to_vec();
        values.push(DVector::zeros(dim));
        Self { values }
    }

    /// The final time `T`.
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastKind {
    Exact,
    SqrtTDecay,
    ConstExp,
    Const,
}

impl ForecastKind {
    pub fn name(self) -> &'static str {
        match self {
            ForecastKind::Exact => "exact",
            ForecastKind::SqrtTDecay => "sqrt_t_decay",
            ForecastKind::ConstExp => "const_exp",
            ForecastKind::Const => "const",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub kind: ForecastKind,
    #[serde(default)]
    pub r: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
}

fn default_rate() -> f64 {
    1.0
}

impl ForecastModel {
    pub fn exact() -> Self {
        Self {
            kind: ForecastKind::Exact,
            r: 0.0,
            rate: 1.0,
        }
    }

    pub fn new(kind: ForecastKind, r: f64, rate: f64) -> Result<Self, ForecastError> {
        let m = Self { kind, r, rate };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        if !(self.r.is_finite() && self.r >= 0.0 && self.rate.is_finite() && self.rate > 0.0) {
            return Err(ForecastError::BadModel { r: self.r, rate: self.rate });
        }
        Ok(())
    }

    /// Error magnitude `φ(t, n)` of the `n`-step-ahead forecast issued at `t`.
    pub fn phi(&self, t: usize, n: usize) -> f64 {
        match self.kind {
            ForecastKind::Exact => 0.0,
            ForecastKind::SqrtTDecay => self.r / ((t + 1) as f64).sqrt() * self.rate.powf(-(n as f64) / 2.0),
            ForecastKind::ConstExp => self.r * self.rate.powi(-(n as i32)),
            ForecastKind::Const => self.r,
        }
    }
}

/// Issues forecasts of a parameter trajectory under one error model.
#[derive(Debug, Clone)]
pub struct Forecaster<'a> {
    pub truth: &'a ParamTrajectory,
    pub model: ForecastModel,
    pub seed: u64,
}

impl<'a> Forecaster<'a> {
    pub fn new(truth: &'a ParamTrajectory, model: ForecastModel, seed: u64) -> Self {
        Self { truth, model, seed }
    }

    /// Error vector `e_{t,n}` with norm `φ(t, n)`.
    pub fn error(&self, t: usize, n: usize) -> DVector<f64> {
        let dim = self.truth.dim();
        let mag = self.model.phi(t, n);
        if mag == 0.0 || dim == 0 {
            return DVector::zeros(dim);
        }
        let mut rng = Stream::new(indexed_seed(self.seed, "forecast-direction", &[t as u64, n as u64]));
        loop {
            let d = DVector::from_vec(rng.normals(dim));
            let norm = d.norm();
            if norm > 1e-300 {
                return d * (mag / norm);
            }
        }
    }

    /// `θ_{t:t+len-1|t}`, truncated at `θ*_T`.
    pub fn window(&self, t: usize, len: usize) -> Result<Vec<DVector<f64>>, ForecastError> {
        let last = self.truth.horizon();
        if t > last {
            return Err(ForecastError::TimeOutOfRange { t, last });
        }
        let len = len.min(last + 1 - t);
        Ok((0..len)
            .map(|n| {
                let truth = &self.truth.values[t + n];
                if self.model.kind == ForecastKind::Exact {
                    truth.clone()
                } else {
                    truth + self.error(t, n)
                }
            })
            .collect())
    }

    /// Issues a window of length `k` at every `t ∈ 0..=T` and logs the errors.
    pub fn issue_all(&self, k: usize) -> ForecastLog {
        let mut log = ForecastLog::default();
        for t in 0..=self.truth.horizon() {
            let w = self.window(t, k).expect("t within range");
            log.record_window(t, &w, self.truth);
        }
        log
    }
}

/// Squared errors `‖θ_{t+n|t} − θ*_{t+n}‖²` of issued forecasts, keyed by `(t, n)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastLog {
    pub squared_errors: BTreeMap<(usize, usize), f64>,
}

impl ForecastLog {
    pub fn record_window(&mut self, t: usize, window: &[DVector<f64>], truth: &ParamTrajectory) {
        for (n, f) in window.iter().enumerate() {
            self.squared_errors.insert((t, n), (f - &truth.values[t + n]).norm_squared());
        }
    }

    pub fn len(&self) -> usize {
        self.squared_errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.squared_errors.is_empty()
    }

    /// `Φ_n = Σ_{t=0}^{T-n} ‖θ_{t+n|t} − θ*_{t+n}‖²` over the logged forecasts.
    pub fn cumulative_phi(&self, n: usize, horizon: usize) -> f64 {
        self.squared_errors
            .iter()
            .filter(|(&(t, m), _)| m == n && t + n <= horizon)
            .map(|(_, &e)| e)
            .sum()
    }
}
