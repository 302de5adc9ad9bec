//! Scenario configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::ForecastModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Root seed; every random quantity derives from it through labeled sub-seeds.
    pub seed: u64,
    /// Total horizon `T`.
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub graph: GraphSpec,
    pub system: SystemSpec,
    #[serde(default)]
    pub costs: CostSpec,
    #[serde(default)]
    pub initial_state: InitialStateSpec,
    pub disturbance: DisturbanceSpec,
    #[serde(default, rename = "controller")]
    pub controllers: Vec<ControllerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    /// `size × size` grid.
    Mesh {
        size: usize,
        #[serde(default = "two")]
        state_dim: usize,
        #[serde(default = "one")]
        input_dim: usize,
    },
    Path {
        nodes: usize,
        #[serde(default = "two")]
        state_dim: usize,
        #[serde(default = "one")]
        input_dim: usize,
    },
    /// Edge-list file (`nodes N`, `dims i nx nu`, `i j`).
    File { path: PathBuf },
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Building thermal model: per zone an integrator and a temperature, one heat input.
    Hvac {
        #[serde(default = "default_sampling_time")]
        sampling_time: f64,
        #[serde(default = "default_coupling")]
        coupling: f64,
    },
    /// Gaussian blocks on the graph support, `A` scaled to operator norm `1 − margin`.
    Random { stability_margin: f64 },
    /// Block file with `A i j …` / `B i j …` lines.
    File { path: PathBuf },
}

fn default_sampling_time() -> f64 {
    1.0
}

fn default_coupling() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// State weight: `f_t(x) = ½ q ‖x‖²` for every `t ≤ T`.
    pub q: f64,
    /// Terminal regularizer weight: `F(x) = ½ q_f ‖x‖²`.
    pub q_f: f64,
    pub input: InputCostSpec,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            q: 1.0,
            q_f: 10.0,
            input: InputCostSpec::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputCostSpec {
    /// `R_t = diag(5|z|) + I` drawn per step.
    Random,
    /// `R_t = r I`.
    Fixed { r: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStateSpec {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// One value per line (or whitespace separated).
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    /// `w_t ~ N(0, variance · I)`.
    Gaussian { variance: f64 },
    /// `T` lines of whitespace-separated values.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    Opt,
    Pc {
        k: usize,
    },
    Dtpc {
        k: usize,
        kappa: usize,
    },
    Udtpc {
        k: usize,
        kappa: usize,
        forecast: ForecastModel,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    K,
    Kappa,
}

/// DTPC regret sweep over one parameter with the other held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub vary: SweepParam,
    /// Fixed lookahead when sweeping `kappa`.
    #[serde(default)]
    pub k: usize,
    /// Fixed radius when sweeping `k`.
    #[serde(default)]
    pub kappa: usize,
    /// Inclusive range `[lo, hi]`.
    pub range: [usize; 2],
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Makes relative data-file paths relative to `base`.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let GraphSpec::File { path } = &mut self.graph {
            fix(path);
        }
        if let SystemSpec::File { path } = &mut self.system {
            fix(path);
        }
        if let InitialStateSpec::File { path } = &mut self.initial_state {
            fix(path);
        }
        if let DisturbanceSpec::File { path } = &mut self.disturbance {
            fix(path);
        }
    }

    /// Checks parameter ranges that do not need the graph.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        match &self.graph {
            GraphSpec::Mesh { size, .. } if *size < 2 => return bad("mesh size must be at least 2".into()),
            GraphSpec::Path { nodes, .. } if *nodes == 0 => return bad("path needs at least one node".into()),
            _ => {}
        }
        if let SystemSpec::Random { stability_margin } = self.system {
            if !(0.0..1.0).contains(&stability_margin) {
                return bad(format!("stability margin {stability_margin} outside [0, 1)"));
            }
        }
        if !(self.costs.q > 0.0 && self.costs.q_f > 0.0) {
            return bad("cost weights must be positive".into());
        }
        if let InputCostSpec::Fixed { r } = self.costs.input {
            if r <= 0.0 {
                return bad("input weight must be positive".into());
            }
        }
        if let DisturbanceSpec::Gaussian { variance } = self.disturbance {
            if !(variance >= 0.0) {
                return bad("disturbance variance must be non-negative".into());
            }
        }
        for c in &self.controllers {
            let k = match c {
                ControllerSpec::Opt => continue,
                ControllerSpec::Pc { k } | ControllerSpec::Dtpc { k, .. } => *k,
                ControllerSpec::Udtpc { k, forecast, .. } => {
                    forecast.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    *k
                }
            };
            if k == 0 || k > self.horizon {
                return bad(format!("lookahead k = {k} outside 1..={}", self.horizon));
            }
        }
        if let Some(s) = &self.sweep {
            if s.range[0] > s.range[1] {
                return bad("sweep range must be ascending".into());
            }
            let ks = match s.vary {
                SweepParam::K => s.range,
                SweepParam::Kappa => [s.k, s.k],
            };
            if ks[0] == 0 || ks[1] > self.horizon {
                return bad("sweep lookahead outside 1..=T".into());
            }
        }
        Ok(())
    }
}
