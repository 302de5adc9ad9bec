//! Experiment runs and their CSV outputs.
//!
//! Files are first written with a `.partial` suffix and renamed only after the
//! whole experiment succeeds, so a failed run leaves its partial outputs
//! behind under recognizable names.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{build_scenario, build_uncertainty_scenario, forecast_seed, BenchError, ControllerSpec, ScenarioConfig, SweepParam};
use crate::control::{regret, regret_over_time, run_dtpc, run_opt, run_pc, run_udtpc, RunRecord, Scenario};
use crate::decay::{kkt_inverse_decay, truncation_gap, trajectory_gap_curve, DecayProfile, PairGraph};
use crate::forecast::Forecaster;
use crate::ocp::{OcpProblem, TerminalSpec};

pub const SUMMARY_HEADER: &str = "tag,k,kappa,total_cost,regret";

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

/// One row of the regret table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub tag: String,
    pub k: Option<usize>,
    pub kappa: Option<usize>,
    pub total_cost: f64,
    pub regret: f64,
}

impl RunSummary {
    fn of(run: &RunRecord, opt: &RunRecord) -> Result<Self, BenchError> {
        Ok(Self {
            tag: run.tag.to_string(),
            k: run.tag.k(),
            kappa: run.tag.kappa(),
            total_cost: run.total_cost,
            regret: regret(run, opt)?,
        })
    }

    /// Regret relative to the optimal cost (0 when that cost is 0).
    pub fn normalized_regret(&self, opt_cost: f64) -> f64 {
        if opt_cost > 0.0 {
            self.regret / opt_cost
        } else {
            0.0
        }
    }

    fn csv_row(&self) -> String {
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", self.tag, opt(self.k), opt(self.kappa), self.total_cost, self.regret)
    }
}

fn summary_csv(rows: &[RunSummary]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub scenario: Scenario,
    pub opt: RunRecord,
    pub records: Vec<RunRecord>,
    pub summary: Vec<RunSummary>,
    pub sweep: Vec<RunSummary>,
    pub files: Vec<PathBuf>,
}

/// Collects output files under `.partial` names until [`Sink::finish`].
struct Sink {
    dir: PathBuf,
    pending: Vec<PathBuf>,
}

impl Sink {
    fn new(dir: &Path) -> Result<Self, BenchError> {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(format!("creating {}", dir.display()), e))?;
        Ok(Self {
            dir: dir.to_owned(),
            pending: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), BenchError> {
        let path = self.dir.join(name);
        let partial = partial_path(&path);
        fs::write(&partial, contents).map_err(|e| BenchError::io(format!("writing {}", partial.display()), e))?;
        self.pending.push(path);
        Ok(())
    }

    fn finish(self) -> Result<Vec<PathBuf>, BenchError> {
        for path in &self.pending {
            let partial = partial_path(path);
            fs::rename(&partial, path).map_err(|e| BenchError::io(format!("renaming {}", partial.display()), e))?;
        }
        Ok(self.pending)
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes files atomically with respect to failure (all-or-`.partial`).
pub fn write_outputs(dir: &Path, files: &[OutputFile]) -> Result<Vec<PathBuf>, BenchError> {
    let mut sink = Sink::new(dir)?;
    for f in files {
        sink.write(&f.name, &f.contents)?;
    }
    sink.finish()
}

/// Runs OPT, every configured controller and the optional sweep, writing
///
/// - `<tag>_<seed>.csv` per run (`t,state_norm,step_cost,cum_cost,residual`),
/// - `summary.csv` (`tag,k,kappa,total_cost,regret`),
/// - `regret_over_time.csv` (`t,<tag>,…`) when controllers are configured,
/// - `phi_<tag>.csv` (`n,phi`) per forecast-driven controller,
/// - `sweep_<param>.csv` in the summary schema, plus `decay_trajectory.csv`
///   and `decay_trajectory_fit.csv` for radius sweeps.
pub fn run_experiment(cfg: &ScenarioConfig, out_dir: &Path) -> Result<ExperimentOutput, BenchError> {
    let sc = build_scenario(cfg)?;
    let mut sink = Sink::new(out_dir)?;
    let opt = run_opt(&sc)?;
    sink.write(&opt.file_name(), &opt.to_csv())?;
    let mut summary = vec![RunSummary::of(&opt, &opt)?];
    let mut records = Vec::new();
    let truth = build_uncertainty_scenario(&sc);
    for spec in &cfg.controllers {
        let run = match spec {
            ControllerSpec::Opt => continue,
            ControllerSpec::Pc { k } => run_pc(&sc, *k)?,
            ControllerSpec::Dtpc { k, kappa } => run_dtpc(&sc, *k, *kappa)?,
            ControllerSpec::Udtpc { k, kappa, forecast } => {
                let fseed = forecast_seed(cfg.seed);
                let u = run_udtpc(&sc, *k, *kappa, &truth, *forecast, fseed)?;
                let log = Forecaster::new(&truth, *forecast, fseed).issue_all(*k);
                let mut phi = String::from("n,phi\n");
                for n in 0..*k {
                    writeln!(phi, "{n},{}", log.cumulative_phi(n, sc.horizon())).unwrap();
                }
                sink.write(&format!("phi_{}.csv", u.record.tag), &phi)?;
                u.record
            }
        };
        sink.write(&run.file_name(), &run.to_csv())?;
        summary.push(RunSummary::of(&run, &opt)?);
        records.push(run);
    }
    sink.write("summary.csv", &summary_csv(&summary))?;
    if !records.is_empty() {
        let curves = records
            .iter()
            .map(|r| regret_over_time(r, &opt))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = String::from("t");
        for r in &records {
            write!(out, ",{}", r.tag).unwrap();
        }
        out.push('\n');
        for t in 0..=sc.horizon() {
            write!(out, "{t}").unwrap();
            for c in &curves {
                write!(out, ",{}", c[t]).unwrap();
            }
            out.push('\n');
        }
        sink.write("regret_over_time.csv", &out)?;
    }
    let mut sweep = Vec::new();
    if let Some(spec) = &cfg.sweep {
        let values = spec.range[0]..=spec.range[1];
        let mut runs = Vec::new();
        for v in values {
            let run = match spec.vary {
                SweepParam::K => run_dtpc(&sc, v, spec.kappa)?,
                SweepParam::Kappa => run_dtpc(&sc, spec.k, v)?,
            };
            sweep.push(RunSummary::of(&run, &opt)?);
            runs.push(run);
        }
        let name = match spec.vary {
            SweepParam::K => "sweep_k.csv",
            SweepParam::Kappa => "sweep_kappa.csv",
        };
        sink.write(name, &summary_csv(&sweep))?;
        if spec.vary == SweepParam::Kappa {
            let pc = run_pc(&sc, spec.k)?;
            let profile = DecayProfile::new(
                (spec.range[0]..=spec.range[1]).collect(),
                runs.iter().map(|r| r.summed_state_gap(&pc)).collect(),
            );
            sink.write("decay_trajectory.csv", &profile.to_csv())?;
            sink.write("decay_trajectory_fit.csv", &profile.summary_csv())?;
        }
    }
    let files = sink.finish()?;
    Ok(ExperimentOutput {
        scenario: sc,
        opt,
        records,
        summary,
        sweep,
        files,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayMode {
    /// `H⁻¹` block norms of the OCP at `t = 0` against product-graph distance.
    Kkt,
    /// Truncation gap at a center node against the radius.
    Truncation,
    /// Closed-loop `Σ_t ‖x^{DTPC} − x^{PC}‖` against the radius.
    Trajectory,
}

impl DecayMode {
    fn name(self) -> &'static str {
        match self {
            DecayMode::Kkt => "kkt",
            DecayMode::Truncation => "truncation",
            DecayMode::Trajectory => "trajectory",
        }
    }
}

/// Computes one decay profile for the configured scenario and writes
/// `decay_<mode>.csv` and `decay_<mode>_fit.csv`. `horizon` is the OCP
/// horizon (or the lookahead `k` in trajectory mode); radii run `0..=diam`.
pub fn run_decay(
    cfg: &ScenarioConfig,
    mode: DecayMode,
    horizon: usize,
    center: usize,
    out_dir: &Path,
) -> Result<(DecayProfile, Vec<PathBuf>), BenchError> {
    let sc = build_scenario(cfg)?;
    let graph = sc.system.graph();
    if center >= graph.node_count() {
        return Err(BenchError::Data(format!("center node {center} outside the graph")));
    }
    let horizon = horizon.clamp(1, sc.horizon());
    let kappas: Vec<usize> = (0..=graph.diameter()).collect();
    let problem = || {
        let terminal = if horizon < sc.horizon() {
            TerminalSpec::Regularizer
        } else {
            TerminalSpec::StageCost
        };
        OcpProblem::full(&sc.system, &sc.schedule, 0, &sc.x0, &sc.disturbances[..horizon], terminal)
            .map_err(|e| BenchError::Data(e.to_string()))
    };
    let profile = match mode {
        DecayMode::Kkt => kkt_inverse_decay(&problem()?, graph, PairGraph::Product)?,
        DecayMode::Truncation => truncation_gap(&problem()?, graph, center, &kappas)?,
        DecayMode::Trajectory => trajectory_gap_curve(&sc, horizon, &kappas)?,
    };
    let files = write_outputs(
        out_dir,
        &[
            OutputFile {
                name: format!("decay_{}.csv", mode.name()),
                contents: profile.to_csv(),
            },
            OutputFile {
                name: format!("decay_{}_fit.csv", mode.name()),
                contents: profile.summary_csv(),
            },
        ],
    )?;
    Ok((profile, files))
}
