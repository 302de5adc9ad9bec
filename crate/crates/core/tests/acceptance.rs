//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use dtpc::bench::{
    build_scenario, build_uncertainty_scenario, forecast_seed, random_system, run_experiment, ExperimentOutput,
    ScenarioConfig,
};
use dtpc::control::{regret, run_dtpc, run_pc, ControllerTag, Scenario};
use dtpc::costs::{CostSchedule, NodeCost};
use dtpc::decay::{kkt_inverse_decay, trajectory_gap_curve, truncation_gap, PairGraph};
use dtpc::forecast::{ForecastKind, ForecastModel, Forecaster};
use dtpc::lti::NetworkedSystem;
use dtpc::network::NetworkGraph;
use dtpc::ocp::{popt_check, OcpProblem, TerminalSpec};
use dtpc::rng::Stream;
use nalgebra::{DMatrix, DVector};

const ORACLE_TOL: f64 = 1e-8;
const IDENTITY_TOL: f64 = 1e-7;
const FIT_R2_TRAJECTORY: f64 = 0.8;
const REGRET_BAND: f64 = 0.02;
const FLOOR_BAND: f64 = 0.05;
const FIT_R2_KKT: f64 = 0.9;
const GAP_TOL_FULL: f64 = 1e-8;
const POPT_TOL: f64 = 1e-7;
const EXACT_FORECAST_TOL: f64 = 1e-9;
const REGRET_FACTOR: f64 = 2.0;
const PHI_REL_TOL: f64 = 1e-12;

type Check = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&configs_dir().join(name)).expect("shipped config loads")
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_spd(d: usize, rng: &mut Stream) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.normal());
    &m * m.transpose() + DMatrix::identity(d, d) * 0.5
}

/// Random instance on a connected 2–4 node graph with raw matrices kept for the oracle.
struct Instance {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
    x: DVector<f64>,
    ws: Vec<DVector<f64>>,
    problem: OcpProblem,
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), b.shape()).copy_from(b);
        off += b.nrows();
    }
    out
}

fn random_instance(seed: u64, terminal: TerminalSpec, max_horizon: usize) -> Instance {
    let mut rng = Stream::labeled(seed, "acceptance-instance");
    loop {
        let nodes = 2 + (rng.next_u64() % 3) as usize;
        let horizon = 1 + (rng.next_u64() % max_horizon as u64) as usize;
        let nx: Vec<usize> = (0..nodes).map(|_| 1 + (rng.next_u64() % 2) as usize).collect();
        let mut nu: Vec<usize> = (0..nodes).map(|_| (rng.next_u64() % 3) as usize).collect();
        if nu.iter().all(|&d| d == 0) {
            nu[(rng.next_u64() % nodes as u64) as usize] = 1;
        }
        let (n, m): (usize, usize) = (nx.iter().sum(), nu.iter().sum());
        if (horizon + 1) * n + horizon * m > 30 {
            continue;
        }
        // random spanning tree plus optional extra edges
        let mut edges: Vec<(usize, usize)> = (1..nodes).map(|i| ((rng.next_u64() % i as u64) as usize, i)).collect();
        for i in 0..nodes {
            for j in i + 1..nodes {
                if !edges.contains(&(i, j)) && rng.uniform() < 0.3 {
                    edges.push((i, j));
                }
            }
        }
        let g = Arc::new(NetworkGraph::new(&edges, &nx, &nu).unwrap());
        let (sl, il) = (g.state_layout().clone(), g.input_layout().clone());
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        for i in 0..nodes {
            for j in 0..nodes {
                if g.distance(i, j) > 1 {
                    continue;
                }
                for row in sl.range(i) {
                    for c in sl.range(j) {
                        a[(row, c)] = 0.6 * rng.normal();
                    }
                    for c in il.range(j) {
                        b[(row, c)] = rng.normal();
                    }
                }
            }
        }
        let sys = NetworkedSystem::from_dense(g, a.clone(), b.clone()).unwrap();
        let state_blocks: Vec<Vec<DMatrix<f64>>> =
            (0..=horizon).map(|_| nx.iter().map(|&d| random_spd(d, &mut rng)).collect()).collect();
        let input_blocks: Vec<Vec<DMatrix<f64>>> =
            (0..horizon).map(|_| nu.iter().map(|&d| random_spd(d, &mut rng)).collect()).collect();
        let terminal_blocks: Vec<DMatrix<f64>> = nx.iter().map(|&d| random_spd(d, &mut rng)).collect();
        let wrap = |bs: &[DMatrix<f64>]| -> Vec<Arc<NodeCost>> {
            bs.iter().map(|m| Arc::new(NodeCost::quadratic(m.clone()).unwrap())).collect()
        };
        let sched = CostSchedule::new(
            state_blocks.iter().map(|r| wrap(r)).collect(),
            input_blocks.iter().map(|r| wrap(r)).collect(),
            wrap(&terminal_blocks),
        )
        .unwrap();
        let x = DVector::from_vec(rng.normals(n));
        let ws: Vec<DVector<f64>> = (0..horizon).map(|_| DVector::from_vec(rng.normals(n))).collect();
        let mut q: Vec<DMatrix<f64>> = state_blocks.iter().map(|r| block_diag(r)).collect();
        if matches!(terminal, TerminalSpec::Regularizer) {
            q[horizon] = block_diag(&terminal_blocks);
        }
        let r = input_blocks.iter().map(|r| block_diag(r)).collect();
        let problem = OcpProblem::full(&sys, &sched, 0, &x, &ws, terminal).unwrap();
        return Instance {
            a,
            b,
            q,
            r,
            x,
            ws,
            problem,
        };
    }
}

/// Dense null-space solve: the dynamics constraints are eliminated by
/// parameterizing states as `y_τ = c_τ + M_τ v`, leaving an unconstrained
/// quadratic in the stacked inputs `v`.
fn condensed_oracle(inst: &Instance) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let (n, m, l) = (inst.a.nrows(), inst.b.ncols(), inst.ws.len());
    let mut cs = vec![inst.x.clone()];
    let mut ms = vec![DMatrix::zeros(n, l * m)];
    for t in 0..l {
        let mut next = &inst.a * &ms[t];
        let mut blk = next.view_mut((0, t * m), (n, m));
        blk += &inst.b;
        ms.push(next);
        cs.push(&inst.a * &cs[t] + &inst.ws[t]);
    }
    let mut h = DMatrix::zeros(l * m, l * m);
    let mut g = DVector::zeros(l * m);
    for t in 0..=l {
        h += ms[t].transpose() * &inst.q[t] * &ms[t];
        g += ms[t].transpose() * &inst.q[t] * &cs[t];
    }
    for t in 0..l {
        let mut blk = h.view_mut((t * m, t * m), (m, m));
        blk += &inst.r[t];
    }
    let v = h.cholesky().expect("condensed Hessian is positive definite").solve(&(-g));
    let states = (0..=l).map(|t| &cs[t] + &ms[t] * &v).collect();
    let inputs = (0..l).map(|t| v.rows(t * m, m).into_owned()).collect();
    (states, inputs)
}

fn oracle_equivalence() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..200u64 {
        let terminal = if seed % 2 == 0 {
            TerminalSpec::Regularizer
        } else {
            TerminalSpec::StageCost
        };
        let inst = random_instance(seed, terminal, 4);
        let sol = inst.problem.solve().map_err(|e| format!("seed {seed}: {e}"))?;
        let (ys, vs) = condensed_oracle(&inst);
        for (a, b) in sol.states.iter().zip(&ys).chain(sol.inputs.iter().zip(&vs)) {
            worst = worst.max((a - b).amax());
        }
    }
    ensure(worst <= ORACLE_TOL, format!("200 instances, max coordinate error {worst:.2e} (tol {ORACLE_TOL:.0e})"))
}

fn truncation_identity(sc: &Scenario) -> Check {
    let diameter = sc.system.graph().diameter();
    let mut parts = Vec::new();
    let mut ok = diameter == 8;
    for k in [5, 11] {
        let pc = run_pc(sc, k).map_err(|e| e.to_string())?;
        let dtpc = run_dtpc(sc, k, diameter).map_err(|e| e.to_string())?;
        let gap = dtpc.max_state_gap(&pc);
        ok &= gap <= IDENTITY_TOL;
        parts.push(format!("k={k}: {gap:.2e}"));
    }
    ensure(ok, format!("kappa={diameter}, max_t gap {} (tol {IDENTITY_TOL:.0e})", parts.join(", ")))
}

fn trajectory_gap_decay(sc: &Scenario) -> Check {
    let kappas: Vec<usize> = (0..=6).collect();
    let mut profile = trajectory_gap_curve(sc, 11, &kappas).map_err(|e| e.to_string())?;
    let decreasing = profile.is_strictly_decreasing();
    profile.refit(0, 4);
    let slope = profile.fit_slope();
    ensure(
        decreasing && slope < 0.0 && profile.fit_r2 >= FIT_R2_TRAJECTORY,
        format!(
            "gaps {:?}, strictly decreasing = {decreasing}, fit kappa 0..4: slope {slope:.3}, R2 {:.4} (min {FIT_R2_TRAJECTORY})",
            profile.max_block_norms.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>(),
            profile.fit_r2
        ),
    )
}

/// Non-increasing within a relative band.
fn banded_non_increasing(values: &[f64], band: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] * (1.0 + band))
}

fn regret_sweeps(k_sweep: &ExperimentOutput, kappa_sweep: &ExperimentOutput) -> Check {
    let over_k: Vec<f64> = k_sweep.sweep.iter().map(|r| r.regret).collect();
    let over_kappa: Vec<f64> = kappa_sweep
        .sweep
        .iter()
        .filter(|r| r.kappa.is_some_and(|c| c <= 4))
        .map(|r| r.regret)
        .collect();
    let ks: Vec<usize> = k_sweep.sweep.iter().filter_map(|r| r.k).collect();
    let kappas: Vec<usize> = kappa_sweep.sweep.iter().filter_map(|r| r.kappa).filter(|&c| c <= 4).collect();
    let shape = ks == (2..=12).collect::<Vec<_>>()
        && kappas == (0..=4).collect::<Vec<_>>()
        && k_sweep.sweep.iter().all(|r| r.kappa == Some(2))
        && kappa_sweep.sweep.iter().all(|r| r.k == Some(11));
    let floor = (over_kappa[4] - over_kappa[3]).abs() / over_kappa[3].abs().max(f64::MIN_POSITIVE);
    let ok = shape
        && banded_non_increasing(&over_k, REGRET_BAND)
        && banded_non_increasing(&over_kappa, REGRET_BAND)
        && floor < FLOOR_BAND;
    ensure(
        ok,
        format!(
            "k 2..12 @ kappa 2: {:.4e} -> {:.4e}; kappa 0..4 @ k 11: {:.4e} -> {:.4e}; floor change {:.2}% (max {}%)",
            over_k[0],
            over_k[over_k.len() - 1],
            over_kappa[0],
            over_kappa[4],
            100.0 * floor,
            100.0 * FLOOR_BAND
        ),
    )
}

fn kkt_spatial_decay() -> Check {
    let graph = Arc::new(NetworkGraph::path(20, 2, 1).map_err(|e| e.to_string())?);
    let sys = random_system(graph.clone(), 0.1, 11).map_err(|e| e.to_string())?;
    let horizon = 8;
    let mut rng = Stream::labeled(11, "acceptance-costs");
    let cost = |d: usize, rng: &mut Stream| NodeCost::quadratic(random_spd(d, rng)).unwrap();
    let state: Vec<NodeCost> = (0..20).map(|_| cost(2, &mut rng)).collect();
    let input: Vec<NodeCost> = (0..20).map(|_| cost(1, &mut rng)).collect();
    let sched = CostSchedule::stationary(horizon, state.clone(), input, state).map_err(|e| e.to_string())?;
    let x = DVector::from_vec(rng.normals(sys.state_dim()));
    let ws: Vec<DVector<f64>> = (0..horizon).map(|_| DVector::from_vec(rng.normals(sys.state_dim()))).collect();
    let problem = OcpProblem::full(&sys, &sched, 0, &x, &ws, TerminalSpec::Regularizer).map_err(|e| e.to_string())?;
    let profile = kkt_inverse_decay(&problem, &graph, PairGraph::Network).map_err(|e| e.to_string())?;
    ensure(
        profile.fit_rho > 0.0 && profile.fit_rho < 1.0 && profile.fit_r2 >= FIT_R2_KKT,
        format!(
            "20-node path, horizon {horizon}: rho {:.4}, R2 {:.4} (min {FIT_R2_KKT}) over {} bins",
            profile.fit_rho,
            profile.fit_r2,
            profile.distances.len()
        ),
    )
}

fn theorem_gap(sc: &Scenario) -> Check {
    let horizon = 11;
    let problem = OcpProblem::full(
        &sc.system,
        &sc.schedule,
        0,
        &sc.x0,
        &sc.disturbances[..horizon],
        TerminalSpec::Regularizer,
    )
    .map_err(|e| e.to_string())?;
    let kappas: Vec<usize> = (0..=8).collect();
    let profile = truncation_gap(&problem, sc.system.graph(), 0, &kappas).map_err(|e| e.to_string())?;
    let g = &profile.max_block_norms;
    let decreasing = g[..=6].windows(2).all(|w| w[1] < w[0]);
    ensure(
        decreasing && g[8] <= GAP_TOL_FULL,
        format!(
            "node 0, horizon {horizon}: strictly decreasing over kappa 0..6 = {decreasing}, gap(6) {:.2e}, gap(8) {:.2e} (tol {GAP_TOL_FULL:.0e})",
            g[6], g[8]
        ),
    )
}

fn principle_of_optimality() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let terminal = if seed % 2 == 0 {
            TerminalSpec::Regularizer
        } else {
            TerminalSpec::StageCost
        };
        let inst = random_instance(1_000 + seed, terminal, 6);
        if inst.problem.horizon < 2 {
            continue;
        }
        let sol = inst.problem.solve().map_err(|e| e.to_string())?;
        worst = worst.max(popt_check(&sol, &inst.problem).map_err(|e| e.to_string())?);
    }
    ensure(worst <= POPT_TOL, format!("50 instances, max residual {worst:.2e} (tol {POPT_TOL:.0e})"))
}

fn audits(bench: &ExperimentOutput) -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut distributed = 0;
    for r in &bench.records {
        match (&r.tag, &r.audit) {
            (_, Some(a)) => {
                ok &= a.is_clean() && a.reads > 0;
                if matches!(r.tag, ControllerTag::Dtpc { .. }) {
                    distributed += 1;
                }
                lines.push(format!("{}: {} reads, {} future, {} nonlocal", r.tag, a.reads, a.future_reads, a.nonlocal_reads));
            }
            (ControllerTag::Dtpc { .. }, None) => ok = false,
            _ => {}
        }
    }
    ensure(ok && distributed > 0, lines.join("; "))
}

fn uncertainty(out: &ExperimentOutput, cfg: &ScenarioConfig) -> Check {
    let find = |pred: &dyn Fn(&ControllerTag) -> bool| out.records.iter().find(|r| pred(&r.tag));
    let kind_of = |kind: ForecastKind| move |t: &ControllerTag| matches!(t, ControllerTag::Udtpc { model, .. } if model.kind == kind);
    let dtpc = find(&|t| matches!(t, ControllerTag::Dtpc { k: 10, kappa: 3 })).ok_or("missing dtpc run")?;
    let exact = find(&kind_of(ForecastKind::Exact)).ok_or("missing exact run")?;
    let gap = exact.max_state_gap(dtpc);
    let reg = |kind| -> Result<f64, String> {
        let r = find(&kind_of(kind)).ok_or(format!("missing {kind:?} run"))?;
        regret(r, &out.opt).map_err(|e| e.to_string())
    };
    let (sq, ce, c) = (reg(ForecastKind::SqrtTDecay)?, reg(ForecastKind::ConstExp)?, reg(ForecastKind::Const)?);
    let shape = cfg.horizon == 48
        && out
            .records
            .iter()
            .filter(|r| matches!(r.tag, ControllerTag::Udtpc { .. }))
            .all(|r| r.tag.k() == Some(10) && r.tag.kappa() == Some(3));
    let models: Vec<ForecastModel> = out
        .records
        .iter()
        .filter_map(|r| match &r.tag {
            ControllerTag::Udtpc { model, .. } if model.kind != ForecastKind::Exact => Some(*model),
            _ => None,
        })
        .collect();
    let matched = models.windows(2).all(|w| w[0].r == w[1].r);
    let const_model = models.iter().find(|m| m.kind == ForecastKind::Const).ok_or("missing const model")?;
    let truth = build_uncertainty_scenario(&out.scenario);
    let t_total = out.scenario.horizon();
    let log = Forecaster::new(&truth, *const_model, forecast_seed(cfg.seed)).issue_all(10);
    let phi0 = log.cumulative_phi(0, t_total);
    let expected = (t_total + 1) as f64 * const_model.r * const_model.r;
    let phi_err = (phi0 - expected).abs() / expected;
    let a = gap <= EXACT_FORECAST_TOL;
    let b = shape && matched && sq <= ce && c <= REGRET_FACTOR * ce && ce <= c;
    let cc = phi_err <= PHI_REL_TOL;
    ensure(
        a && b && cc,
        format!(
            "(a) exact vs dtpc gap {gap:.2e} (tol {EXACT_FORECAST_TOL:.0e}) {}; (b) regret sqrt_t_decay {sq:.1} <= const_exp {ce:.1}, const {c:.1} <= {REGRET_FACTOR}x {}; (c) Phi_0 {phi0} vs {expected} rel {phi_err:.1e} {}",
            verdict(a),
            verdict(b),
            verdict(cc)
        ),
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn determinism(first: &[(String, ExperimentOutput)], cfgs: &[ScenarioConfig], root: &Path) -> Check {
    let mut compared = 0;
    for ((name, out), cfg) in first.iter().zip(cfgs) {
        let dir = root.join(format!("{name}-rerun"));
        let again = run_experiment(cfg, &dir).map_err(|e| e.to_string())?;
        if again.files.len() != out.files.len() {
            return Err(format!("{name}: file count differs"));
        }
        for f in &out.files {
            let other = dir.join(f.file_name().unwrap());
            if fs::read(f).map_err(|e| e.to_string())? != fs::read(&other).map_err(|e| e.to_string())? {
                return Err(format!("{name}: {} differs", f.display()));
            }
            compared += 1;
        }
    }
    Ok(format!("{} configs, {compared} CSV files bitwise identical", first.len()))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let names = ["benchmark", "sweep_k", "sweep_kappa", "uncertainty"];
    let cfgs: Vec<ScenarioConfig> = names.iter().map(|n| load(&format!("{n}.toml"))).collect();
    let started = Instant::now();
    let outputs: Vec<(String, ExperimentOutput)> = names
        .iter()
        .zip(&cfgs)
        .map(|(n, c)| {
            let out = run_experiment(c, &tmp.path().join(n)).unwrap_or_else(|e| panic!("{n}: {e}"));
            (n.to_string(), out)
        })
        .collect();
    println!("shipped configs ran in {:.1}s", started.elapsed().as_secs_f64());
    let bench_sc = build_scenario(&cfgs[0]).expect("benchmark scenario");

    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("solver oracle equivalence", Box::new(oracle_equivalence)),
        ("truncation identity", Box::new(|| truncation_identity(&bench_sc))),
        ("trajectory gap decay", Box::new(|| trajectory_gap_decay(&bench_sc))),
        ("regret sweeps", Box::new(|| regret_sweeps(&outputs[1].1, &outputs[2].1))),
        ("KKT inverse spatial decay", Box::new(kkt_spatial_decay)),
        ("truncation gap decay", Box::new(|| theorem_gap(&bench_sc))),
        ("principle of optimality", Box::new(principle_of_optimality)),
        ("causality and locality audit", Box::new(|| audits(&outputs[0].1))),
        ("forecast uncertainty", Box::new(|| uncertainty(&outputs[3].1, &cfgs[3]))),
        ("determinism", Box::new(|| determinism(&outputs, &cfgs, tmp.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = check();
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS [{:>2}] {name}: {d} ({secs:.1}s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {d} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
