use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::costs::{CostSchedule, NodeCost};
use crate::forecast::{ForecastKind, ForecastModel, ParamTrajectory};
use crate::lti::NetworkedSystem;
use crate::network::NetworkGraph;
use crate::rng::Stream;

fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Scalar-state path system with nearest-neighbor coupling.
fn chain_scenario(nodes: usize, horizon: usize, edges: bool, seed: u64) -> Scenario {
    let e: Vec<(usize, usize)> = if edges { (1..nodes).map(|i| (i - 1, i)).collect() } else { vec![] };
    let g = Arc::new(NetworkGraph::new(&e, &vec![1; nodes], &vec![1; nodes]).unwrap());
    let mut a = DMatrix::from_diagonal_element(nodes, nodes, 1.0);
    for &(i, j) in &e {
        a[(i, j)] = 0.2;
        a[(j, i)] = -0.1;
    }
    let b = DMatrix::from_diagonal_element(nodes, nodes, 0.5);
    let sys = Arc::new(NetworkedSystem::from_dense(g, a, b).unwrap());
    let q = NodeCost::scaled_identity(1, 1.0).unwrap();
    let qf = NodeCost::scaled_identity(1, 5.0).unwrap();
    let mut rng = Stream::labeled(seed, "input-costs");
    let inputs: Vec<Vec<Arc<NodeCost>>> = (0..horizon)
        .map(|_| crate::costs::random_input_cost(&vec![1; nodes], &mut rng).into_iter().map(Arc::new).collect())
        .collect();
    let sched = CostSchedule::new(vec![vec![Arc::new(q); nodes]; horizon + 1], inputs, vec![Arc::new(qf); nodes]).unwrap();
    let mut w = Stream::labeled(seed, "w");
    let ws = (0..horizon).map(|_| DVector::from_vec(w.normals(nodes))).collect();
    Scenario::new(sys, Arc::new(sched), DVector::from_vec(w.normals(nodes)), ws, seed).unwrap()
}

#[test]
fn zero_data_zero_cost() {
    let mut sc = chain_scenario(4, 6, true, 1);
    sc.x0.fill(0.0);
    for w in &mut sc.disturbances {
        w.fill(0.0);
    }
    assert_eq!(run_opt(&sc).unwrap().total_cost, 0.0);
    let pc = run_pc(&sc, 3).unwrap();
    assert!(pc.states.iter().all(|x| x.iter().all(|&v| v == 0.0)));
}

#[test]
fn one_step_opt_by_hand() {
    let g = Arc::new(NetworkGraph::new(&[], &[1], &[1]).unwrap());
    let sys = Arc::new(NetworkedSystem::from_dense(g, DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap());
    let q = NodeCost::scaled_identity(1, 1.0).unwrap();
    let sched = CostSchedule::stationary(1, vec![q.clone()], vec![q.clone()], vec![q]).unwrap();
    let sc = Scenario::new(sys, Arc::new(sched), dvec(&[1.0]), vec![dvec(&[0.0])], 0).unwrap();
    let opt = run_opt(&sc).unwrap();
    assert!((opt.inputs[0][0] + 0.5).abs() < 1e-14);
    assert!((opt.total_cost - 0.75).abs() < 1e-14);
}

#[test]
fn pc_full_lookahead_is_opt() {
    let sc = chain_scenario(4, 7, true, 2);
    let opt = run_opt(&sc).unwrap();
    let pc = run_pc(&sc, 7).unwrap();
    assert!(pc.max_state_gap(&opt) <= 1e-8);
    assert!(regret(&pc, &opt).unwrap().abs() <= 1e-8);
    assert_eq!(regret(&opt, &opt).unwrap(), 0.0);
}

#[test]
fn dtpc_full_radius_is_pc() {
    let sc = chain_scenario(5, 8, true, 3);
    for k in [1, 3, 8] {
        let pc = run_pc(&sc, k).unwrap();
        let d = run_dtpc(&sc, k, 4).unwrap();
        assert!(d.max_state_gap(&pc) <= 1e-7, "k = {k}");
    }
}

#[test]
fn decoupled_dtpc_is_pc() {
    let sc = chain_scenario(4, 6, false, 4);
    let pc = run_pc(&sc, 3).unwrap();
    let d = run_dtpc(&sc, 3, 0).unwrap();
    assert!(d.max_state_gap(&pc) <= 1e-12);
}

#[test]
fn cost_ordering_and_records() {
    let sc = chain_scenario(5, 8, true, 5);
    let opt = run_opt(&sc).unwrap();
    for run in [run_pc(&sc, 2).unwrap(), run_dtpc(&sc, 3, 0).unwrap(), run_dtpc(&sc, 3, 1).unwrap()] {
        assert!(opt.total_cost <= run.total_cost + REGRET_SLACK);
        assert!(regret(&run, &opt).unwrap() >= 0.0);
        let again = sc.schedule.total_cost(&run.states, &run.inputs).unwrap();
        assert!((again - run.total_cost).abs() <= 1e-9);
        for t in 0..sc.horizon() {
            let next = sc.system.step(&run.states[t], &run.inputs[t], &sc.disturbances[t]).unwrap();
            assert!((next - &run.states[t + 1]).amax() <= 1e-9);
        }
        let r = regret_over_time(&run, &opt).unwrap();
        assert!((r.last().unwrap() - regret(&run, &opt).unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn controllers_respect_causality_and_locality() {
    let sc = chain_scenario(6, 9, true, 6);
    let pc = run_pc(&sc, 3).unwrap();
    assert!(pc.audit.unwrap().is_clean());
    for kappa in 0..3 {
        let a = run_dtpc(&sc, 4, kappa).unwrap().audit.unwrap();
        assert!(a.reads > 0 && a.is_clean());
    }
}

#[test]
fn audit_flags_out_of_set_reads() {
    let sc = chain_scenario(4, 4, true, 7);
    let ts = sc.system.graph().khop(0, 0);
    let audit = Audit::default();
    let info = AuditedInfo {
        system: &sc.system,
        schedule: &sc.schedule,
        time: 1,
        lookahead: 2,
        state: &sc.x0,
        disturbances: Disturbances::Truth(&sc.disturbances),
        truncation: Some(&ts),
        audit: &audit,
    };
    use crate::ocp::LocalInfo;
    info.disturbance(2, 0);
    info.state(3);
    info.input_cost(0, 1);
    let r = audit.report();
    assert_eq!((r.reads, r.future_reads, r.nonlocal_reads), (3, 1, 1));
}

#[test]
fn exact_forecast_udtpc_is_dtpc() {
    let sc = chain_scenario(5, 8, true, 8);
    let truth = ParamTrajectory::from_disturbances(&sc.disturbances);
    let d = run_dtpc(&sc, 3, 1).unwrap();
    let u = run_udtpc(&sc, 3, 1, &truth, ForecastModel::exact(), 1).unwrap();
    assert!(u.record.max_state_gap(&d) <= 1e-9);
    assert!(u.record.audit.unwrap().is_clean());
    assert_eq!(u.forecasts.cumulative_phi(0, 8), 0.0);
}

#[test]
fn noisy_forecasts_cost_more() {
    let sc = chain_scenario(5, 10, true, 9);
    let truth = ParamTrajectory::from_disturbances(&sc.disturbances);
    let opt = run_opt(&sc).unwrap();
    let model = ForecastModel::new(ForecastKind::Const, 3.0, 1.0).unwrap();
    let u = run_udtpc(&sc, 3, 1, &truth, model, 1).unwrap();
    let d = run_dtpc(&sc, 3, 1).unwrap();
    assert!(regret(&u.record, &opt).unwrap() > regret(&d, &opt).unwrap());
    assert_eq!(u.forecasts.len(), (0..10).map(|t| 3.min(10 - t)).sum::<usize>());
}

#[test]
fn udtpc_rejects_foreign_trajectory() {
    let sc = chain_scenario(3, 4, true, 10);
    let other = chain_scenario(3, 4, true, 11);
    let truth = ParamTrajectory::from_disturbances(&other.disturbances);
    assert!(matches!(
        run_udtpc(&sc, 2, 1, &truth, ForecastModel::exact(), 0),
        Err(ControlError::Mismatch(_))
    ));
}

#[test]
fn deterministic_runs() {
    let sc = chain_scenario(5, 8, true, 12);
    let a = run_dtpc(&sc, 3, 1).unwrap();
    let b = run_dtpc(&sc, 3, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn csv_layout() {
    let sc = chain_scenario(3, 5, true, 13);
    let r = run_pc(&sc, 2).unwrap();
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,state_norm,step_cost,cum_cost,residual");
    assert_eq!(lines.len(), 1 + 6);
    assert_eq!(r.file_name(), "pc_k2_13.csv");
    let last: f64 = lines[6].split(',').nth(3).unwrap().parse().unwrap();
    assert!((last - r.total_cost).abs() <= 1e-9 * r.total_cost.max(1.0));
}

#[test]
fn bad_lookahead_rejected() {
    let sc = chain_scenario(3, 4, true, 14);
    assert!(matches!(run_pc(&sc, 0), Err(ControlError::BadLookahead { .. })));
    assert!(matches!(run_dtpc(&sc, 5, 0), Err(ControlError::BadLookahead { .. })));
}

fn quad(dims: &[usize]) -> Vec<Arc<NodeCost>> {
    dims.iter().map(|&d| Arc::new(NodeCost::scaled_identity(d, 1.0).unwrap())).collect()
}

#[test]
fn one_step_terminal_examples() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let b = DMatrix::identity(2, 2);
    let x = dvec(&[1.0, 2.0]);
    let w = dvec(&[0.1, -0.1]);
    let v = one_step_terminal(&a, &b, &x, &(&a * &x + &w), &w, &quad(&[1, 1])).unwrap();
    assert!(v.amax() < 1e-14);

    let one = DMatrix::identity(1, 1);
    let v = one_step_terminal(&one, &one, &dvec(&[0.0]), &dvec(&[2.5]), &dvec(&[0.0]), &quad(&[1])).unwrap();
    assert!((v[0] - 2.5).abs() < 1e-14);

    let wide = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let v = one_step_terminal(&one, &wide, &dvec(&[0.0]), &dvec(&[1.0]), &dvec(&[0.0]), &quad(&[1, 1])).unwrap();
    assert!((v - dvec(&[0.5, 0.5])).amax() < 1e-12);
}

#[test]
fn one_step_terminal_non_quadratic() {
    // c(v) = ½‖v‖² + 2 Σ log cosh v on node 0, ½ v² on node 1: optimum is not the minimum-norm point
    let one = DMatrix::identity(1, 1);
    let wide = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let cost = vec![
        Arc::new(NodeCost::quadratic_logcosh(DMatrix::identity(1, 1), 2.0).unwrap()),
        Arc::new(NodeCost::scaled_identity(1, 1.0).unwrap()),
    ];
    let v = one_step_terminal(&one, &wide, &dvec(&[0.0]), &dvec(&[3.0]), &dvec(&[0.0]), &cost).unwrap();
    assert!((v[0] + v[1] - 3.0).abs() < 1e-12);
    // stationarity along the null direction (1, -1)
    let g0 = v[0] + 2.0 * v[0].tanh();
    assert!((g0 - v[1]).abs() < 1e-10);
    assert!(v[0] < v[1]);
}

#[test]
fn one_step_terminal_unreachable() {
    let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let a = DMatrix::identity(2, 2);
    let r = one_step_terminal(&a, &b, &dvec(&[0.0, 0.0]), &dvec(&[0.0, 1.0]), &dvec(&[0.0, 0.0]), &quad(&[1]));
    assert!(matches!(r, Err(ControlError::Unreachable { .. })));
}
