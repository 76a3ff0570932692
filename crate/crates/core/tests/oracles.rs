//! Solver and sensitivity pass against independent references.

use std::sync::Arc;

use keyframe_ioc::learner::{loss_and_gradient, Keyframe, KeyframeSet, LearnProblem};
use keyframe_ioc::models::{LinearDynamics, QuadraticCost, StateSelector, ThetaParams};
use keyframe_ioc::numerics::TimeGrid;
use keyframe_ioc::ocsolver::{solve_oc, OcProblem, SolverConfig};
use keyframe_ioc::oracle::{fd_loss_gradient, lqr_solve, FdConfig};
use keyframe_ioc::pdpcore::{assemble_coefficients, backward_riccati};
use nalgebra::{DMatrix, DVector};

fn oscillator() -> (DMatrix<f64>, DMatrix<f64>) {
    (DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]))
}

fn tight() -> SolverConfig {
    SolverConfig { tol: 1e-10, ..SolverConfig::default() }
}

#[test]
fn solver_and_riccati_match_lqr() {
    let (a, b) = oscillator();
    let q = DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, 1.0]);
    let r = DMatrix::from_element(1, 1, 0.5);
    let qf = DMatrix::identity(2, 2) * 4.0;
    let x0 = DVector::from_vec(vec![1.0, -0.5]);
    let steps = 400;
    let cost = QuadraticCost::new(q.clone(), r.clone(), qf.clone());
    let problem = OcProblem::new(Arc::new(LinearDynamics::new(a.clone(), b.clone())), Arc::new(cost), x0.clone(), 2.0, steps).unwrap();
    let theta = ThetaParams::new(vec![], vec![]);
    let traj = solve_oc(&problem, &theta, &tight(), None).unwrap();
    let lqr = lqr_solve(&a, &b, &q, &r, &qf, &x0, &TimeGrid::new(0.0, 2.0, steps).unwrap()).unwrap();
    let ric = backward_riccati(&assemble_coefficients(&problem, &theta, &traj).unwrap()).unwrap();
    for k in 0..=steps {
        assert!((traj.states.at_node(k) - &lqr.states[k]).amax() < 1e-5, "state at node {k}");
        assert!((&ric.p[k] - &lqr.p[k]).amax() < 1e-5, "P at node {k}");
    }
}

#[test]
fn analytic_gradient_matches_differences_on_lq_problem() {
    let (a, b) = oscillator();
    let cost = QuadraticCost::new(DMatrix::identity(2, 2), DMatrix::from_element(1, 1, 0.3), DMatrix::identity(2, 2))
        .with_scale_param()
        .with_reference(DVector::from_vec(vec![0.5, 0.0]));
    let oc = OcProblem::new(Arc::new(LinearDynamics::new(a, b)), Arc::new(cost), DVector::from_vec(vec![1.0, 0.0]), 1.0, 300)
        .unwrap();
    let problem = LearnProblem { oc, task: Arc::new(StateSelector::new(vec![0], 2, 1)) };
    let keyframes = KeyframeSet::new(
        1.0,
        vec![Keyframe { tau: 0.3, y: vec![0.8] }, Keyframe { tau: 0.7, y: vec![0.6] }, Keyframe { tau: 1.0, y: vec![0.5] }],
    )
    .unwrap();
    for theta in [ThetaParams::new(vec![2.0], vec![1.0]), ThetaParams::new(vec![0.7], vec![1.5, -0.4])] {
        let (_, grad, traj) = loss_and_gradient(&problem, &keyframes, &theta, &tight()).unwrap();
        let fd = fd_loss_gradient(&problem, &keyframes, &theta, &FdConfig::default(), &tight(), Some(&traj)).unwrap();
        let rel = (&grad - &fd.gradient).norm() / fd.gradient.norm();
        assert!(rel < 1e-3, "θ = {theta:?}: {rel:.2e}");
    }
}

#[test]
fn solves_are_deterministic() {
    let spec = keyframe_ioc::benchmarks::builtin("arm_recovery_n8").unwrap();
    let problem = spec.oc_problem().unwrap();
    let theta = spec.initial_theta().unwrap();
    let one = solve_oc(&problem, &theta, &spec.learn.solver, None).unwrap();
    let two = solve_oc(&problem, &theta, &spec.learn.solver, None).unwrap();
    assert_eq!(one.states.values(), two.states.values());
    assert_eq!(one.controls.values(), two.controls.values());
    assert_eq!(one.cost_history, two.cost_history);
}
