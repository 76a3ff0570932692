//! The solver and the sensitivity pass on a linear-quadratic problem, where
//! a Riccati reference solution is available.

use std::sync::Arc;

use keyframe_ioc::models::{LinearDynamics, QuadraticCost, ThetaParams};
use keyframe_ioc::numerics::TimeGrid;
use keyframe_ioc::ocsolver::{solve_oc, OcProblem, SolverConfig};
use keyframe_ioc::oracle::lqr_solve;
use nalgebra::{DMatrix, DVector};

fn main() -> keyframe_ioc::Result<()> {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
    let r = DMatrix::from_element(1, 1, 0.2);
    let qf = DMatrix::identity(2, 2) * 2.0;
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let steps = 200;

    let cost = QuadraticCost::new(q.clone(), r.clone(), qf.clone());
    let problem = OcProblem::new(Arc::new(LinearDynamics::new(a.clone(), b.clone())), Arc::new(cost), x0.clone(), 1.0, steps)?;
    let theta = ThetaParams::new(vec![], vec![]);
    let traj = solve_oc(&problem, &theta, &SolverConfig { tol: 1e-10, ..SolverConfig::default() }, None)?;
    let lqr = lqr_solve(&a, &b, &q, &r, &qf, &x0, &TimeGrid::new(0.0, 1.0, steps)?)?;

    let gap = (0..=steps).map(|k| (traj.states.at_node(k) - &lqr.states[k]).amax()).fold(0.0, f64::max);
    println!("solver iterations {}  max state gap to LQR {gap:.2e}", traj.iterations);
    Ok(())
}
