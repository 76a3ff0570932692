//! Solve the two-link arm at the reference parameters and print the warped
//! schedule, a few states and the solver diagnostics.

use keyframe_ioc::benchmarks::builtin;

fn main() -> keyframe_ioc::Result<()> {
    let spec = builtin("arm_recovery_n8")?;
    let problem = spec.oc_problem()?;
    let theta = spec.true_theta()?.expect("recovery specs carry theta_true");
    let traj = keyframe_ioc::ocsolver::solve_oc(&problem, &theta, &spec.learn.solver, None)?;

    println!("iterations {}  pmp residual {:.2e}  objective {:.4}", traj.iterations, traj.pmp_residual, traj.objective);
    let t = traj.warped_times();
    for tau in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let k = (tau * spec.steps as f64).round() as usize;
        let x = traj.state_at(tau)?;
        println!("tau {tau:.2}  t {:.3}  q = [{:+.3}, {:+.3}]", t[k], x[0], x[1]);
    }
    Ok(())
}
