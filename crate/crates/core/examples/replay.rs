//! Reuse learned parameters on a new initial state and a longer horizon.

use keyframe_ioc::benchmarks::{arm_replay_x0, builtin};
use keyframe_ioc::cli::{goal_distance, replay_spec, ReplayRequest};
use keyframe_ioc::ocsolver::solve_oc;

fn main() -> keyframe_ioc::Result<()> {
    let spec = builtin("arm_recovery_n8")?;
    let theta = spec.true_theta()?.expect("recovery specs carry theta_true");
    for horizon in [1.0, 2.0, 3.0] {
        let req = ReplayRequest { x0: Some(arm_replay_x0()), horizon: Some(horizon) };
        let rs = replay_spec(&spec, &req)?;
        let traj = solve_oc(&rs.oc_problem()?, &theta, &rs.learn.solver, None)?;
        let d = goal_distance(&rs, traj.states.last()).unwrap_or(f64::NAN);
        println!("T = {horizon}  K = {}  |x(T) - x_g| = {d:.2e}", rs.steps);
    }
    Ok(())
}
