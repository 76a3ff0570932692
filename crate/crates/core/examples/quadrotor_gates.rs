//! Learn a quadrotor cost and warp from five position keyframes placed at
//! two gates, then report the keyframe distances of the learned trajectory.
//!
//! Usage: `quadrotor_gates [iterations]`

use keyframe_ioc::benchmarks::builtin;
use keyframe_ioc::cli::keyframe_distance;
use keyframe_ioc::learner::fit;

fn main() -> keyframe_ioc::Result<()> {
    let mut spec = builtin("quad_gates_n5")?;
    if let Some(n) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        spec.learn.max_iter = n;
    }
    let keyframes = spec.keyframe_set()?;
    let res = fit(&spec.learn_problem()?, &keyframes, &spec.initial_theta()?, &spec.learn)?;
    let first = res.loss_history[0];
    println!("loss {first:.3} -> {:.3} in {} iterations", res.final_loss(), res.loss_history.len() - 1);
    println!("mean keyframe distance {:.3} m", keyframe_distance(&spec, &res.final_trajectory, &keyframes)?);
    let end = res.final_trajectory.states.last();
    println!("final position [{:.2}, {:.2}, {:.2}]", end[0], end[1], end[2]);
    Ok(())
}
