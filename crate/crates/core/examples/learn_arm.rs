//! Fit cost weights and a linear time warp to arm keyframes generated by the
//! solver itself, so the true parameters are known.
//!
//! Usage: `learn_arm [iterations]`

use keyframe_ioc::benchmarks::{builtin, generate_keyframes, ARM_THETA_TRUE};
use keyframe_ioc::learner::fit;
use keyframe_ioc::models::ThetaParams;

fn main() -> keyframe_ioc::Result<()> {
    let iters = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut spec = builtin("arm_recovery_n8")?;
    spec.learn.max_iter = iters;
    let truth = ThetaParams::from_slice(&ARM_THETA_TRUE, 4);
    let keyframes = generate_keyframes(&spec, &truth)?;
    let problem = spec.learn_problem()?;
    let theta0 = spec.initial_theta()?;

    let res = fit(&problem, &keyframes, &theta0, &spec.learn)?;
    for (k, loss) in res.loss_history.iter().enumerate().step_by((iters / 10).max(1)) {
        let err = (res.theta_history[k].to_vector() - truth.to_vector()).norm_squared();
        println!("iter {k:4}  loss {loss:.3e}  |θ-θ*|² {err:.3e}");
    }
    println!("{:?}  θ = {:?}", res.termination, res.final_theta().to_vector().as_slice());
    Ok(())
}
