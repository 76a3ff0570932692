//! Keyframes that no parameter setting reproduces exactly: richer warps
//! (higher polynomial degree) reach lower loss.
//!
//! Usage: `warp_degrees [iterations]`

use keyframe_ioc::benchmarks::builtin;
use keyframe_ioc::learner::fit;

fn main() -> keyframe_ioc::Result<()> {
    let iters = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    for s in 1..=4 {
        let mut spec = builtin(&format!("arm_warp_degree_{s}"))?;
        spec.learn.max_iter = iters;
        let res = fit(&spec.learn_problem()?, &spec.keyframe_set()?, &spec.initial_theta()?, &spec.learn)?;
        let beta = &res.final_theta().beta;
        println!("s = {s}  loss {:.4}  β = {beta:.3?}", res.final_loss());
    }
    Ok(())
}
