//! Compare the analytic keyframe-loss gradient with central differences
//! through the full inner solve.

use keyframe_ioc::benchmarks::builtin;
use keyframe_ioc::learner::loss_and_gradient;
use keyframe_ioc::models::ThetaParams;
use keyframe_ioc::ocsolver::SolverConfig;
use keyframe_ioc::oracle::{fd_loss_gradient, FdConfig};

fn main() -> keyframe_ioc::Result<()> {
    let spec = builtin("arm_recovery_n8")?;
    let problem = spec.learn_problem()?;
    let keyframes = spec.keyframe_set()?;
    let theta = ThetaParams::new(vec![1.0, 2.0, 0.5, 1.5], vec![0.6]);

    let (loss, grad, traj) = loss_and_gradient(&problem, &keyframes, &theta, &spec.learn.solver)?;
    let fine = SolverConfig { tol: 1e-10, ..SolverConfig::default() };
    let fd = fd_loss_gradient(&problem, &keyframes, &theta, &FdConfig::default(), &fine, Some(&traj))?;

    println!("loss {loss:.6}");
    for (j, (a, b)) in grad.iter().zip(fd.gradient.iter()).enumerate() {
        println!("  d/dθ{j}  analytic {a:+.6e}  fd {b:+.6e}");
    }
    println!("relative error {:.2e}", (&grad - &fd.gradient).norm() / fd.gradient.norm());
    Ok(())
}
