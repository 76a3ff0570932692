//! Time the analytic gradient against finite differences as the parameter
//! dimension and the grid size grow.
//!
//! Usage: `timing_bench [out_dir]`

use keyframe_ioc::benchmarks::builtin_bench;

fn main() -> keyframe_ioc::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/bench".into());
    let spec = builtin_bench("arm_neural_timing")?;
    let (_, summary) = keyframe_ioc::cli::bench(&spec, out.as_ref())?;
    print!("{}", summary.to_text());
    Ok(())
}
