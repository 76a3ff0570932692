//! Resolve a builtin experiment with overrides, run it and list the
//! artifacts written.
//!
//! Usage: `run_config [out_dir]`

use keyframe_ioc::cli::{resolve_experiment, run};

fn main() -> keyframe_ioc::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/run_config".into());
    let overrides = ["learn.max_iter=20".to_string(), "steps=150".to_string()];
    let spec = resolve_experiment("arm_recovery_n4", &overrides, Some(7))?;
    let outcome = run(&spec, out.as_ref())?;
    println!("termination {}  exit code {}", outcome.manifest.termination, outcome.exit_code);
    for name in &outcome.manifest.outputs {
        println!("  {out}/{name}");
    }
    Ok(())
}
