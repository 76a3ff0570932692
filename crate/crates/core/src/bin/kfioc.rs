use std::path::{Path, PathBuf};
use std::process::{Child, ExitCode};

use clap::{Args, Parser, Subcommand};
use keyframe_ioc::cli::{self, Outcome, ReplayRequest, EXIT_CONFIG, EXIT_FAILURE};
use keyframe_ioc::Error;

/// Learn cost and time-warping functions from sparse keyframes.
#[derive(Parser, Debug)]
#[command(name = "kfioc", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory. With several configs each gets a subdirectory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config override `path=value`, e.g. `learn.max_iter=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "K=V")]
    set: Vec<String>,
    /// Number of configs processed concurrently, one process each.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Fit θ to keyframes. CONFIG is a JSON file or a builtin experiment name.
    Run {
        #[arg(required = true)]
        configs: Vec<String>,
    },
    /// Solve once at a learned θ under a new initial state and horizon.
    Replay {
        /// theta_history.csv, a θ JSON file, or a run output directory.
        theta: PathBuf,
        /// Experiment spec; defaults to config.json next to THETA.
        #[arg(long)]
        config: Option<String>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    /// Time analytic and finite-difference gradients.
    Bench {
        #[arg(required = true)]
        configs: Vec<String>,
    },
    /// List builtin experiments and benches.
    List,
}

fn report(e: &Error) -> i32 {
    eprintln!("error: {e}");
    cli::exit_code(e)
}

fn finish(outcome: Outcome, out: &Path) -> i32 {
    let m = &outcome.manifest;
    println!("{}: {} -> {}", m.experiment, m.termination, out.display());
    if let Some(msg) = &m.message {
        eprintln!("{msg}");
    }
    outcome.exit_code
}

fn run_one(config: &str, common: &Common) -> i32 {
    let spec = match cli::resolve_experiment(config, &common.set, common.seed) {
        Ok(s) => s,
        Err(e) => return report(&e),
    };
    match cli::run(&spec, &common.out) {
        Ok(o) => finish(o, &common.out),
        Err(e) => report(&e),
    }
}

fn bench_one(config: &str, common: &Common) -> i32 {
    let spec = match cli::resolve_bench(config, &common.set, common.seed) {
        Ok(s) => s,
        Err(e) => return report(&e),
    };
    match cli::bench(&spec, &common.out) {
        Ok((o, summary)) => {
            print!("{}", summary.to_text());
            finish(o, &common.out)
        }
        Err(e) => report(&e),
    }
}

fn replay(theta: &Path, config: Option<&str>, req: ReplayRequest, common: &Common) -> i32 {
    let (theta_file, dir) = if theta.is_dir() {
        (theta.join("theta_history.csv"), theta.to_path_buf())
    } else {
        (theta.to_path_buf(), theta.parent().map(Path::to_path_buf).unwrap_or_default())
    };
    let default_config = dir.join("config.json").to_string_lossy().into_owned();
    let spec = match cli::resolve_experiment(config.unwrap_or(&default_config), &common.set, common.seed) {
        Ok(s) => s,
        Err(e) => return report(&e),
    };
    let result = spec
        .cost_dim()
        .and_then(|r| cli::load_theta(&theta_file, r))
        .and_then(|t| cli::replay(&spec, &t, &req, &common.out));
    match result {
        Ok(o) => finish(o, &common.out),
        Err(e) => report(&e),
    }
}

fn stem(config: &str) -> String {
    Path::new(config).file_stem().map_or_else(|| config.to_string(), |s| s.to_string_lossy().into_owned())
}

/// Runs each config in its own child process, at most `jobs` at a time.
/// The exit code is the largest child exit code.
fn fan_out(sub: &str, configs: &[String], common: &Common) -> i32 {
    let exe = match std::env::current_exe() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let spawn = |config: &String| -> std::io::Result<Child> {
        let mut cmd = std::process::Command::new(&exe);
        cmd.arg(sub).arg(config).arg("--out").arg(common.out.join(stem(config)));
        if let Some(seed) = common.seed {
            cmd.arg("--seed").arg(seed.to_string());
        }
        for s in &common.set {
            cmd.arg("--set").arg(s);
        }
        cmd.spawn()
    };
    let mut worst = 0;
    let mut running: Vec<Child> = Vec::new();
    let wait_one = |running: &mut Vec<Child>, worst: &mut i32| {
        let mut child = running.remove(0);
        let code = child.wait().map(|s| s.code().unwrap_or(EXIT_FAILURE)).unwrap_or(EXIT_FAILURE);
        *worst = (*worst).max(code);
    };
    for config in configs {
        if running.len() >= common.jobs.max(1) {
            wait_one(&mut running, &mut worst);
        }
        match spawn(config) {
            Ok(child) => running.push(child),
            Err(e) => {
                eprintln!("error: {config}: {e}");
                worst = worst.max(EXIT_FAILURE);
            }
        }
    }
    while !running.is_empty() {
        wait_one(&mut running, &mut worst);
    }
    worst
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let common = &cli.common;
    let code = match &cli.command {
        Cmd::Run { configs } if configs.len() == 1 => run_one(&configs[0], common),
        Cmd::Run { configs } => fan_out("run", configs, common),
        Cmd::Bench { configs } if configs.len() == 1 => bench_one(&configs[0], common),
        Cmd::Bench { configs } => fan_out("bench", configs, common),
        Cmd::Replay { theta, config, x0, horizon } => {
            let req = ReplayRequest { x0: x0.clone(), horizon: *horizon };
            replay(theta, config.as_deref(), req, common)
        }
        Cmd::List => {
            for name in keyframe_ioc::benchmarks::BUILTIN_NAMES {
                println!("run    {name}");
            }
            for name in keyframe_ioc::benchmarks::BENCH_NAMES {
                println!("bench  {name}");
            }
            0
        }
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}
