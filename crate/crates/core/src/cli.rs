//! Config-driven runner behind the `kfioc` binary.
//!
//! Every command writes into one output directory: CSV for numeric series,
//! JSON for metadata, and a `manifest.json` listing what was written.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::benchmarks::{builtin, builtin_bench, BenchSpec, ExperimentSpec};
use crate::learner::{fit, KeyframeSet, LearnResult, Termination};
use crate::models::{warp_is_admissible, ThetaParams};
use crate::ocsolver::{solve_oc, Trajectory};
use crate::oracle::{timing_comparison, GradientMethod, TimingTable};
use crate::{Error, Result};

/// JSON schema of `manifest.json`.
pub const MANIFEST_SCHEMA: &str = include_str!("../schema/manifest.schema.json");
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Run,
    Replay,
    Bench,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: Command,
    pub experiment: String,
    /// SHA-256 of the resolved spec in compact JSON.
    pub spec_sha256: String,
    pub seed: u64,
    pub code_version: String,
    /// File names relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
    pub termination: String,
    /// Outer iterations taken after `θ0` (run only).
    pub iterations: Option<usize>,
    pub failed_iteration: Option<usize>,
    pub message: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub exit_code: i32,
}

/// Process exit code for an error that aborted a command.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_solver_failure() {
        EXIT_SOLVER
    } else if matches!(e, Error::Config { .. } | Error::UnknownExperiment(_) | Error::Json(_)) {
        EXIT_CONFIG
    } else {
        EXIT_FAILURE
    }
}

/// Sets `path=value` in a JSON document. The path is dot separated, numeric
/// segments index arrays, and missing objects along the way are created. The
/// value is parsed as JSON and kept as a string if that fails.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must have the form path=value"))?;
    if path.is_empty() {
        return Err(Error::config(assignment, "empty override path"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for segment in path.split('.') {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => map.entry(segment.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let len = items.len();
                segment
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| Error::config(path, format!("'{segment}' is not an index below {len}")))?
            }
            _ => return Err(Error::config(path, format!("'{segment}' descends into a scalar"))),
        };
    }
    *node = value;
    Ok(())
}

fn resolve<T: Serialize + DeserializeOwned>(
    source: &str,
    builtin: impl Fn(&str) -> Result<T>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<T> {
    let path = Path::new(source);
    let mut doc: Value = if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{source}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{source}: {e}")))?
    } else {
        match builtin(source) {
            Ok(spec) => serde_json::to_value(spec)?,
            Err(_) => return Err(Error::config("config", format!("'{source}' is neither a file nor a builtin"))),
        }
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut doc, &format!("seed={seed}"))?;
    }
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "config".to_string() } else { path };
        Error::config(field, e.into_inner().to_string())
    })
}

/// Loads an experiment from a JSON file or builtin name, then applies
/// `--set` overrides and `--seed`.
pub fn resolve_experiment(source: &str, overrides: &[String], seed: Option<u64>) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = resolve(source, builtin, overrides, seed)?;
    spec.validate()?;
    Ok(spec)
}

pub fn resolve_bench(source: &str, overrides: &[String], seed: Option<u64>) -> Result<BenchSpec> {
    let spec: BenchSpec = resolve(source, builtin_bench, overrides, seed)?;
    spec.validate()?;
    Ok(spec)
}

fn spec_hash(spec: &impl Serialize) -> Result<String> {
    let compact = serde_json::to_string(spec)?;
    Ok(hex::encode(Sha256::digest(compact.as_bytes())))
}

fn manifest(command: Command, experiment: &str, spec: &impl Serialize, seed: u64) -> Result<RunManifest> {
    Ok(RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        command,
        experiment: experiment.to_string(),
        spec_sha256: spec_hash(spec)?,
        seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: Vec::new(),
        wall_time_seconds: 0.0,
        termination: String::new(),
        iterations: None,
        failed_iteration: None,
        message: None,
    })
}

struct OutDir<'a> {
    root: &'a Path,
    written: Vec<String>,
}

impl<'a> OutDir<'a> {
    fn new(root: &'a Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root, written: Vec::new() })
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.root.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, &text)
    }

    fn csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.root.join(name)).map_err(csv_error)?;
        w.write_record(header).map_err(csv_error)?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
        }
        w.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, mut manifest: RunManifest, started: Instant) -> Result<RunManifest> {
        self.written.push("manifest.json".to_string());
        manifest.outputs = std::mem::take(&mut self.written);
        manifest.wall_time_seconds = started.elapsed().as_secs_f64();
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(manifest)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

fn trajectory_csv(out: &mut OutDir, spec: &ExperimentSpec, traj: &Trajectory) -> Result<()> {
    let task = spec.task_map()?;
    let n = traj.states.first().len();
    let m = traj.controls.first().len();
    let o = task.output_dim();
    let header: Vec<String> = ["tau".to_string(), "t_warped".to_string()]
        .into_iter()
        .chain(names("x", n))
        .chain(names("u", m))
        .chain(names("y", o))
        .collect();
    let warped = traj.warped_times();
    let rows = traj.grid().nodes().enumerate().map(|(k, tau)| {
        let x = traj.states.at_node(k);
        let u = traj.controls.at_node(k);
        let y = task.eval(x, u);
        let mut row = vec![tau, warped[k]];
        row.extend(x.iter().chain(u.iter()).chain(y.iter()));
        row
    });
    out.csv("trajectory.csv", &header, rows.collect::<Vec<_>>())
}

fn keyframes_csv(out: &mut OutDir, keyframes: &KeyframeSet) -> Result<()> {
    let o = keyframes.frames.first().map_or(0, |f| f.y.len());
    let header: Vec<String> = std::iter::once("tau".to_string()).chain(names("y", o)).collect();
    let rows = keyframes.frames.iter().map(|f| std::iter::once(f.tau).chain(f.y.iter().copied()).collect());
    out.csv("keyframes.csv", &header, rows)
}

fn history_csvs(out: &mut OutDir, result: &LearnResult) -> Result<()> {
    let header: Vec<String> = ["iter", "loss", "grad_norm", "eta"].map(String::from).to_vec();
    let rows = (0..result.loss_history.len()).map(|k| {
        vec![k as f64, result.loss_history[k], result.grad_norm_history[k], result.eta_history[k]]
    });
    out.csv("loss_history.csv", &header, rows)?;
    let first = &result.theta_history[0];
    let header: Vec<String> =
        std::iter::once("iter".to_string()).chain(names("p", first.r())).chain(names("beta", first.s())).collect();
    let rows = result.theta_history.iter().enumerate().map(|(k, t)| {
        std::iter::once(k as f64).chain(t.p.iter().copied()).chain(t.beta.iter().copied()).collect()
    });
    out.csv("theta_history.csv", &header, rows)
}

/// Fits the experiment and writes `config.json`, `keyframes.csv`,
/// `loss_history.csv`, `theta_history.csv`, `trajectory.csv` and
/// `manifest.json`. A solver failure mid-fit keeps the histories up to the
/// failure and exits with [`EXIT_SOLVER`].
pub fn run(spec: &ExperimentSpec, out_dir: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let mut out = OutDir::new(out_dir)?;
    let mut man = manifest(Command::Run, &spec.name, spec, spec.seed)?;
    out.text("config.json", &(spec.to_json()? + "\n"))?;

    let problem = spec.learn_problem()?;
    let keyframes = spec.keyframe_set()?;
    keyframes_csv(&mut out, &keyframes)?;
    let theta0 = spec.initial_theta()?;

    let mut exit_code = EXIT_OK;
    match fit(&problem, &keyframes, &theta0, &spec.learn) {
        Ok(result) => {
            history_csvs(&mut out, &result)?;
            trajectory_csv(&mut out, spec, &result.final_trajectory)?;
            man.iterations = Some(result.loss_history.len() - 1);
            man.termination = termination_label(&result.termination).to_string();
            if let Termination::SolverFailure { iteration, message } = &result.termination {
                man.failed_iteration = Some(*iteration);
                man.message = Some(message.clone());
                exit_code = EXIT_SOLVER;
            }
        }
        Err(e) if e.is_solver_failure() => {
            man.termination = "solver_failure".to_string();
            man.failed_iteration = Some(match &e {
                Error::Outer { iteration, .. } => *iteration,
                _ => 0,
            });
            man.message = Some(e.to_string());
            exit_code = EXIT_SOLVER;
        }
        Err(e) => return Err(e),
    }
    Ok(Outcome { manifest: out.finish(man, started)?, exit_code })
}

fn termination_label(t: &Termination) -> &'static str {
    match t {
        Termination::MaxIterations => "max_iterations",
        Termination::LossStalled => "loss_stalled",
        Termination::SmallGradient => "small_gradient",
        Termination::SolverFailure { .. } => "solver_failure",
    }
}

/// Reads `θ` from a `theta_history.csv` (last row) or a JSON file holding
/// either `{"p": [...], "beta": [...]}` or a flat `[p; β]` array.
pub fn load_theta(path: &Path, cost_dim: usize) -> Result<ThetaParams> {
    let bad = |msg: String| Error::config("theta", format!("{}: {msg}", path.display()));
    if path.extension().is_some_and(|e| e == "csv") {
        let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        let last = reader
            .records()
            .last()
            .ok_or_else(|| bad("no rows".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let mut p = Vec::new();
        let mut beta = Vec::new();
        for (name, field) in header.iter().zip(last.iter()) {
            let v: f64 = field.parse().map_err(|_| bad(format!("'{field}' is not a number")))?;
            if name.starts_with("beta") {
                beta.push(v);
            } else if name.starts_with('p') {
                p.push(v);
            }
        }
        return Ok(ThetaParams::new(p, beta));
    }
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if value.is_array() {
        let flat: Vec<f64> = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        if flat.len() < cost_dim {
            return Err(bad(format!("expected at least {cost_dim} entries")));
        }
        return Ok(ThetaParams::from_slice(&flat, cost_dim));
    }
    serde_json::from_value(value).map_err(|e| bad(e.to_string()))
}

#[derive(Clone, Debug, Default)]
pub struct ReplayRequest {
    pub x0: Option<Vec<f64>>,
    /// New horizon `T`; the step size of the spec's grid is kept.
    pub horizon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayMetrics {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
    /// `‖x(T) − x_g‖` over the state components the goal specifies.
    pub final_distance_to_goal: Option<f64>,
    /// Mean over keyframes of the distance to the nearest trajectory output.
    pub nearest_keyframe_distance: f64,
    pub objective: f64,
    pub pmp_residual: f64,
}

/// The spec moved to new initial conditions.
pub fn replay_spec(spec: &ExperimentSpec, req: &ReplayRequest) -> Result<ExperimentSpec> {
    let mut next = spec.clone();
    if let Some(x0) = &req.x0 {
        next.x0 = x0.clone();
    }
    if let Some(t) = req.horizon {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::config("T", "must be positive and finite"));
        }
        next.steps = ((spec.steps as f64 * t / spec.horizon).round() as usize).max(1);
        next.horizon = t;
        // Keyframes stay in the training time frame; only their outputs
        // matter for the replay metrics.
        next.time_jitter = None;
    }
    if next.x0.len() != spec.x0.len() {
        return Err(Error::config("x0", format!("expected {} entries, got {}", spec.x0.len(), next.x0.len())));
    }
    Ok(next)
}

pub fn goal_distance(spec: &ExperimentSpec, final_state: &DVector<f64>) -> Option<f64> {
    let goal = spec.goal.as_ref()?;
    Some(goal.iter().enumerate().map(|(i, g)| (final_state[i] - g).powi(2)).sum::<f64>().sqrt())
}

/// Mean over keyframes of `‖y(τ_i) − y*_i‖`, the distance at each keyframe's
/// own time.
pub fn keyframe_distance(spec: &ExperimentSpec, traj: &Trajectory, keyframes: &KeyframeSet) -> Result<f64> {
    let task = spec.task_map()?;
    let mut total = 0.0;
    for f in &keyframes.frames {
        let y = task.eval(&traj.state_at(f.tau)?, &traj.control_at(f.tau)?);
        total += (y - DVector::from_column_slice(&f.y)).norm();
    }
    Ok(total / keyframes.frames.len() as f64)
}

/// Mean over keyframes of the distance to the nearest trajectory output,
/// ignoring keyframe times.
pub fn nearest_keyframe_distance(spec: &ExperimentSpec, traj: &Trajectory, keyframes: &KeyframeSet) -> Result<f64> {
    let task = spec.task_map()?;
    let outputs: Vec<DVector<f64>> = (0..traj.states.values().len())
        .map(|k| task.eval(traj.states.at_node(k), traj.controls.at_node(k)))
        .collect();
    let total: f64 = keyframes
        .frames
        .iter()
        .map(|f| {
            let target = DVector::from_column_slice(&f.y);
            outputs.iter().map(|y| (y - &target).norm()).fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / keyframes.frames.len() as f64)
}

/// One optimal control solve at `θ` under new conditions. Writes
/// `config.json`, `theta.json`, `trajectory.csv` and `metrics.json`.
pub fn replay(spec: &ExperimentSpec, theta: &ThetaParams, req: &ReplayRequest, out_dir: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let keyframes = spec.keyframe_set()?;
    let next = replay_spec(spec, req)?;
    if theta.r() != next.cost_dim()? || theta.s() != next.warp_degree {
        return Err(Error::config(
            "theta",
            format!("expected {} cost and {} warp parameters", next.cost_dim()?, next.warp_degree),
        ));
    }
    if !theta.beta.is_empty() && !warp_is_admissible(&theta.beta, next.horizon, next.learn.warp_checks) {
        return Err(Error::config("T", "the learned warp is not increasing on the new horizon"));
    }
    let mut out = OutDir::new(out_dir)?;
    let mut man = manifest(Command::Replay, &next.name, &(&next, theta), next.seed)?;
    out.text("config.json", &(next.to_json()? + "\n"))?;
    out.json("theta.json", theta)?;

    let problem = next.oc_problem()?;
    let mut exit_code = EXIT_OK;
    match solve_oc(&problem, theta, &next.learn.solver, None) {
        Ok(traj) => {
            trajectory_csv(&mut out, &next, &traj)?;
            let metrics = ReplayMetrics {
                x0: next.x0.clone(),
                horizon: next.horizon,
                steps: next.steps,
                final_distance_to_goal: goal_distance(&next, traj.states.last()),
                nearest_keyframe_distance: nearest_keyframe_distance(&next, &traj, &keyframes)?,
                objective: traj.objective,
                pmp_residual: traj.pmp_residual,
            };
            out.json("metrics.json", &metrics)?;
            man.termination = "solved".to_string();
        }
        Err(e) if e.is_solver_failure() => {
            man.termination = "solver_failure".to_string();
            man.failed_iteration = Some(0);
            man.message = Some(e.to_string());
            exit_code = EXIT_SOLVER;
        }
        Err(e) => return Err(e),
    }
    Ok(Outcome { manifest: out.finish(man, started)?, exit_code })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub param_dim: usize,
    pub horizon_steps: usize,
    /// Finite-difference time over analytic time.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub param_dim: usize,
    /// Seconds per grid step of the fit through the origin.
    pub slope: f64,
    /// Largest `|t − slope·K| / (slope·K)` over the horizons.
    pub max_relative_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub ratios: Vec<RatioRow>,
    /// Per horizon: whether the ratio strictly increases with `dim θ`.
    pub ratio_increasing_in_dim: Vec<(usize, bool)>,
    pub analytic_linear_in_horizon: Vec<LinearFit>,
    pub failed_cells: usize,
}

impl BenchSummary {
    pub fn from_table(table: &TimingTable, dims: &[usize], horizons: &[usize]) -> Self {
        let ratios: Vec<RatioRow> = table
            .ratios()
            .into_iter()
            .map(|(param_dim, horizon_steps, ratio)| RatioRow { param_dim, horizon_steps, ratio })
            .collect();
        let ratio_increasing_in_dim = horizons
            .iter()
            .map(|&k| {
                let series: Vec<Option<f64>> = dims
                    .iter()
                    .map(|&d| ratios.iter().find(|r| r.param_dim == d && r.horizon_steps == k).map(|r| r.ratio))
                    .collect();
                let ok = series.iter().all(Option::is_some) && series.windows(2).all(|w| w[1] > w[0]);
                (k, ok)
            })
            .collect();
        let analytic_linear_in_horizon = dims
            .iter()
            .filter_map(|&d| {
                let pts: Vec<(f64, f64)> = horizons
                    .iter()
                    .filter_map(|&k| table.seconds(GradientMethod::Analytic, d, k).map(|t| (k as f64, t)))
                    .collect();
                if pts.len() != horizons.len() {
                    return None;
                }
                let slope = pts.iter().map(|(k, t)| k * t).sum::<f64>() / pts.iter().map(|(k, _)| k * k).sum::<f64>();
                let max_relative_deviation =
                    pts.iter().map(|(k, t)| ((t - slope * k) / (slope * k)).abs()).fold(0.0, f64::max);
                Some(LinearFit { param_dim: d, slope, max_relative_deviation })
            })
            .collect();
        let failed_cells = table.rows.iter().filter(|r| r.error.is_some()).count();
        Self { ratios, ratio_increasing_in_dim, analytic_linear_in_horizon, failed_cells }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("param_dim horizon_steps fd/analytic\n");
        for r in &self.ratios {
            s.push_str(&format!("{:>9} {:>13} {:>12.2}\n", r.param_dim, r.horizon_steps, r.ratio));
        }
        for (k, ok) in &self.ratio_increasing_in_dim {
            s.push_str(&format!("K={k}: ratio increasing in dim: {ok}\n"));
        }
        for f in &self.analytic_linear_in_horizon {
            s.push_str(&format!(
                "dim={}: analytic {:.3e} s/step, max deviation from linear {:.1}%\n",
                f.param_dim,
                f.slope,
                100.0 * f.max_relative_deviation
            ));
        }
        s
    }
}

/// Runs the timing study and writes `config.json`, `timing.csv`,
/// `timing_summary.json` and `timing_summary.txt`.
pub fn bench(spec: &BenchSpec, out_dir: &Path) -> Result<(Outcome, BenchSummary)> {
    let started = Instant::now();
    let mut out = OutDir::new(out_dir)?;
    let mut man = manifest(Command::Bench, &spec.name, spec, spec.seed)?;
    out.text("config.json", &(spec.to_json()? + "\n"))?;
    let table = timing_comparison(|d, k| spec.case(d, k), &spec.dims, &spec.horizons, &spec.timing);
    out.text("timing.csv", &table.to_csv())?;
    let summary = BenchSummary::from_table(&table, &spec.dims, &spec.horizons);
    out.json("timing_summary.json", &summary)?;
    out.text("timing_summary.txt", &summary.to_text())?;
    let exit_code = if summary.failed_cells == 0 {
        man.termination = "completed".to_string();
        EXIT_OK
    } else {
        man.termination = "solver_failure".to_string();
        man.message = table.rows.iter().find_map(|r| r.error.clone());
        EXIT_SOLVER
    };
    Ok((Outcome { manifest: out.finish(man, started)?, exit_code }, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_set_nested_paths() {
        let mut doc = json!({"learn": {"max_iter": 5}, "x0": [1.0, 2.0], "jitter": null});
        apply_override(&mut doc, "learn.max_iter=0").unwrap();
        apply_override(&mut doc, "x0.1=-3.5").unwrap();
        apply_override(&mut doc, "jitter.half_width=0.1").unwrap();
        apply_override(&mut doc, "name=plain text").unwrap();
        assert_eq!(doc, json!({"learn": {"max_iter": 0}, "x0": [1.0, -3.5], "jitter": {"half_width": 0.1}, "name": "plain text"}));
        assert!(matches!(apply_override(&mut doc, "x0.7=1"), Err(Error::Config { field, .. }) if field == "x0.7"));
        assert!(apply_override(&mut doc, "learn.max_iter.deep=1").is_err());
        assert!(apply_override(&mut doc, "no_equals").is_err());
    }

    #[test]
    fn resolve_names_the_bad_field() {
        let e = resolve_experiment("arm_recovery_n8", &["horizon=-1".into()], None).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "horizon"), "{e}");
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        let e = resolve_experiment("arm_recovery_n8", &["stepz=3".into()], None).unwrap_err();
        assert!(e.to_string().contains("stepz"), "{e}");
        let e = resolve_experiment("arm_recovery_n8", &["learn.max_iter=x".into()], None).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "learn.max_iter"), "{e}");
        let e = resolve_experiment("no_such_thing", &[], None).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        let spec = resolve_experiment("arm_recovery_n8", &[], Some(42)).unwrap();
        assert_eq!(spec.seed, 42);
    }

    #[test]
    fn summary_flags_shape() {
        use crate::oracle::TimingRow;
        let mut table = TimingTable::default();
        for (d, k, a, f) in [(5, 100, 1.0, 4.0), (5, 200, 2.0, 8.0), (20, 100, 1.0, 10.0), (20, 200, 2.1, 30.0)] {
            table.rows.push(TimingRow { method: GradientMethod::Analytic, param_dim: d, horizon_steps: k, seconds: a, error: None });
            table.rows.push(TimingRow { method: GradientMethod::FiniteDifference, param_dim: d, horizon_steps: k, seconds: f, error: None });
        }
        let s = BenchSummary::from_table(&table, &[5, 20], &[100, 200]);
        assert_eq!(s.ratio_increasing_in_dim, vec![(100, true), (200, true)]);
        assert!(s.analytic_linear_in_horizon[0].max_relative_deviation < 1e-12);
        assert!(s.analytic_linear_in_horizon[1].max_relative_deviation > 0.0);
        assert_eq!(s.failed_cells, 0);
    }

    #[test]
    fn goal_distance_uses_the_goal_components() {
        let spec = builtin("quad_gates_n5").unwrap();
        let mut x = DVector::zeros(13);
        x[0] = 8.0;
        x[1] = 8.0;
        x[2] = 3.0;
        x[5] = 100.0;
        assert_eq!(goal_distance(&spec, &x), Some(3.0));
    }
}
