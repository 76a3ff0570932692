//! Outer loop: fit `θ` so the optimal trajectory passes near the keyframes.
//!
//! Each iteration solves the inner problem at `θ_k`, differentiates the
//! trajectory with [`crate::pdpcore`], chains that with the keyframe loss and
//! takes a projected gradient step.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::models::{TaskMap, ThetaParams, WARP_VELOCITY_FLOOR};
use crate::ocsolver::{solve_oc, OcProblem, SolverConfig, Trajectory};
use crate::pdpcore::{trajectory_gradient, TrajectoryGradient};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub tau: f64,
    pub y: Vec<f64>,
}

/// Time-stamped task-space targets over a demonstration of length `horizon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub horizon: f64,
    pub frames: Vec<Keyframe>,
}

impl KeyframeSet {
    pub fn new(horizon: f64, frames: Vec<Keyframe>) -> Result<Self> {
        let set = Self { horizon, frames };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::config("keyframes", "at least one keyframe is required"));
        }
        let o = self.frames[0].y.len();
        for (i, f) in self.frames.iter().enumerate() {
            if !(f.tau >= 0.0 && f.tau <= self.horizon) {
                return Err(Error::OutOfRange { tau: f.tau, t0: 0.0, t1: self.horizon });
            }
            if f.y.len() != o {
                return Err(Error::config("keyframes", format!("keyframe {i} has {} outputs, expected {o}", f.y.len())));
            }
            if i > 0 && f.tau <= self.frames[i - 1].tau {
                return Err(Error::config("keyframes", "keyframe times must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.y.len())
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.tau).collect()
    }

    /// The frames at the given positions, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let frames = indices
            .iter()
            .map(|&i| {
                self.frames
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::config("keyframe_subset", format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.horizon, frames)
    }
}

/// The inner problem together with the map from state to keyframe space.
#[derive(Clone)]
pub struct LearnProblem {
    pub oc: OcProblem,
    pub task: Arc<dyn TaskMap>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `Σ_i ‖y_i − g(ξ(τ_i))‖²`.
    L2,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    /// Base step size η.
    pub learning_rate: f64,
    /// `η_k = η / (1 + decay·k)`; zero keeps η fixed.
    pub lr_decay: f64,
    pub max_iter: usize,
    pub loss: LossKind,
    /// Stop when the loss changed less than this over `loss_window` iterations.
    pub loss_delta_tol: f64,
    pub loss_window: usize,
    /// Stop when `‖∇L‖_∞` falls below this.
    pub grad_tol: f64,
    /// Halvings of η when a step increases the loss, before accepting anyway.
    pub max_step_halvings: usize,
    /// Clamp cost parameters at zero after each step.
    pub nonnegative_p: bool,
    pub min_warp_velocity: f64,
    pub max_projection_halvings: usize,
    /// Points of `[0, T]` where warp admissibility is checked.
    pub warp_checks: usize,
    pub solver: SolverConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.3,
            lr_decay: 0.0,
            max_iter: 3000,
            loss: LossKind::L2,
            loss_delta_tol: 1e-8,
            loss_window: 10,
            grad_tol: 1e-6,
            max_step_halvings: 10,
            nonnegative_p: false,
            min_warp_velocity: WARP_VELOCITY_FLOOR,
            max_projection_halvings: 30,
            warp_checks: 201,
            solver: SolverConfig::default(),
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.lr_decay >= 0.0) {
            return Err(Error::config("lr_decay", "must be non-negative"));
        }
        if !(self.min_warp_velocity > 0.0) {
            return Err(Error::config("min_warp_velocity", "must be positive"));
        }
        if self.warp_checks < 2 {
            return Err(Error::config("warp_checks", "need at least two points"));
        }
        Ok(())
    }

    pub fn step_size(&self, k: usize) -> f64 {
        self.learning_rate / (1.0 + self.lr_decay * k as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum Termination {
    MaxIterations,
    LossStalled,
    SmallGradient,
    /// The inner solve failed after at least one recorded iterate.
    SolverFailure { iteration: usize, message: String },
}

/// Histories are aligned: entry `k` describes iterate `θ_k`.
#[derive(Clone, Debug)]
pub struct LearnResult {
    pub theta_history: Vec<ThetaParams>,
    pub loss_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    /// Step size that produced `θ_k` (zero for `θ_0`).
    pub eta_history: Vec<f64>,
    /// Seconds spent producing `θ_k`, including its solve and gradient.
    pub wall_time: Vec<f64>,
    pub final_trajectory: Trajectory,
    pub termination: Termination,
}

impl LearnResult {
    pub fn final_theta(&self) -> &ThetaParams {
        self.theta_history.last().expect("history is never empty")
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history is never empty")
    }
}

fn check_task(traj: &Trajectory, task: &dyn TaskMap, keyframes: &KeyframeSet) -> Result<()> {
    if task.output_dim() != keyframes.output_dim() {
        return Err(Error::ContractViolation(format!(
            "task map has {} outputs, keyframes have {}",
            task.output_dim(),
            keyframes.output_dim()
        )));
    }
    let t1 = traj.grid().t1();
    if let Some(f) = keyframes.frames.iter().find(|f| f.tau > t1 || f.tau < traj.grid().t0()) {
        return Err(Error::OutOfRange { tau: f.tau, t0: traj.grid().t0(), t1 });
    }
    Ok(())
}

/// `g(ξ(τ_i)) − y_i` for every keyframe.
fn residuals(traj: &Trajectory, task: &dyn TaskMap, keyframes: &KeyframeSet) -> Result<Vec<DVector<f64>>> {
    check_task(traj, task, keyframes)?;
    keyframes
        .frames
        .iter()
        .map(|f| {
            let x = traj.state_at(f.tau)?;
            let u = traj.control_at(f.tau)?;
            Ok(task.eval(&x, &u) - DVector::from_column_slice(&f.y))
        })
        .collect()
}

/// `Σ_i ‖y_i − g(ξ(τ_i))‖²`.
pub fn keyframe_loss(traj: &Trajectory, task: &dyn TaskMap, keyframes: &KeyframeSet) -> Result<f64> {
    Ok(residuals(traj, task, keyframes)?.iter().map(|r| r.norm_squared()).sum())
}

/// `dL/dθ` from the trajectory sensitivities at the keyframe times.
pub fn loss_gradient(
    traj: &Trajectory,
    grads: &TrajectoryGradient,
    task: &dyn TaskMap,
    keyframes: &KeyframeSet,
) -> Result<DVector<f64>> {
    let res = residuals(traj, task, keyframes)?;
    if grads.grid.steps() != traj.grid().steps() {
        return Err(Error::ContractViolation("gradient and trajectory grids differ".into()));
    }
    let q = grads.dx[0].ncols();
    if q != traj.theta.dim() {
        return Err(Error::ContractViolation(format!(
            "gradient has {q} columns, θ has {} entries",
            traj.theta.dim()
        )));
    }
    let mut total = DVector::zeros(q);
    for (f, r) in keyframes.frames.iter().zip(&res) {
        let x = traj.state_at(f.tau)?;
        let u = traj.control_at(f.tau)?;
        let (gx, gu) = task.jacobians(&x, &u);
        let dy = gx * grads.dx_at(f.tau)? + gu * grads.du_at(f.tau)?;
        total += dy.transpose() * r * 2.0;
    }
    Ok(total)
}

/// Maps `θ` back into the admissible set.
///
/// Cost parameters pass through unless `nonnegative_p` is set. A single warp
/// coefficient is clamped at the velocity floor. Higher-order warps are pulled
/// back toward `previous` (or the identity warp) by halving the step until the
/// warp is admissible.
pub fn project(theta: &ThetaParams, previous: Option<&ThetaParams>, horizon: f64, cfg: &LearnConfig) -> Result<ThetaParams> {
    let mut out = theta.clone();
    if cfg.nonnegative_p {
        for p in &mut out.p {
            *p = p.max(0.0);
        }
    }
    let floor = cfg.min_warp_velocity;
    let admissible = |beta: &[f64]| {
        beta.iter().all(|b| b.is_finite())
            && (0..cfg.warp_checks).all(|j| {
                let tau = horizon * j as f64 / (cfg.warp_checks - 1) as f64;
                crate::models::warp_velocity(beta, tau) >= floor
            })
    };
    match out.beta.len() {
        0 => {}
        1 => out.beta[0] = out.beta[0].max(floor),
        s => {
            if !admissible(&out.beta) {
                let anchor = match previous {
                    Some(prev) if prev.beta.len() == s && admissible(&prev.beta) => prev.beta.clone(),
                    _ => {
                        let mut identity = vec![0.0; s];
                        identity[0] = 1.0;
                        identity
                    }
                };
                let mut step: Vec<f64> = out.beta.iter().zip(&anchor).map(|(b, a)| b - a).collect();
                let mut found = false;
                for _ in 0..cfg.max_projection_halvings {
                    step.iter_mut().for_each(|d| *d *= 0.5);
                    let cand: Vec<f64> = anchor.iter().zip(&step).map(|(a, d)| a + d).collect();
                    if admissible(&cand) {
                        out.beta = cand;
                        found = true;
                        break;
                    }
                }
                if !found {
                    return Err(Error::ProjectionFailed { halvings: cfg.max_projection_halvings });
                }
            }
        }
    }
    Ok(out)
}

/// `θ_0` drawn as in the experiments: `p ~ U[0, 1]^r`, `β` all ones.
pub fn random_theta0<R: Rng>(r: usize, s: usize, rng: &mut R) -> ThetaParams {
    ThetaParams::new((0..r).map(|_| rng.gen::<f64>()).collect(), vec![1.0; s])
}

/// `N·o ≥ r + s`: at least as many keyframe equations as unknowns. The count
/// is necessary for a unique `θ`, not sufficient.
pub fn identifiability_check(n: usize, o: usize, r: usize, s: usize) -> (bool, String) {
    let equations = n * o;
    let unknowns = r + s;
    if equations >= unknowns {
        (true, format!("{n} keyframes × {o} outputs = {equations} equations for {unknowns} unknowns"))
    } else {
        (
            false,
            format!(
                "{n} keyframes × {o} outputs = {equations} equations for {unknowns} unknowns; {} more equations needed",
                unknowns - equations
            ),
        )
    }
}

struct Iterate {
    theta: ThetaParams,
    traj: Trajectory,
    loss: f64,
    grad: DVector<f64>,
}

fn evaluate(problem: &LearnProblem, keyframes: &KeyframeSet, theta: ThetaParams, warm: Option<&Trajectory>, cfg: &LearnConfig) -> Result<Iterate> {
    let (traj, loss) = solve_and_score(problem, keyframes, &theta, warm, cfg)?;
    with_gradient(problem, keyframes, theta, traj, loss)
}

fn solve_and_score(
    problem: &LearnProblem,
    keyframes: &KeyframeSet,
    theta: &ThetaParams,
    warm: Option<&Trajectory>,
    cfg: &LearnConfig,
) -> Result<(Trajectory, f64)> {
    let traj = solve_oc(&problem.oc, theta, &cfg.solver, warm)?;
    let loss = keyframe_loss(&traj, problem.task.as_ref(), keyframes)?;
    Ok((traj, loss))
}

fn with_gradient(problem: &LearnProblem, keyframes: &KeyframeSet, theta: ThetaParams, traj: Trajectory, loss: f64) -> Result<Iterate> {
    let sens = trajectory_gradient(&problem.oc, &theta, &traj)?;
    let grad = loss_gradient(&traj, &sens, problem.task.as_ref(), keyframes)?;
    Ok(Iterate { theta, traj, loss, grad })
}

/// Loss and its gradient at `θ`, from a fresh solve.
pub fn loss_and_gradient(
    problem: &LearnProblem,
    keyframes: &KeyframeSet,
    theta: &ThetaParams,
    solver: &SolverConfig,
) -> Result<(f64, DVector<f64>, Trajectory)> {
    let cfg = LearnConfig { solver: solver.clone(), ..LearnConfig::default() };
    let it = evaluate(problem, keyframes, theta.clone(), None, &cfg)?;
    Ok((it.loss, it.grad, it.traj))
}

/// Projected gradient descent on the keyframe loss.
pub fn fit(problem: &LearnProblem, keyframes: &KeyframeSet, theta0: &ThetaParams, cfg: &LearnConfig) -> Result<LearnResult> {
    cfg.validate()?;
    keyframes.validate()?;
    if keyframes.horizon > problem.oc.horizon() + 1e-12 {
        return Err(Error::config("keyframes.horizon", "exceeds the problem horizon"));
    }
    let horizon = problem.oc.horizon();
    let outer = |iteration: usize| move |e: Error| Error::Outer { iteration, source: Box::new(e) };

    let start = Instant::now();
    let theta = project(theta0, None, horizon, cfg).map_err(outer(0))?;
    let mut current = evaluate(problem, keyframes, theta, None, cfg).map_err(outer(0))?;
    let mut result = LearnResult {
        theta_history: vec![current.theta.clone()],
        loss_history: vec![current.loss],
        grad_norm_history: vec![current.grad.norm()],
        eta_history: vec![0.0],
        wall_time: vec![start.elapsed().as_secs_f64()],
        final_trajectory: current.traj.clone(),
        termination: Termination::MaxIterations,
    };

    for k in 0..cfg.max_iter {
        if current.grad.amax() < cfg.grad_tol {
            result.termination = Termination::SmallGradient;
            break;
        }
        let started = Instant::now();
        let mut eta = cfg.step_size(k);
        let mut next = None;
        let mut failure = None;
        for attempt in 0..=cfg.max_step_halvings {
            let raw = ThetaParams::from_slice((current.theta.to_vector() - &current.grad * eta).as_slice(), current.theta.r());
            // An unprojectable step is rejected like one whose solve fails.
            let cand = match project(&raw, Some(&current.theta), horizon, cfg) {
                Ok(c) => c,
                Err(e) => {
                    failure = Some(e);
                    if attempt == cfg.max_step_halvings {
                        break;
                    }
                    eta *= 0.5;
                    continue;
                }
            };
            match solve_and_score(problem, keyframes, &cand, Some(&current.traj), cfg) {
                Ok((traj, loss)) if loss <= current.loss || attempt == cfg.max_step_halvings => {
                    match with_gradient(problem, keyframes, cand, traj, loss) {
                        Ok(it) => {
                            next = Some(it);
                            break;
                        }
                        Err(e) if e.is_solver_failure() && attempt < cfg.max_step_halvings => failure = Some(e),
                        Err(e) => {
                            failure = Some(e);
                            break;
                        }
                    }
                }
                Ok(_) => {}
                Err(e) if e.is_solver_failure() && attempt < cfg.max_step_halvings => failure = Some(e),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
            eta *= 0.5;
        }
        let Some(it) = next else {
            let e = failure.expect("a failed step records its error");
            result.termination = Termination::SolverFailure { iteration: k + 1, message: e.to_string() };
            break;
        };
        current = it;
        result.theta_history.push(current.theta.clone());
        result.loss_history.push(current.loss);
        result.grad_norm_history.push(current.grad.norm());
        result.eta_history.push(eta);
        result.wall_time.push(started.elapsed().as_secs_f64());
        result.final_trajectory = current.traj.clone();

        let h = &result.loss_history;
        if cfg.loss_window > 0 && h.len() > cfg.loss_window {
            let old = h[h.len() - 1 - cfg.loss_window];
            if (old - current.loss).abs() < cfg.loss_delta_tol {
                result.termination = Termination::LossStalled;
                break;
            }
        }
    }
    Ok(result)
}
