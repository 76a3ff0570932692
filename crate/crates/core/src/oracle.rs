//! Brute-force references: central finite differences through the full inner
//! solve, a finely integrated finite-horizon LQR solution, and the wall-time
//! comparison between the two gradient routes.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::learner::{keyframe_loss, loss_gradient, project, KeyframeSet, LearnConfig, LearnProblem};
use crate::models::ThetaParams;
use crate::numerics::{rk4_step, rk4_step_reverse, TimeGrid};
use crate::ocsolver::{solve_oc, SolverConfig, Trajectory};
use crate::pdpcore::trajectory_gradient;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdScheme {
    Central,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdConfig {
    pub step: f64,
    pub scheme: FdScheme,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { step: 1e-4, scheme: FdScheme::Central }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config("step", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FdGradient {
    pub gradient: DVector<f64>,
    /// Coordinates whose probes left the admissible set and were projected;
    /// their difference quotient uses the projected spacing.
    pub projected: Vec<usize>,
}

fn probe_loss(
    problem: &LearnProblem,
    keyframes: &KeyframeSet,
    theta: &ThetaParams,
    solver: &SolverConfig,
    warm: Option<&Trajectory>,
) -> Result<f64> {
    let traj = solve_oc(&problem.oc, theta, solver, warm)?;
    keyframe_loss(&traj, problem.task.as_ref(), keyframes)
}

/// Central differences of `θ ↦ L(solve_oc(θ))`, `2(r+s)` inner solves.
///
/// `warm` seeds every probe solve; pass the trajectory at `theta` to isolate
/// differentiation cost from cold-start cost.
pub fn fd_loss_gradient(
    problem: &LearnProblem,
    keyframes: &KeyframeSet,
    theta: &ThetaParams,
    fd: &FdConfig,
    solver: &SolverConfig,
    warm: Option<&Trajectory>,
) -> Result<FdGradient> {
    fd.validate()?;
    let r = theta.r();
    let base = theta.to_vector();
    let horizon = problem.oc.horizon();
    let proj_cfg = LearnConfig::default();
    let mut gradient = DVector::zeros(base.len());
    let mut projected = Vec::new();
    for j in 0..base.len() {
        let tag = |e: Error| Error::Probe { coordinate: j, source: Box::new(e) };
        let mut probe = |sign: f64| -> Result<(f64, f64)> {
            let mut v = base.clone();
            v[j] += sign * fd.step;
            let raw = ThetaParams::from_slice(v.as_slice(), r);
            let th = project(&raw, Some(theta), horizon, &proj_cfg).map_err(tag)?;
            let coord = th.to_vector()[j];
            if th != raw && !projected.contains(&j) {
                projected.push(j);
            }
            Ok((coord, probe_loss(problem, keyframes, &th, solver, warm).map_err(tag)?))
        };
        let (hi, l_hi) = probe(1.0)?;
        let (lo, l_lo) = probe(-1.0)?;
        if hi <= lo {
            return Err(tag(Error::ContractViolation("probe pair collapsed under projection".into())));
        }
        gradient[j] = (l_hi - l_lo) / (hi - lo);
    }
    Ok(FdGradient { gradient, projected })
}

/// Finite-horizon LQR solution sampled on a grid.
#[derive(Clone, Debug)]
pub struct LqrSolution {
    pub grid: TimeGrid,
    /// `P(τ)` with `V(x, τ) = ½ xᵀ P x`.
    pub p: Vec<DMatrix<f64>>,
    pub states: Vec<DVector<f64>>,
    /// `u = −R⁻¹ Bᵀ P x`.
    pub controls: Vec<DVector<f64>>,
    /// `λ = P x`.
    pub costates: Vec<DVector<f64>>,
}

/// RK4 sub-steps per grid interval used by [`lqr_solve`].
pub const LQR_SUBSTEPS: usize = 64;

/// Minimizes `∫ ½(xᵀQx + uᵀRu) dτ + ½ x(T)ᵀ Q_f x(T)` subject to
/// `ẋ = A x + B u` by integrating `−Ṗ = Q + AᵀP + PA − P B R⁻¹ Bᵀ P` backward
/// from `P(T) = Q_f`, then the closed loop forward, both with fine RK4.
#[allow(clippy::too_many_arguments)]
pub fn lqr_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    x0: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<LqrSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || qf.shape() != (n, n) || x0.len() != n {
        return Err(Error::ContractViolation("LQR matrix shapes disagree".into()));
    }
    let m = b.ncols();
    if r.shape() != (m, m) {
        return Err(Error::ContractViolation("R must be m×m".into()));
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::ContractViolation("R must be positive definite".into()))?
        .inverse();
    let s = b * &r_inv * b.transpose();
    let sub = 2 * LQR_SUBSTEPS;
    let h = grid.step() / sub as f64;
    let fine = grid.steps() * sub;

    // P on the fine lattice, from the end backward.
    let mut riccati = |_t: f64, p: &DMatrix<f64>| q + a.transpose() * p + p * a - p * &s * p;
    let mut fine_p = Vec::with_capacity(fine + 1);
    fine_p.push(qf.clone());
    let scale = 1.0 + qf.norm();
    for i in (1..=fine).rev() {
        let t = grid.t0() + i as f64 * h;
        let prev = fine_p.last().expect("non-empty");
        let mut next = rk4_step_reverse(&mut riccati, t, prev, h).ok_or(Error::RiccatiBlowup {
            node: (i - 1) / sub,
            norm: f64::INFINITY,
        })?;
        next = (&next + next.transpose()) * 0.5;
        let norm = next.norm();
        if norm > 1e12 * scale {
            return Err(Error::RiccatiBlowup { node: (i - 1) / sub, norm });
        }
        fine_p.push(next);
    }
    fine_p.reverse();

    // Closed loop with P read at the fine lattice: each RK4 step of length
    // 2h uses the node, midpoint and end values exactly.
    let mut states = vec![x0.clone()];
    let mut x = x0.clone();
    for k in 0..fine / 2 {
        let base = 2 * k;
        let mut field = |t: f64, x: &DVector<f64>| {
            let offset = ((t - grid.t0()) / h - base as f64).round() as usize;
            let p = &fine_p[base + offset.min(2)];
            (a - &s * p) * x
        };
        x = rk4_step(&mut field, grid.t0() + base as f64 * h, &x, 2.0 * h)
            .ok_or(Error::IntegrationDiverged { node: base / sub + 1 })?;
        if (base + 2) % sub == 0 {
            states.push(x.clone());
        }
    }
    let p: Vec<DMatrix<f64>> = (0..grid.len()).map(|k| fine_p[k * sub].clone()).collect();
    let controls = p.iter().zip(&states).map(|(p, x)| -(&r_inv * b.transpose() * p * x)).collect();
    let costates = p.iter().zip(&states).map(|(p, x)| p * x).collect();
    Ok(LqrSolution { grid: *grid, p, states, controls, costates })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    /// Riccati pass plus chain rule.
    Analytic,
    FiniteDifference,
}

impl GradientMethod {
    pub fn label(self) -> &'static str {
        match self {
            GradientMethod::Analytic => "analytic",
            GradientMethod::FiniteDifference => "finite_difference",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: GradientMethod,
    pub param_dim: usize,
    pub horizon_steps: usize,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
}

impl TimingTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,param_dim,horizon_steps,seconds\n");
        for row in &self.rows {
            let secs = if row.error.is_some() { "nan".to_string() } else { format!("{:.9}", row.seconds) };
            out.push_str(&format!("{},{},{},{}\n", row.method.label(), row.param_dim, row.horizon_steps, secs));
        }
        out
    }

    pub fn seconds(&self, method: GradientMethod, param_dim: usize, horizon_steps: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.param_dim == param_dim && r.horizon_steps == horizon_steps && r.error.is_none())
            .map(|r| r.seconds)
    }

    /// FD time over analytic time per `(param_dim, horizon_steps)` cell.
    pub fn ratios(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for row in self.rows.iter().filter(|r| r.method == GradientMethod::Analytic && r.error.is_none()) {
            if let Some(fd) = self.seconds(GradientMethod::FiniteDifference, row.param_dim, row.horizon_steps) {
                out.push((row.param_dim, row.horizon_steps, fd / row.seconds));
            }
        }
        out
    }
}

/// One timing cell: a problem, its keyframes and the parameters to
/// differentiate at.
pub struct TimingCase {
    pub problem: LearnProblem,
    pub keyframes: KeyframeSet,
    pub theta: ThetaParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub fd: FdConfig,
    pub solver: SolverConfig,
    /// Each cell reports the fastest of this many runs.
    pub repeats: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { fd: FdConfig::default(), solver: SolverConfig::default(), repeats: 3 }
    }
}

fn time_min<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Wall time of one loss gradient by both routes over every
/// `(dim, horizon)` pair. Both routes start their inner solves from the
/// converged trajectory at `θ`. Failed cells are kept with their error.
pub fn timing_comparison(
    build: impl Fn(usize, usize) -> Result<TimingCase>,
    dims: &[usize],
    horizons: &[usize],
    cfg: &TimingConfig,
) -> TimingTable {
    let mut table = TimingTable::default();
    for &dim in dims {
        for &steps in horizons {
            let prepared = build(dim, steps).and_then(|case| {
                let base = solve_oc(&case.problem.oc, &case.theta, &cfg.solver, None)?;
                Ok((case, base))
            });
            let (analytic, fd) = match &prepared {
                Ok((case, base)) => {
                    let analytic = time_min(cfg.repeats, || {
                        let traj = solve_oc(&case.problem.oc, &case.theta, &cfg.solver, Some(base))?;
                        let sens = trajectory_gradient(&case.problem.oc, &case.theta, &traj)?;
                        loss_gradient(&traj, &sens, case.problem.task.as_ref(), &case.keyframes)
                    });
                    let fd = time_min(cfg.repeats, || {
                        fd_loss_gradient(&case.problem, &case.keyframes, &case.theta, &cfg.fd, &cfg.solver, Some(base))
                    });
                    (analytic, fd)
                }
                Err(e) => (Err(Error::ContractViolation(e.to_string())), Err(Error::ContractViolation(e.to_string()))),
            };
            for (method, outcome) in [(GradientMethod::Analytic, analytic), (GradientMethod::FiniteDifference, fd)] {
                let (seconds, error) = match outcome {
                    Ok(s) => (s, None),
                    Err(e) => (f64::NAN, Some(e.to_string())),
                };
                table.rows.push(TimingRow { method, param_dim: dim, horizon_steps: steps, seconds, error });
            }
        }
    }
    table
}
