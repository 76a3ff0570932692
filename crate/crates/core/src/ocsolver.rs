//! Inner solver for the time-warped optimal control problem
//!
//! ```text
//! min  ∫₀ᵀ v_β(τ) c(x, u, p) dτ + h(x(T), p)
//! s.t. dx/dτ = v_β(τ) f(x, u),  x(0) = x₀
//! ```
//!
//! Controls are held constant over each grid interval. One step of the
//! discretized system is an RK4 step of the state together with the running
//! cost, so the discrete objective is the RK4 quadrature of `∫ v c`. The
//! discrete problem is solved by DDP: each backward pass uses the exact
//! second derivatives of the RK4 step contracted with the discrete costate,
//! which gives Newton convergence close to the optimum.
//!
//! The costate is the adjoint of the RK4 step map,
//! `λ_k = ∂/∂x_k [ℓ_k + λ_{k+1}ᵀ Φ_k]` with `λ_K = ∂h/∂x`, a backward
//! integration of `-dλ/dτ = ∂H/∂x` consistent with the state scheme.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::models::{warp_velocity, CostModel, DynamicsModel, ThetaParams};
use crate::numerics::{SampledPath, TimeGrid};
use crate::{Error, Result};

/// One instance of the parametric control problem, minus `θ`.
#[derive(Clone)]
pub struct OcProblem {
    pub dynamics: Arc<dyn DynamicsModel>,
    pub cost: Arc<dyn CostModel>,
    pub x0: DVector<f64>,
    pub grid: TimeGrid,
}

impl std::fmt::Debug for OcProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcProblem")
            .field("x0", &self.x0.as_slice())
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl OcProblem {
    pub fn new(
        dynamics: Arc<dyn DynamicsModel>,
        cost: Arc<dyn CostModel>,
        x0: DVector<f64>,
        horizon: f64,
        steps: usize,
    ) -> Result<Self> {
        if x0.len() != dynamics.state_dim() {
            return Err(Error::ContractViolation(format!(
                "initial state has {} entries, dynamics expect {}",
                x0.len(),
                dynamics.state_dim()
            )));
        }
        Ok(Self { dynamics, cost, x0, grid: TimeGrid::new(0.0, horizon, steps)? })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.t1()
    }

    pub fn with_x0(&self, x0: DVector<f64>) -> Self {
        Self { x0, ..self.clone() }
    }

    fn check_theta(&self, theta: &ThetaParams) -> Result<()> {
        if theta.r() != self.cost.param_dim() {
            return Err(Error::ContractViolation(format!(
                "cost expects {} parameters, got {}",
                self.cost.param_dim(),
                theta.r()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Convergence threshold on the discrete `max_k ‖∂H/∂u‖_∞`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Initial Levenberg shift on `Q_uu`.
    pub reg_init: f64,
    /// The shift never drops below this.
    pub reg_floor: f64,
    /// Cold-start control; zeros when absent.
    pub initial_control: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 300, max_halvings: 20, reg_init: 1e-6, reg_floor: 1e-9, initial_control: None }
    }
}

const MU_MAX: f64 = 1e10;

pub type CostatePath = SampledPath<DVector<f64>>;

/// A solved trajectory with its costate and diagnostics.
///
/// `controls` holds `u_k` for interval `k` at node `k`; the last node repeats
/// the final interval's control.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub theta: ThetaParams,
    pub states: SampledPath<DVector<f64>>,
    pub controls: SampledPath<DVector<f64>>,
    pub costate: CostatePath,
    /// Trapezoidal objective on the grid.
    pub objective: f64,
    pub pmp_residual: f64,
    pub iterations: usize,
    /// Discrete objective at the initial guess and after every accepted step.
    pub cost_history: Vec<f64>,
    pub residual_history: Vec<f64>,
    /// Levenberg shift in effect when the solve stopped.
    pub regularization: f64,
}

impl Trajectory {
    pub fn grid(&self) -> &TimeGrid {
        self.states.grid()
    }

    pub fn state_at(&self, tau: f64) -> Result<DVector<f64>> {
        self.states.sample_at(tau)
    }

    /// Piecewise-constant control value at `tau`.
    pub fn control_at(&self, tau: f64) -> Result<DVector<f64>> {
        let (k, _) = self.grid().locate(tau)?;
        Ok(self.controls.at_node(k).clone())
    }

    /// Real time `t = w_β(τ)` at every node.
    pub fn warped_times(&self) -> Vec<f64> {
        self.grid().nodes().map(|tau| crate::models::warp_eval(&self.theta.beta, tau)).collect()
    }

    /// Controls per interval, without the repeated last node.
    pub fn interval_controls(&self) -> &[DVector<f64>] {
        &self.controls.values()[..self.grid().steps()]
    }
}

const RK4_A: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
const RK4_B: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

/// One interval `[τ, τ + h]` of the discretized problem.
struct Step<'a> {
    dynamics: &'a dyn DynamicsModel,
    cost: &'a dyn CostModel,
    beta: &'a [f64],
    p: &'a DVector<f64>,
    tau: f64,
    h: f64,
}

/// Derivatives of `Φ` (the step map) and `ℓ` (the cost increment) at one
/// interval, plus the gradient and Hessian of `S = ℓ + λᵀΦ` for a given
/// next-node costate `λ`.
pub(crate) struct StepDerivs {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub l_x: DVector<f64>,
    pub l_u: DVector<f64>,
    pub s_x: DVector<f64>,
    pub s_u: DVector<f64>,
    /// `∇²S` over `(x, u)`, when requested.
    pub hess: Option<DMatrix<f64>>,
    /// `∇²S` without the dynamics curvature (Gauss-Newton), when requested.
    pub hess_gn: Option<DMatrix<f64>>,
}

impl<'a> Step<'a> {
    fn new(problem: &'a OcProblem, theta: &'a ThetaParams, p: &'a DVector<f64>, k: usize) -> Self {
        Self {
            dynamics: problem.dynamics.as_ref(),
            cost: problem.cost.as_ref(),
            beta: &theta.beta,
            p,
            tau: problem.grid.node(k),
            h: problem.grid.step(),
        }
    }

    /// `(Φ(x, u), ℓ(x, u))`.
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, f64) {
        let h = self.h;
        let mut next = x.clone();
        let mut cost = 0.0;
        let mut k_prev: Option<DVector<f64>> = None;
        for s in 0..4 {
            let y = match &k_prev {
                Some(kp) => x + kp * (RK4_A[s] * h),
                None => x.clone(),
            };
            let v = warp_velocity(self.beta, self.tau + RK4_A[s] * h);
            let k = self.dynamics.eval(&y, u) * v;
            next.axpy(h * RK4_B[s], &k, 1.0);
            cost += h * RK4_B[s] * v * self.cost.running(&y, u, self.p);
            k_prev = Some(k);
        }
        (next, cost)
    }

    fn derivs(&self, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>, hessian: bool) -> StepDerivs {
        let (n, m) = (x.len(), u.len());
        let h = self.h;
        let mut base = DMatrix::zeros(n, n + m);
        base.view_mut((0, 0), (n, n)).fill_diagonal(1.0);

        struct Stage {
            y: DVector<f64>,
            v: f64,
            fx: DMatrix<f64>,
            fu: DMatrix<f64>,
            cx: DVector<f64>,
            cu: DVector<f64>,
            cxx: DMatrix<f64>,
            cxu: DMatrix<f64>,
            cuu: DMatrix<f64>,
            jy: DMatrix<f64>,
        }

        let mut stages: Vec<Stage> = Vec::with_capacity(4);
        let mut jphi = base.clone();
        let mut grad_l = DVector::zeros(n + m);
        let mut k_prev = DVector::zeros(n);
        let mut jk_prev = DMatrix::zeros(n, n + m);
        for s in 0..4 {
            let y = x + &k_prev * (RK4_A[s] * h);
            let jy = &base + &jk_prev * (RK4_A[s] * h);
            let v = warp_velocity(self.beta, self.tau + RK4_A[s] * h);
            let (fx, fu) = self.dynamics.jacobians(&y, u);
            let mut jk = &fx * &jy;
            {
                let mut right = jk.view_mut((0, n), (n, m));
                right += &fu;
            }
            jk *= v;
            let k = self.dynamics.eval(&y, u) * v;
            jphi += &jk * (h * RK4_B[s]);
            let cd = self.cost.running_derivs(&y, u, self.p);
            let w = h * RK4_B[s] * v;
            grad_l += jy.transpose() * &cd.c_x * w;
            {
                let mut gu = grad_l.rows_mut(n, m);
                gu.axpy(w, &cd.c_u, 1.0);
            }
            stages.push(Stage {
                y,
                v,
                fx,
                fu,
                cx: cd.c_x,
                cu: cd.c_u,
                cxx: cd.c_xx,
                cxu: cd.c_xu,
                cuu: cd.c_uu,
                jy,
            });
            k_prev = k;
            jk_prev = jk;
        }

        // Reverse sweep: ψ_s is the adjoint of the stage slope k_s.
        let mut psi: Vec<DVector<f64>> = vec![DVector::zeros(n); 4];
        let mut s_x = lambda.clone();
        let mut s_u = DVector::zeros(m);
        let mut carry = DVector::zeros(n);
        for s in (0..4).rev() {
            psi[s] = lambda * (h * RK4_B[s]) + &carry;
            let st = &stages[s];
            let w = h * RK4_B[s] * st.v;
            let eta = st.fx.transpose() * &psi[s] * st.v + &st.cx * w;
            s_u += st.fu.transpose() * &psi[s] * st.v + &st.cu * w;
            s_x += &eta;
            carry = eta * (RK4_A[s] * h);
        }

        let (hess, hess_gn) = if hessian {
            let mut full = DMatrix::zeros(n + m, n + m);
            let mut gn = DMatrix::zeros(n + m, n + m);
            for (s, st) in stages.iter().enumerate() {
                let mut jt = DMatrix::zeros(n + m, n + m);
                jt.view_mut((0, 0), (n, n + m)).copy_from(&st.jy);
                jt.view_mut((n, n), (m, m)).fill_diagonal(1.0);
                let w = h * RK4_B[s] * st.v;
                let mut cost_part = DMatrix::zeros(n + m, n + m);
                cost_part.view_mut((0, 0), (n, n)).copy_from(&st.cxx);
                cost_part.view_mut((0, n), (n, m)).copy_from(&st.cxu);
                cost_part.view_mut((n, 0), (m, n)).copy_from(&st.cxu.transpose());
                cost_part.view_mut((n, n), (m, m)).copy_from(&st.cuu);
                let ch = self.dynamics.contracted_hessians(&st.y, u, &psi[s]);
                let mut dyn_part = DMatrix::zeros(n + m, n + m);
                dyn_part.view_mut((0, 0), (n, n)).copy_from(&ch.xx);
                dyn_part.view_mut((0, n), (n, m)).copy_from(&ch.xu);
                dyn_part.view_mut((n, 0), (m, n)).copy_from(&ch.xu.transpose());
                dyn_part.view_mut((n, n), (m, m)).copy_from(&ch.uu);
                let cost_term = jt.transpose() * cost_part * &jt * w;
                full += &cost_term + jt.transpose() * dyn_part * &jt * st.v;
                gn += cost_term;
            }
            (Some((&full + full.transpose()) * 0.5), Some((&gn + gn.transpose()) * 0.5))
        } else {
            (None, None)
        };

        StepDerivs {
            a: jphi.columns(0, n).into_owned(),
            b: jphi.columns(n, m).into_owned(),
            l_x: grad_l.rows(0, n).into_owned(),
            l_u: grad_l.rows(n, m).into_owned(),
            s_x,
            s_u,
            hess,
            hess_gn,
        }
    }
}

fn check_finite(x: &DVector<f64>, node: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::IntegrationDiverged { node })
    }
}

/// States and discrete objective under interval controls `us`.
fn simulate(problem: &OcProblem, theta: &ThetaParams, us: &[DVector<f64>]) -> Result<(Vec<DVector<f64>>, f64)> {
    let p = theta.p_vector();
    let mut xs = Vec::with_capacity(us.len() + 1);
    xs.push(problem.x0.clone());
    let mut total = 0.0;
    for (k, u) in us.iter().enumerate() {
        let (mut next, cost) = Step::new(problem, theta, &p, k).eval(&xs[k], u);
        problem.dynamics.normalize_state(&mut next);
        check_finite(&next, k + 1)?;
        total += cost;
        xs.push(next);
    }
    total += problem.cost.terminal(xs.last().unwrap(), &p);
    if !total.is_finite() {
        return Err(Error::IntegrationDiverged { node: us.len() });
    }
    Ok((xs, total))
}

fn interval_controls<'a>(problem: &OcProblem, controls: &'a SampledPath<DVector<f64>>) -> Result<&'a [DVector<f64>]> {
    if controls.grid().steps() != problem.grid.steps() {
        return Err(Error::ContractViolation("control path lives on a different grid".into()));
    }
    Ok(&controls.values()[..problem.grid.steps()])
}

fn node_controls(us: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out = us.to_vec();
    out.push(us.last().expect("at least one interval").clone());
    out
}

/// Forward RK4 rollout with the control at node `k` held over interval `k`.
pub fn rollout(problem: &OcProblem, theta: &ThetaParams, controls: &SampledPath<DVector<f64>>) -> Result<SampledPath<DVector<f64>>> {
    problem.check_theta(theta)?;
    let us = interval_controls(problem, controls)?;
    let (xs, _) = simulate(problem, theta, us)?;
    SampledPath::new(problem.grid, xs)
}

struct Sweep {
    lambdas: Vec<DVector<f64>>,
    /// `S_u / h` per interval.
    residuals: Vec<DVector<f64>>,
    derivs: Vec<StepDerivs>,
}

fn adjoint_sweep(problem: &OcProblem, theta: &ThetaParams, xs: &[DVector<f64>], us: &[DVector<f64>], hessian: bool) -> Result<Sweep> {
    let p = theta.p_vector();
    let steps = us.len();
    let h = problem.grid.step();
    let mut lambdas = vec![DVector::zeros(0); steps + 1];
    let mut residuals = vec![DVector::zeros(0); steps];
    let mut derivs = Vec::with_capacity(steps);
    lambdas[steps] = problem.cost.terminal_derivs(&xs[steps], &p).h_x;
    check_finite(&lambdas[steps], steps)?;
    for k in (0..steps).rev() {
        let d = Step::new(problem, theta, &p, k).derivs(&xs[k], &us[k], &lambdas[k + 1], hessian);
        check_finite(&d.s_x, k)?;
        lambdas[k] = d.s_x.clone();
        residuals[k] = &d.s_u / h;
        derivs.push(d);
    }
    derivs.reverse();
    Ok(Sweep { lambdas, residuals, derivs })
}

/// Costate of the discretized problem along `(states, controls)`.
pub fn solve_costate(
    problem: &OcProblem,
    theta: &ThetaParams,
    states: &SampledPath<DVector<f64>>,
    controls: &SampledPath<DVector<f64>>,
) -> Result<CostatePath> {
    problem.check_theta(theta)?;
    let us = interval_controls(problem, controls)?;
    let sweep = adjoint_sweep(problem, theta, states.values(), us, false)?;
    SampledPath::new(problem.grid, sweep.lambdas)
}

/// `∂H/∂u` of the discrete problem, one per interval, scaled by `1/h` so it
/// approximates `v (c_u + f_uᵀ λ)`.
pub fn control_residuals(
    problem: &OcProblem,
    theta: &ThetaParams,
    states: &SampledPath<DVector<f64>>,
    controls: &SampledPath<DVector<f64>>,
    costate: &CostatePath,
) -> Result<Vec<DVector<f64>>> {
    problem.check_theta(theta)?;
    let us = interval_controls(problem, controls)?;
    let p = theta.p_vector();
    let h = problem.grid.step();
    Ok((0..us.len())
        .map(|k| {
            let d = Step::new(problem, theta, &p, k).derivs(states.at_node(k), &us[k], costate.at_node(k + 1), false);
            d.s_u / h
        })
        .collect())
}

/// `max_k ‖∂H/∂u‖_∞` over all intervals.
pub fn pmp_residual(
    problem: &OcProblem,
    theta: &ThetaParams,
    states: &SampledPath<DVector<f64>>,
    controls: &SampledPath<DVector<f64>>,
    costate: &CostatePath,
) -> Result<f64> {
    Ok(max_norm(&control_residuals(problem, theta, states, controls, costate)?))
}

fn max_norm(res: &[DVector<f64>]) -> f64 {
    res.iter().map(|r| r.amax()).fold(0.0, f64::max)
}

/// Trapezoidal `∫ v c dτ` on the grid plus the final cost.
pub fn objective(problem: &OcProblem, theta: &ThetaParams, states: &SampledPath<DVector<f64>>, controls: &SampledPath<DVector<f64>>) -> f64 {
    let grid = problem.grid;
    let p = theta.p_vector();
    let h = grid.step();
    let running: Vec<f64> = (0..grid.len())
        .map(|k| warp_velocity(&theta.beta, grid.node(k)) * problem.cost.running(states.at_node(k), controls.at_node(k), &p))
        .collect();
    let integral: f64 = running.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
    integral + problem.cost.terminal(states.last(), &p)
}

struct Gains {
    ff: Vec<DVector<f64>>,
    fb: Vec<DMatrix<f64>>,
    /// Model decrease `kᵀQ_u + ½ kᵀQ_uu k` of a full step.
    expected: f64,
}

/// Riccati recursion of the Newton subproblem (Gauss-Newton when
/// `gauss_newton`); `None` when `Q_uu + μI` is not positive definite
/// somewhere.
fn newton_backward(
    problem: &OcProblem,
    theta: &ThetaParams,
    xs: &[DVector<f64>],
    sweep: &Sweep,
    mu: f64,
    gauss_newton: bool,
) -> Option<Gains> {
    let p = theta.p_vector();
    let steps = sweep.derivs.len();
    let n = problem.state_dim();
    let m = problem.control_dim();
    let term = problem.cost.terminal_derivs(&xs[steps], &p);
    let mut vx = term.h_x;
    let mut vxx = term.h_xx;
    let mut ff = vec![DVector::zeros(m); steps];
    let mut fb = vec![DMatrix::zeros(m, n); steps];
    let mut expected = 0.0;
    for k in (0..steps).rev() {
        let d = &sweep.derivs[k];
        let hess = if gauss_newton { d.hess_gn.as_ref() } else { d.hess.as_ref() };
        let hess = hess.expect("sweep computed with Hessians");
        let qx = &d.l_x + d.a.transpose() * &vx;
        let qu = &d.l_u + d.b.transpose() * &vx;
        let vxx_a = &vxx * &d.a;
        let qxx = hess.view((0, 0), (n, n)) + d.a.transpose() * &vxx_a;
        let qux = hess.view((n, 0), (m, n)) + d.b.transpose() * &vxx_a;
        let quu = hess.view((n, n), (m, m)) + d.b.transpose() * &vxx * &d.b;
        let mut reg = quu.clone();
        for i in 0..m {
            reg[(i, i)] += mu;
        }
        let chol = reg.cholesky()?;
        let kff = -chol.solve(&qu);
        let kfb = -chol.solve(&qux);
        expected += kff.dot(&qu) + 0.5 * kff.dot(&(&quu * &kff));
        vx = &qx + kfb.transpose() * (&quu * &kff + &qu) + qux.transpose() * &kff;
        let cross = kfb.transpose() * &qux;
        vxx = &qxx + kfb.transpose() * &quu * &kfb + &cross + cross.transpose();
        vxx = (&vxx + vxx.transpose()) * 0.5;
        ff[k] = kff;
        fb[k] = kfb;
    }
    Some(Gains { ff, fb, expected })
}

fn newton_forward(
    problem: &OcProblem,
    theta: &ThetaParams,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    gains: &Gains,
    alpha: f64,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, f64)> {
    let p = theta.p_vector();
    let mut nx = Vec::with_capacity(xs.len());
    let mut nu = Vec::with_capacity(us.len());
    nx.push(problem.x0.clone());
    let mut total = 0.0;
    for k in 0..us.len() {
        let u = &us[k] + &gains.ff[k] * alpha + &gains.fb[k] * (&nx[k] - &xs[k]);
        let (mut next, cost) = Step::new(problem, theta, &p, k).eval(&nx[k], &u);
        problem.dynamics.normalize_state(&mut next);
        check_finite(&next, k + 1)?;
        total += cost;
        nx.push(next);
        nu.push(u);
    }
    total += problem.cost.terminal(nx.last().unwrap(), &p);
    if !total.is_finite() {
        return Err(Error::IntegrationDiverged { node: us.len() });
    }
    Ok((nx, nu, total))
}

/// Solves the optimal control problem at `θ`, optionally warm-started from a
/// previous solution on the same grid. A warm start that fails falls back to
/// a cold start.
pub fn solve_oc(problem: &OcProblem, theta: &ThetaParams, config: &SolverConfig, warm_start: Option<&Trajectory>) -> Result<Trajectory> {
    problem.check_theta(theta)?;
    let grid = problem.grid;
    let m = problem.control_dim();
    if let Some(warm) = warm_start {
        if warm.grid().steps() != grid.steps() || warm.controls.first().len() != m {
            return Err(Error::ContractViolation("warm start was computed on a different grid".into()));
        }
        match warm_rollout(problem, theta, warm, config).and_then(|(xs, us, cost)| newton(problem, theta, xs, us, cost, config)) {
            Err(e) if e.is_solver_failure() => {}
            other => return other,
        }
    }
    let u0 = match &config.initial_control {
        Some(v) if v.len() == m => DVector::from_column_slice(v),
        Some(v) => return Err(Error::config("initial_control", format!("expected {m} entries, got {}", v.len()))),
        None => DVector::zeros(m),
    };
    let us = vec![u0; grid.steps()];
    let (xs, cost) = simulate(problem, theta, &us)?;
    newton(problem, theta, xs, us, cost, config)
}

/// Starting point from a previous solution: one Newton step linearized about
/// the old trajectory under the new `θ`, rolled out with its feedback gains so
/// that unstable dynamics track the old path instead of drifting open loop.
/// Falls back to the open-loop replay when that is cheaper.
fn warm_rollout(
    problem: &OcProblem,
    theta: &ThetaParams,
    warm: &Trajectory,
    config: &SolverConfig,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, f64)> {
    let us = warm.interval_controls().to_vec();
    let open = simulate(problem, theta, &us).ok().map(|(xs, cost)| (xs, us.clone(), cost));
    let xs = warm.states.values().to_vec();
    let mut best = open;
    if let Ok(sweep) = adjoint_sweep(problem, theta, &xs, &us, true) {
        let gains = newton_backward(problem, theta, &xs, &sweep, config.reg_init, false)
            .or_else(|| newton_backward(problem, theta, &xs, &sweep, config.reg_init, true));
        if let Some(gains) = gains {
            for alpha in [1.0, 0.5, 0.25, 0.0] {
                if let Ok(cand) = newton_forward(problem, theta, &xs, &us, &gains, alpha) {
                    if best.as_ref().map_or(true, |b| cand.2 < b.2) {
                        best = Some(cand);
                    }
                }
            }
        }
    }
    best.ok_or(Error::IntegrationDiverged { node: 0 })
}

fn newton(
    problem: &OcProblem,
    theta: &ThetaParams,
    mut xs: Vec<DVector<f64>>,
    mut us: Vec<DVector<f64>>,
    mut cost: f64,
    config: &SolverConfig,
) -> Result<Trajectory> {
    let mut cost_history = vec![cost];
    let mut residual_history = Vec::new();
    let mut mu = config.reg_init;
    let mut iterations = 0;
    loop {
        let sweep = adjoint_sweep(problem, theta, &xs, &us, true)?;
        let residual = max_norm(&sweep.residuals);
        residual_history.push(residual);

        if residual <= config.tol {
            let diag = Diagnostics { residual, iterations, cost_history, residual_history, regularization: mu };
            return finish(problem, theta, xs, us, sweep.lambdas, diag);
        }
        if iterations >= config.max_iter {
            return Err(Error::MaxIterationsExceeded { iterations, residual });
        }
        let mut accepted = None;
        while accepted.is_none() {
            // Far from the optimum the exact subproblem can be indefinite;
            // Gauss-Newton is then tried at the same damping.
            let gains = newton_backward(problem, theta, &xs, &sweep, mu, false)
                .or_else(|| newton_backward(problem, theta, &xs, &sweep, mu, true));
            let Some(gains) = gains else {
                mu *= 10.0;
                if mu > MU_MAX {
                    return Err(Error::NonDescent { iteration: iterations });
                }
                continue;
            };
            // Below this the cost change is lost in rounding; accept the
            // full step if it does not visibly increase the cost.
            let noise = 1e-12 * (1.0 + cost.abs());
            let mut alpha = 1.0;
            for _ in 0..=config.max_halvings {
                if let Ok((nx, nu, ncost)) = newton_forward(problem, theta, &xs, &us, &gains, alpha) {
                    let flat = -gains.expected < noise && ncost <= cost + noise;
                    if ncost < cost || flat {
                        accepted = Some((nx, nu, ncost));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                mu = (mu * 0.1).max(config.reg_floor);
            } else {
                mu *= 10.0;
                if mu > MU_MAX {
                    return Err(Error::NonDescent { iteration: iterations });
                }
            }
        }
        let (nx, nu, ncost) = accepted.unwrap();
        xs = nx;
        us = nu;
        cost = ncost;
        cost_history.push(cost);
        iterations += 1;
    }
}

struct Diagnostics {
    residual: f64,
    iterations: usize,
    cost_history: Vec<f64>,
    residual_history: Vec<f64>,
    regularization: f64,
}

fn finish(
    problem: &OcProblem,
    theta: &ThetaParams,
    xs: Vec<DVector<f64>>,
    us: Vec<DVector<f64>>,
    lambdas: Vec<DVector<f64>>,
    diag: Diagnostics,
) -> Result<Trajectory> {
    let states = SampledPath::new(problem.grid, xs)?;
    let controls = SampledPath::new(problem.grid, node_controls(&us))?;
    let costate = SampledPath::new(problem.grid, lambdas)?;
    let objective = objective(problem, theta, &states, &controls);
    Ok(Trajectory {
        theta: theta.clone(),
        states,
        controls,
        costate,
        objective,
        pmp_residual: diag.residual,
        iterations: diag.iterations,
        cost_history: diag.cost_history,
        residual_history: diag.residual_history,
        regularization: diag.regularization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fdcheck::{fd_gradient, fd_jacobian};
    use crate::models::{ArmDynamics, WeightedFeatureCost};

    fn arm_problem(steps: usize) -> OcProblem {
        OcProblem::new(
            Arc::new(ArmDynamics::default()),
            Arc::new(WeightedFeatureCost::arm_default()),
            DVector::from_vec(vec![-std::f64::consts::FRAC_PI_2, 3.0 * std::f64::consts::FRAC_PI_4, -5.0, 3.0]),
            1.0,
            steps,
        )
        .unwrap()
    }

    #[test]
    fn step_derivatives_match_finite_differences() {
        let problem = arm_problem(20);
        let theta = ThetaParams::new(vec![3.0, 1.0, 2.0, 0.5], vec![1.3, 0.4]);
        let p = theta.p_vector();
        let step = Step::new(&problem, &theta, &p, 3);
        let x = DVector::from_vec(vec![0.3, -0.4, 1.0, 2.0]);
        let u = DVector::from_vec(vec![0.5, -1.0]);
        let lambda = DVector::from_vec(vec![0.7, -0.2, 1.5, 0.3]);
        let d = step.derivs(&x, &u, &lambda, true);
        let ax = fd_jacobian(|y| step.eval(y, &u).0, &x, 1e-6);
        let bu = fd_jacobian(|w| step.eval(&x, w).0, &u, 1e-6);
        assert!((&d.a - ax).amax() < 1e-7);
        assert!((&d.b - bu).amax() < 1e-7);

        let z = DVector::from_iterator(6, x.iter().chain(u.iter()).copied());
        let s = |z: &DVector<f64>| {
            let (next, cost) = step.eval(&z.rows(0, 4).into_owned(), &z.rows(4, 2).into_owned());
            cost + lambda.dot(&next)
        };
        let lx = fd_gradient(|y| step.eval(y, &u).1, &x, 1e-6);
        let lu = fd_gradient(|w| step.eval(&x, w).1, &u, 1e-6);
        assert!((&d.l_x - lx).amax() < 1e-7);
        assert!((&d.l_u - lu).amax() < 1e-7);
        let grad = fd_gradient(s, &z, 1e-6);
        assert!((d.s_x - grad.rows(0, 4)).amax() < 1e-7);
        assert!((d.s_u - grad.rows(4, 2)).amax() < 1e-7);
        let sgrad = |z: &DVector<f64>| {
            let dz = step.derivs(&z.rows(0, 4).into_owned(), &z.rows(4, 2).into_owned(), &lambda, false);
            DVector::from_iterator(6, dz.s_x.iter().chain(dz.s_u.iter()).copied())
        };
        let hess = fd_jacobian(sgrad, &z, 1e-6);
        assert!((d.hess.unwrap() - hess).amax() < 1e-6);
    }

    #[test]
    fn arm_solve_converges() {
        let problem = arm_problem(200);
        let theta = ThetaParams::new(vec![3.0, 3.0, 3.0, 3.0], vec![5.0]);
        let traj = solve_oc(&problem, &theta, &SolverConfig::default(), None).unwrap();
        assert!(traj.pmp_residual <= 1e-6, "residual {}", traj.pmp_residual);
        assert!(traj.cost_history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs())));
        let hx = problem.cost.terminal_derivs(traj.states.last(), &theta.p_vector()).h_x;
        assert_eq!(traj.costate.last(), &hx);
        let again = solve_oc(&problem, &theta, &SolverConfig::default(), Some(&traj)).unwrap();
        assert_eq!(again.iterations, 0);
    }
}
