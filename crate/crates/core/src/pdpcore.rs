//! Trajectory sensitivities `∂x/∂θ`, `∂u/∂θ` of a solved problem.
//!
//! Differentiating the first-order conditions with respect to `θ` gives a
//! linear two-point boundary value problem. Eliminating `∂u/∂θ` through the
//! stationarity condition and writing `∂λ/∂θ = P ∂x/∂θ + W` decouples it into
//! a backward Riccati pass for `(P, W)` and a forward pass for `∂x/∂θ`, both
//! linear in the number of grid steps.
//!
//! Controls are piecewise constant, so coefficients are sampled per grid
//! interval at its left end, midpoint and right end, all with that interval's
//! control. RK4 sees them exactly where it evaluates.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::models::{warp_velocity, warp_velocity_grad, ThetaParams};
use crate::numerics::{half_step_index, hermite_midpoint, rk4_step_reverse, TimeGrid};
use crate::ocsolver::{OcProblem, Trajectory};
use crate::{Error, Result};

/// Threshold on the smallest eigenvalue magnitude of `H_uu`.
pub const HUU_SINGULAR_TOL: f64 = 1e-9;
/// Frobenius norm of `P`, `W` or `∂x/∂θ` beyond which the sensitivity pass
/// is abandoned.
pub const RICCATI_BLOWUP_NORM: f64 = 1e12;
/// Target for `h·ρ` per RK4 substep, with `ρ` the spectral radius of the
/// Hamiltonian matrix `[A −R; −Q −Aᵀ]`.
pub const RICCATI_STEP_SCALE: f64 = 1.0;
/// Cap on substeps per grid interval.
pub const RICCATI_MAX_SUBSTEPS: usize = 1000;

/// Linearization of the warped Hamiltonian at one sample.
#[derive(Clone, Debug)]
pub struct CoeffPoint {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub hxx: DMatrix<f64>,
    pub hxu: DMatrix<f64>,
    pub hxe: DMatrix<f64>,
    pub huu: DMatrix<f64>,
    pub hue: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct PmpCoefficients {
    pub grid: TimeGrid,
    /// `3K` samples; interval `k` owns indices `3k..3k + 3`.
    pub points: Vec<CoeffPoint>,
    pub terminal_hxx: DMatrix<f64>,
    pub terminal_hxe: DMatrix<f64>,
}

/// Sample index of node `k`: the right-continuous value, except at the final
/// node.
fn node_index(k: usize, steps: usize) -> usize {
    if k < steps {
        3 * k
    } else {
        3 * steps - 1
    }
}

impl PmpCoefficients {
    pub fn at_node(&self, k: usize) -> &CoeffPoint {
        &self.points[node_index(k, self.grid.steps())]
    }

    pub fn param_dim(&self) -> usize {
        self.terminal_hxe.ncols()
    }
}

/// Coefficients of the differential PMP along a solved trajectory.
pub fn assemble_coefficients(problem: &OcProblem, theta: &ThetaParams, traj: &Trajectory) -> Result<PmpCoefficients> {
    let grid = problem.grid;
    if traj.grid().steps() != grid.steps() {
        return Err(Error::ContractViolation("trajectory lives on a different grid".into()));
    }
    let (n, m) = (problem.state_dim(), problem.control_dim());
    let (r, s) = (theta.r(), theta.s());
    let p = theta.p_vector();
    let h = grid.step();
    let xs = traj.states.values();
    let ls = traj.costate.values();
    let us = traj.controls.values();

    let point = |tau: f64, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>| {
        let v = warp_velocity(&theta.beta, tau);
        let (fx, fu) = problem.dynamics.jacobians(x, u);
        let hess = problem.dynamics.contracted_hessians(x, u, lambda);
        let d = problem.cost.running_derivs(x, u, &p);
        let dv = warp_velocity_grad(s, tau);
        let f = problem.dynamics.eval(x, u);
        let hx_raw = &d.c_x + fx.transpose() * lambda;
        let hu_raw = &d.c_u + fu.transpose() * lambda;
        let mut e = DMatrix::zeros(n, r + s);
        let mut hxe = DMatrix::zeros(n, r + s);
        let mut hue = DMatrix::zeros(m, r + s);
        hxe.columns_mut(0, r).copy_from(&(&d.c_xp * v));
        hue.columns_mut(0, r).copy_from(&(&d.c_up * v));
        for (i, dvi) in dv.iter().enumerate() {
            e.set_column(r + i, &(&f * *dvi));
            hxe.set_column(r + i, &(&hx_raw * *dvi));
            hue.set_column(r + i, &(&hu_raw * *dvi));
        }
        CoeffPoint {
            f: fx * v,
            g: fu * v,
            e,
            hxx: (d.c_xx + hess.xx) * v,
            hxu: (d.c_xu + hess.xu) * v,
            hxe,
            huu: (d.c_uu + hess.uu) * v,
            hue,
        }
    };
    let x_rate = |tau: f64, x: &DVector<f64>, u: &DVector<f64>| problem.dynamics.eval(x, u) * warp_velocity(&theta.beta, tau);
    let l_rate = |tau: f64, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>| {
        let (fx, _) = problem.dynamics.jacobians(x, u);
        let cx = problem.cost.running_derivs(x, u, &p).c_x;
        -(cx + fx.transpose() * lambda) * warp_velocity(&theta.beta, tau)
    };

    let mut points = Vec::with_capacity(3 * grid.steps());
    for k in 0..grid.steps() {
        let (t0, t1) = (grid.node(k), grid.node(k + 1));
        let u = &us[k];
        let x_mid = hermite_midpoint(&xs[k], &xs[k + 1], &x_rate(t0, &xs[k], u), &x_rate(t1, &xs[k + 1], u), h);
        let l_mid = hermite_midpoint(
            &ls[k],
            &ls[k + 1],
            &l_rate(t0, &xs[k], u, &ls[k]),
            &l_rate(t1, &xs[k + 1], u, &ls[k + 1]),
            h,
        );
        points.push(point(t0, &xs[k], u, &ls[k]));
        points.push(point(0.5 * (t0 + t1), &x_mid, u, &l_mid));
        points.push(point(t1, &xs[k + 1], u, &ls[k + 1]));
    }
    let t = problem.cost.terminal_derivs(traj.states.last(), &p);
    let mut terminal_hxe = DMatrix::zeros(n, r + s);
    terminal_hxe.columns_mut(0, r).copy_from(&t.h_xp);
    Ok(PmpCoefficients { grid, points, terminal_hxx: t.h_xx, terminal_hxe })
}

/// `H_uu` eliminated: the Riccati-form coefficients at one sample.
#[derive(Clone, Debug)]
struct Reduced {
    a: DMatrix<f64>,
    r: DMatrix<f64>,
    m: DMatrix<f64>,
    q: DMatrix<f64>,
    n: DMatrix<f64>,
    huu_inv: DMatrix<f64>,
    hux: DMatrix<f64>,
    gt: DMatrix<f64>,
    hue: DMatrix<f64>,
}

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn reduce(c: &CoeffPoint, node: usize) -> Result<Reduced> {
    let mats = [&c.f, &c.g, &c.e, &c.hxx, &c.hxu, &c.hxe, &c.huu, &c.hue];
    if !mats.iter().all(|m| all_finite(m)) {
        return Err(Error::NonFiniteCoefficient { node });
    }
    let huu_sym = (&c.huu + c.huu.transpose()) * 0.5;
    let sigma_min = SymmetricEigen::new(huu_sym)
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min);
    if sigma_min < HUU_SINGULAR_TOL {
        return Err(Error::HuuSingular { node, sigma_min });
    }
    let huu_inv = c.huu.clone().try_inverse().ok_or(Error::HuuSingular { node, sigma_min })?;
    let hux = c.hxu.transpose();
    let gi = &c.g * &huu_inv;
    let hxu_i = &c.hxu * &huu_inv;
    Ok(Reduced {
        a: &c.f - &gi * &hux,
        r: &gi * c.g.transpose(),
        m: &c.e - &gi * &c.hue,
        q: &c.hxx - &hxu_i * &hux,
        n: &c.hxe - &hxu_i * &c.hue,
        huu_inv,
        hux,
        gt: c.g.transpose(),
        hue: c.hue.clone(),
    })
}

/// `P` and `W` at every node, plus what the forward pass reuses.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub p: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    /// Largest `‖P − Pᵀ‖_max` seen before symmetrization. RK4 does not
    /// preserve the symplectic structure that keeps `Y X⁻¹` symmetric, so this
    /// is small but not zero.
    pub max_asymmetry: f64,
    reduced: Vec<Reduced>,
    // Per step k: state block X_k⁻¹ and offset ξ_k of the backward step map,
    // ∂x_k = X_k ∂x_{k+1} + ξ_k.
    step_xinv: Vec<DMatrix<f64>>,
    step_xi: Vec<DMatrix<f64>>,
}

/// `(-dP/dτ, -dW/dτ)` at sample `j`.
pub fn riccati_rhs_at(coeffs: &PmpCoefficients, j: usize, p: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let red = reduce(&coeffs.points[j], j / 3)?;
    Ok(riccati_rhs(&red, p, w))
}

fn riccati_rhs(red: &Reduced, p: &DMatrix<f64>, w: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let at = red.a.transpose();
    let pr = p * &red.r;
    let dp = &red.q + &at * p + p * &red.a - &pr * p;
    let dw = &at * w + p * &red.m + &red.n - &pr * w;
    (dp, dw)
}

/// `-dZ/dτ` for the linear system behind the Riccati equation,
/// `Z = [X ξ; Y η]` with `d/dτ [X; Y] = [A −R; −Q −Aᵀ][X; Y]` and the
/// `(ξ, η)` block additionally forced by `[M; −N]`.
fn hamiltonian_rhs(red: &Reduced, z: &DMatrix<f64>) -> DMatrix<f64> {
    hamiltonian_rhs_parts(&red.a, &red.r, &red.q, &red.m, &red.n, z)
}

fn hamiltonian_rhs_parts(
    a: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qm: &DMatrix<f64>,
    m: &DMatrix<f64>,
    nm: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let top = z.rows(0, n);
    let bot = z.rows(n, n);
    let mut out = DMatrix::zeros(2 * n, z.ncols());
    out.rows_mut(0, n).copy_from(&(r * &bot - a * &top));
    out.rows_mut(n, n).copy_from(&(qm * &top + a.transpose() * &bot));
    let q = z.ncols() - n;
    let mut top_forced = out.view_mut((0, n), (n, q));
    top_forced -= m;
    let mut bot_forced = out.view_mut((n, n), (n, q));
    bot_forced += nm;
    out
}

fn spectral_radius(red: &Reduced) -> f64 {
    let n = red.a.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&red.a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&red.r));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&red.q));
    h.view_mut((n, n), (n, n)).copy_from(&(-red.a.transpose()));
    // Unbounded Schur iterations can cycle on some matrices; fall back to the
    // row-sum bound, which is never below the spectral radius.
    match Schur::try_new(h.clone(), f64::EPSILON, 500) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max),
        None => h.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max),
    }
}

/// Quadratic Lagrange weights on the nodes 0, 1/2, 1.
fn lagrange3(s: f64) -> [f64; 3] {
    [2.0 * (s - 0.5) * (s - 1.0), -4.0 * s * (s - 1.0), 2.0 * s * (s - 0.5)]
}

fn blend(mats: [&DMatrix<f64>; 3], w: [f64; 3]) -> DMatrix<f64> {
    mats[0] * w[0] + mats[1] * w[1] + mats[2] * w[2]
}

/// Reverse step over one grid interval in `m` substeps, with the three
/// samples of the interval interpolated quadratically in between.
fn substepped(samples: &[Reduced], left: f64, right: f64, z: &DMatrix<f64>, m: usize) -> Option<DMatrix<f64>> {
    let h = right - left;
    let dt = h / m as f64;
    let mut field = |tau: f64, z: &DMatrix<f64>| {
        let w = lagrange3((tau - left) / h);
        let pick = |f: fn(&Reduced) -> &DMatrix<f64>| blend([f(&samples[0]), f(&samples[1]), f(&samples[2])], w);
        hamiltonian_rhs_parts(&pick(|r| &r.a), &pick(|r| &r.r), &pick(|r| &r.q), &pick(|r| &r.m), &pick(|r| &r.n), z)
    };
    let mut z = z.clone();
    for i in 0..m {
        z = rk4_step_reverse(&mut field, right - i as f64 * dt, &z, dt)?;
    }
    Some(z)
}

/// Solves `-dP/dτ = Q + AᵀP + PA − PRP` and `-dW/dτ = AᵀW + PM + N − PRW`
/// backward from `P(T) = H_xx(T)`, `W(T) = H_xe(T)`.
///
/// Each grid step runs RK4 on the equivalent linear system in `Z`, restarted
/// from `X = I, Y = P, ξ = 0, η = W` at the step's right node, and reads off
/// `P = Y X⁻¹`, `W = η − P ξ`. The quadratic form is stiff whenever `R P` is
/// large compared with `1/h` (e.g. light links under a fast warp), while the
/// linear form only sees the square root of that scale. Intervals where even
/// that exceeds [`RICCATI_STEP_SCALE`] are split into substeps.
pub fn backward_riccati(coeffs: &PmpCoefficients) -> Result<RiccatiSolution> {
    let grid = coeffs.grid;
    let h = grid.step();
    let reduced = coeffs
        .points
        .iter()
        .enumerate()
        .map(|(j, c)| reduce(c, j / 3))
        .collect::<Result<Vec<_>>>()?;
    let n = coeffs.terminal_hxx.nrows();
    let q = coeffs.param_dim();
    let steps = grid.steps();
    let mut p = vec![DMatrix::zeros(n, n); steps + 1];
    let mut w = vec![DMatrix::zeros(n, q); steps + 1];
    let mut step_xinv = vec![DMatrix::zeros(n, n); steps];
    let mut step_xi = vec![DMatrix::zeros(n, q); steps];
    p[steps] = coeffs.terminal_hxx.clone();
    w[steps] = coeffs.terminal_hxe.clone();
    let mut max_asymmetry = 0.0f64;
    for k in (0..steps).rev() {
        let samples = &reduced[3 * k..3 * k + 3];
        let rho = samples.iter().map(spectral_radius).fold(0.0, f64::max);
        let substeps = ((h * rho / RICCATI_STEP_SCALE).ceil() as usize).clamp(1, RICCATI_MAX_SUBSTEPS);
        let mut z = DMatrix::zeros(2 * n, n + q);
        z.view_mut((0, 0), (n, n)).fill_with_identity();
        z.view_mut((n, 0), (n, n)).copy_from(&p[k + 1]);
        z.view_mut((n, n), (n, q)).copy_from(&w[k + 1]);
        let blowup = |norm: f64| Error::RiccatiBlowup { node: k, norm };
        let z = if substeps == 1 {
            // Half-step index 2k + j maps to sample 3k + j.
            let mut field = |tau: f64, z: &DMatrix<f64>| hamiltonian_rhs(&reduced[k + half_step_index(&grid, tau)], z);
            rk4_step_reverse(&mut field, grid.node(k + 1), &z, h)
        } else {
            substepped(samples, grid.node(k), grid.node(k + 1), &z, substeps)
        };
        let z = z.ok_or_else(|| blowup(f64::INFINITY))?;
        let x = z.view((0, 0), (n, n)).into_owned();
        let xinv = x.try_inverse().ok_or_else(|| blowup(f64::INFINITY))?;
        let pk = z.view((n, 0), (n, n)) * &xinv;
        max_asymmetry = max_asymmetry.max((&pk - pk.transpose()).amax());
        let pk = (&pk + pk.transpose()) * 0.5;
        let norm = pk.norm();
        if !(norm <= RICCATI_BLOWUP_NORM) {
            return Err(blowup(norm));
        }
        let xi = z.view((0, n), (n, q)).into_owned();
        let wk = z.view((n, n), (n, q)) - &pk * &xi;
        let wnorm = wk.norm();
        if !(wnorm <= RICCATI_BLOWUP_NORM) {
            return Err(blowup(wnorm));
        }
        w[k] = wk;
        p[k] = pk;
        step_xinv[k] = xinv;
        step_xi[k] = xi;
    }
    Ok(RiccatiSolution { p, w, max_asymmetry, reduced, step_xinv, step_xi })
}

/// Sensitivities at every node; columns index `θ`.
#[derive(Clone, Debug)]
pub struct TrajectoryGradient {
    pub grid: TimeGrid,
    pub dx: Vec<DMatrix<f64>>,
    pub du: Vec<DMatrix<f64>>,
    pub dlambda: Vec<DMatrix<f64>>,
}

impl TrajectoryGradient {
    fn lerp(&self, values: &[DMatrix<f64>], tau: f64) -> Result<DMatrix<f64>> {
        let (k, frac) = self.grid.locate(tau)?;
        if frac == 0.0 || k + 1 >= values.len() {
            return Ok(values[k].clone());
        }
        Ok(&values[k] * (1.0 - frac) + &values[k + 1] * frac)
    }

    /// `∂x/∂θ` at `tau`, linearly interpolated between nodes.
    pub fn dx_at(&self, tau: f64) -> Result<DMatrix<f64>> {
        self.lerp(&self.dx, tau)
    }

    /// `∂u/∂θ` at `tau`, held over each interval like the controls.
    pub fn du_at(&self, tau: f64) -> Result<DMatrix<f64>> {
        let (k, _) = self.grid.locate(tau)?;
        Ok(self.du[k].clone())
    }
}

/// Propagates `∂x/∂θ` from `∂x/∂θ(0) = 0` under `d(∂x)/dτ = (A − RP) ∂x +
/// (M − RW)` and recovers `∂u = −H_uu⁻¹ (H_ux ∂x + Gᵀ(P ∂x + W) + H_ue)`.
///
/// The step from node k to k+1 inverts the backward step map computed by
/// [`backward_riccati`], so forward and backward passes describe the same
/// discrete two-point boundary value problem.
pub fn forward_gradient(coeffs: &PmpCoefficients, riccati: &RiccatiSolution) -> Result<TrajectoryGradient> {
    let grid = coeffs.grid;
    let n = coeffs.terminal_hxx.nrows();
    let q = coeffs.param_dim();
    let mut dx = Vec::with_capacity(grid.len());
    dx.push(DMatrix::zeros(n, q));
    for k in 0..grid.steps() {
        let next = &riccati.step_xinv[k] * (&dx[k] - &riccati.step_xi[k]);
        if !(next.norm() <= RICCATI_BLOWUP_NORM) {
            return Err(Error::IntegrationDiverged { node: k + 1 });
        }
        dx.push(next);
    }
    let red = &riccati.reduced;
    let mut du = Vec::with_capacity(dx.len());
    let mut dlambda = Vec::with_capacity(dx.len());
    for (k, dxk) in dx.iter().enumerate() {
        let c = &red[node_index(k, grid.steps())];
        let dl = &riccati.p[k] * dxk + &riccati.w[k];
        du.push(-(&c.huu_inv * (&c.hux * dxk + &c.gt * &dl + &c.hue)));
        dlambda.push(dl);
    }
    Ok(TrajectoryGradient { grid, dx, du, dlambda })
}

/// Full sensitivity pass for a solved trajectory.
pub fn trajectory_gradient(problem: &OcProblem, theta: &ThetaParams, traj: &Trajectory) -> Result<TrajectoryGradient> {
    let coeffs = assemble_coefficients(problem, theta, traj)?;
    let riccati = backward_riccati(&coeffs)?;
    forward_gradient(&coeffs, &riccati)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::models::fdcheck::{fd_jacobian, mixed_rel_err};
    use crate::models::{
        ArmDynamics, CostModel, LinearDynamics, QuadraticCost, RunningDerivs, TerminalDerivs, WeightedFeatureCost,
    };
    use crate::ocsolver::{solve_oc, SolverConfig};

    fn arm_x0() -> DVector<f64> {
        DVector::from_vec(vec![-std::f64::consts::FRAC_PI_2, 3.0 * std::f64::consts::FRAC_PI_4, -5.0, 3.0])
    }

    fn arm_problem(steps: usize) -> OcProblem {
        OcProblem::new(Arc::new(ArmDynamics::default()), Arc::new(WeightedFeatureCost::arm_default()), arm_x0(), 1.0, steps)
            .unwrap()
    }

    fn tight() -> SolverConfig {
        SolverConfig { tol: 1e-11, ..SolverConfig::default() }
    }

    fn double_integrator(cost: QuadraticCost) -> OcProblem {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        OcProblem::new(Arc::new(LinearDynamics::new(a, b)), Arc::new(cost), DVector::from_vec(vec![1.0, 0.0]), 1.0, 200)
            .unwrap()
    }

    fn lqr_cost() -> QuadraticCost {
        QuadraticCost::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])),
            DMatrix::from_element(1, 1, 0.2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0])),
        )
    }

    /// Central differences of the solved states with respect to each θ entry.
    fn fd_states(problem: &OcProblem, theta: &ThetaParams, base: &Trajectory, eps: f64) -> Vec<DMatrix<f64>> {
        let q = theta.dim();
        let n = problem.state_dim();
        let mut out = vec![DMatrix::zeros(n, q); problem.grid.len()];
        let v = theta.to_vector();
        for i in 0..q {
            let mut plus = v.clone();
            plus[i] += eps;
            let mut minus = v.clone();
            minus[i] -= eps;
            let tp = solve_oc(problem, &ThetaParams::from_slice(plus.as_slice(), theta.r()), &tight(), Some(base)).unwrap();
            let tm = solve_oc(problem, &ThetaParams::from_slice(minus.as_slice(), theta.r()), &tight(), Some(base)).unwrap();
            for k in 0..problem.grid.len() {
                out[k].set_column(i, &((tp.states.at_node(k) - tm.states.at_node(k)) / (2.0 * eps)));
            }
        }
        out
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let problem = arm_problem(200);
        let theta = ThetaParams::new(vec![1.0, 2.0, 0.5, 1.5], vec![0.6, 0.4]);
        let traj = solve_oc(&problem, &theta, &tight(), None).unwrap();
        let grad = trajectory_gradient(&problem, &theta, &traj).unwrap();
        let fd = fd_states(&problem, &theta, &traj, 1e-5);
        for k in [20, 50, 100, 150, 199, 200] {
            let err = (&grad.dx[k] - &fd[k]).norm() / fd[k].norm();
            assert!(err < 1e-3, "node {k}: relative error {err:.3e}");
        }
    }

    #[test]
    fn boundary_values_and_symmetry() {
        let problem = arm_problem(200);
        let theta = ThetaParams::new(vec![3.0, 3.0, 3.0, 3.0], vec![5.0]);
        let traj = solve_oc(&problem, &theta, &SolverConfig::default(), None).unwrap();
        let coeffs = assemble_coefficients(&problem, &theta, &traj).unwrap();
        let ric = backward_riccati(&coeffs).unwrap();
        assert_eq!(ric.p[200], coeffs.terminal_hxx);
        assert_eq!(ric.w[200], coeffs.terminal_hxe);
        for pk in &ric.p {
            assert!((pk - pk.transpose()).amax() <= 1e-8);
        }
        let scale = ric.p.iter().map(|pk| pk.amax()).fold(0.0, f64::max);
        assert!(ric.max_asymmetry <= 1e-5 * scale, "asymmetry {:.3e}", ric.max_asymmetry);
        for c in &coeffs.points {
            assert_eq!(c.hxx, c.hxx.transpose());
            assert_eq!(c.huu, c.huu.transpose());
        }
        let grad = forward_gradient(&coeffs, &ric).unwrap();
        assert!(grad.dx[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn substitution_satisfies_stationarity() {
        let problem = arm_problem(200);
        let theta = ThetaParams::new(vec![1.0, 2.0, 0.5, 1.5], vec![0.6, 0.4]);
        let traj = solve_oc(&problem, &theta, &SolverConfig::default(), None).unwrap();
        let coeffs = assemble_coefficients(&problem, &theta, &traj).unwrap();
        let grad = trajectory_gradient(&problem, &theta, &traj).unwrap();
        for k in 0..problem.grid.len() {
            let c = coeffs.at_node(k);
            let row = c.hxu.transpose() * &grad.dx[k] + &c.huu * &grad.du[k] + c.g.transpose() * &grad.dlambda[k] + &c.hue;
            assert!(row.amax() <= 1e-5, "node {k}: {:.3e}", row.amax());
        }
    }

    #[test]
    fn coefficients_match_hamiltonian_differences() {
        let problem = arm_problem(50);
        let theta = ThetaParams::new(vec![1.0, 2.0, 0.5, 1.5], vec![0.6, 0.4, -0.1]);
        let traj = solve_oc(&problem, &theta, &SolverConfig::default(), None).unwrap();
        let coeffs = assemble_coefficients(&problem, &theta, &traj).unwrap();
        let (n, m) = (4, 2);
        for k in (0..50).step_by(7) {
            let tau = problem.grid.node(k);
            let (x, u, l) = (traj.states.at_node(k), traj.controls.at_node(k), traj.costate.at_node(k));
            let z = DVector::from_iterator(n + m, x.iter().chain(u.iter()).copied());
            // ∂H/∂(x, u) as a function of (x, u) and of θ.
            let h_grad = |z: &DVector<f64>, th: &DVector<f64>| {
                let th = ThetaParams::from_slice(th.as_slice(), 4);
                let (x, u) = (z.rows(0, n).into_owned(), z.rows(n, m).into_owned());
                let v = warp_velocity(&th.beta, tau);
                let (fx, fu) = problem.dynamics.jacobians(&x, &u);
                let d = problem.cost.running_derivs(&x, &u, &th.p_vector());
                let hx = (d.c_x + fx.transpose() * l) * v;
                let hu = (d.c_u + fu.transpose() * l) * v;
                DVector::from_iterator(n + m, hx.iter().chain(hu.iter()).copied())
            };
            let th = theta.to_vector();
            let second = fd_jacobian(|z| h_grad(z, &th), &z, 1e-6);
            let mixed = fd_jacobian(|t| h_grad(&z, t), &th, 1e-6);
            let dyn_rate = |t: &DVector<f64>| {
                let t = ThetaParams::from_slice(t.as_slice(), 4);
                problem.dynamics.eval(x, u) * warp_velocity(&t.beta, tau)
            };
            let e = fd_jacobian(dyn_rate, &th, 1e-6);
            let c = coeffs.at_node(k);
            assert!(mixed_rel_err(&c.hxx, &second.view((0, 0), (n, n)).into_owned()) < 1e-4);
            assert!(mixed_rel_err(&c.hxu, &second.view((0, n), (n, m)).into_owned()) < 1e-4);
            assert!(mixed_rel_err(&c.huu, &second.view((n, n), (m, m)).into_owned()) < 1e-4);
            assert!(mixed_rel_err(&c.hxe, &mixed.rows(0, n).into_owned()) < 1e-4);
            assert!(mixed_rel_err(&c.hue, &mixed.rows(n, m).into_owned()) < 1e-4);
            assert!(mixed_rel_err(&c.e, &e) < 1e-4);
        }
    }

    #[test]
    fn lqr_coefficients_have_closed_form() {
        let problem = double_integrator(lqr_cost());
        let theta = ThetaParams::new(vec![], vec![1.0]);
        let traj = solve_oc(&problem, &theta, &SolverConfig::default(), None).unwrap();
        let coeffs = assemble_coefficients(&problem, &theta, &traj).unwrap();
        for k in [0, 10, 100, 200] {
            let c = coeffs.at_node(k);
            let (x, u) = (traj.states.at_node(k), traj.controls.at_node(k));
            assert_eq!(c.huu, DMatrix::from_element(1, 1, 0.2));
            assert_eq!(c.f, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
            assert_eq!(c.g, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
            assert_eq!(c.e.column(0), problem.dynamics.eval(x, u));
        }
    }

    /// Standard LQR Riccati ODE on a much finer grid.
    fn lqr_riccati_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, cost: &QuadraticCost, horizon: f64, fine: usize) -> Vec<DMatrix<f64>> {
        let rinv = cost.r.clone().try_inverse().unwrap();
        let brb = b * rinv * b.transpose();
        let rhs = |p: &DMatrix<f64>| &cost.q + a.transpose() * p + p * a - p * &brb * p;
        let h = horizon / fine as f64;
        let mut p = cost.qf.clone();
        let mut out = vec![p.clone()];
        for _ in 0..fine {
            let k1 = rhs(&p);
            let k2 = rhs(&(&p + &k1 * (0.5 * h)));
            let k3 = rhs(&(&p + &k2 * (0.5 * h)));
            let k4 = rhs(&(&p + &k3 * h));
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            out.push(p.clone());
        }
        out.reverse();
        out
    }

    #[test]
    fn lqr_riccati_matches_oracle() {
        let cost = lqr_cost();
        let problem = double_integrator(cost.clone());
        let theta = ThetaParams::new(vec![], vec![]);
        let traj = solve_oc(&problem, &theta, &SolverConfig::default(), None).unwrap();
        let coeffs = assemble_coefficients(&problem, &theta, &traj).unwrap();
        let ric = backward_riccati(&coeffs).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let oracle = lqr_riccati_oracle(&a, &b, &cost, 1.0, 20_000);
        for k in 0..=200 {
            let err = (&ric.p[k] - &oracle[100 * k]).amax();
            assert!(err < 1e-5, "node {k}: {err:.3e}");
        }
        assert_eq!(ric.w[0].ncols(), 0);
    }

    #[test]
    fn uncoupled_parameter_has_zero_sensitivity() {
        // Q = 0 makes the scale parameter enter nowhere: M = N = 0, W(T) = 0.
        let cost = QuadraticCost::new(DMatrix::zeros(2, 2), DMatrix::from_element(1, 1, 0.2), DMatrix::identity(2, 2))
            .with_scale_param();
        let problem = double_integrator(cost);
        let theta = ThetaParams::new(vec![1.5], vec![]);
        let traj = solve_oc(&problem, &theta, &SolverConfig::default(), None).unwrap();
        let coeffs = assemble_coefficients(&problem, &theta, &traj).unwrap();
        assert!(coeffs.points.iter().all(|c| c.e.amax() == 0.0 && c.hxe.amax() == 0.0 && c.hue.amax() == 0.0));
        let ric = backward_riccati(&coeffs).unwrap();
        assert!(ric.w.iter().all(|w| w.amax() == 0.0));
        let grad = forward_gradient(&coeffs, &ric).unwrap();
        assert!(grad.dx.iter().chain(grad.du.iter()).all(|d| d.amax() == 0.0));
    }

    /// Arm cost whose last feature weight is split into two parameters.
    struct SplitWeightCost(WeightedFeatureCost);

    impl SplitWeightCost {
        fn inner_p(p: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![p[0], p[1], p[2], p[3] + p[4]])
        }

        fn widen(m: &DMatrix<f64>) -> DMatrix<f64> {
            let mut out = m.clone().insert_column(4, 0.0);
            out.set_column(4, &m.column(3));
            out
        }
    }

    impl CostModel for SplitWeightCost {
        fn param_dim(&self) -> usize {
            5
        }
        fn running(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> f64 {
            self.0.running(x, u, &Self::inner_p(p))
        }
        fn running_derivs(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> RunningDerivs {
            let d = self.0.running_derivs(x, u, &Self::inner_p(p));
            let c_p = d.c_p.clone().insert_row(4, d.c_p[3]);
            RunningDerivs { c_p, c_xp: Self::widen(&d.c_xp), c_up: Self::widen(&d.c_up), ..d }
        }
        fn running_param_hessian(&self, _x: &DVector<f64>, _u: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(5, 5)
        }
        fn terminal(&self, x: &DVector<f64>, p: &DVector<f64>) -> f64 {
            self.0.terminal(x, &Self::inner_p(p))
        }
        fn terminal_derivs(&self, x: &DVector<f64>, p: &DVector<f64>) -> TerminalDerivs {
            let d = self.0.terminal_derivs(x, &Self::inner_p(p));
            let h_p = d.h_p.clone().insert_row(4, d.h_p[3]);
            TerminalDerivs { h_p, h_xp: Self::widen(&d.h_xp), ..d }
        }
        fn terminal_param_hessian(&self, _x: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(5, 5)
        }
    }

    #[test]
    fn duplicated_parameter_gives_identical_columns() {
        let cost = SplitWeightCost(WeightedFeatureCost::arm_default());
        let problem = OcProblem::new(Arc::new(ArmDynamics::default()), Arc::new(cost), arm_x0(), 1.0, 200).unwrap();
        let theta = ThetaParams::new(vec![1.0, 2.0, 0.5, 0.75, 0.75], vec![0.6, 0.4]);
        let traj = solve_oc(&problem, &theta, &SolverConfig::default(), None).unwrap();
        let grad = trajectory_gradient(&problem, &theta, &traj).unwrap();
        for (dx, du) in grad.dx.iter().zip(&grad.du) {
            assert!((dx.column(3) - dx.column(4)).amax() <= 1e-10);
            assert!((du.column(3) - du.column(4)).amax() <= 1e-10);
        }
    }
}
