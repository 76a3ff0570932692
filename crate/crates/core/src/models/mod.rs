//! Parametric model contracts and the concrete instances shipped with the
//! crate.
//!
//! Every model supplies analytic first and second derivatives. The
//! differential PMP needs exact Hessians of the Hamiltonian, so nothing here
//! falls back to numerical differentiation; [`fdcheck`] exists to validate the
//! hand-derived formulas in tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub mod arm;
pub mod fdcheck;
pub mod linear;
pub mod neural;
pub mod quadrotor;
pub mod task;
pub mod warp;

pub use arm::{ArmDynamics, WeightedFeatureCost};
pub use linear::{LinearDynamics, QuadraticCost};
pub use neural::NeuralCost;
pub use quadrotor::{
    attitude_error, DistToObstacleCost, QuadDynamics, QuadGoalCost, QuadPolynomialCost,
};
pub use task::{StateSelector, TaskMap};
pub use warp::{warp_eval, warp_is_admissible, warp_velocity, warp_velocity_grad, WARP_VELOCITY_FLOOR};

/// Unknowns `θ = [p; β]`: cost parameters followed by warp coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ThetaParams {
    pub fn new(p: Vec<f64>, beta: Vec<f64>) -> Self {
        Self { p, beta }
    }

    pub fn r(&self) -> usize {
        self.p.len()
    }

    pub fn s(&self) -> usize {
        self.beta.len()
    }

    pub fn dim(&self) -> usize {
        self.p.len() + self.beta.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.p.iter().chain(&self.beta).copied())
    }

    /// Splits a flat `[p; β]` vector with `r` cost parameters.
    pub fn from_slice(values: &[f64], r: usize) -> Self {
        Self {
            p: values[..r].to_vec(),
            beta: values[r..].to_vec(),
        }
    }

    pub fn p_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.p)
    }
}

/// Second derivatives of `λᵀ f(x, u)` for a fixed costate `λ`.
#[derive(Clone, Debug)]
pub struct ContractedHessians {
    pub xx: DMatrix<f64>,
    pub xu: DMatrix<f64>,
    pub uu: DMatrix<f64>,
}

/// Continuous dynamics `ẋ = f(x, u)`.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `(∂f/∂x, ∂f/∂u)`, shapes `n×n` and `n×m`.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);
    /// Hessian blocks of `Σ_j λ_j f_j(x, u)`.
    fn contracted_hessians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> ContractedHessians;
    /// Re-projects a state onto the model's manifold after an integration step.
    fn normalize_state(&self, _x: &mut DVector<f64>) {}
}

/// First and second partials of the running cost `c(x, u, p)`.
#[derive(Clone, Debug)]
pub struct RunningDerivs {
    pub c_x: DVector<f64>,
    pub c_u: DVector<f64>,
    pub c_p: DVector<f64>,
    pub c_xx: DMatrix<f64>,
    pub c_xu: DMatrix<f64>,
    pub c_uu: DMatrix<f64>,
    pub c_xp: DMatrix<f64>,
    pub c_up: DMatrix<f64>,
}

/// First and second partials of the final cost `h(x, p)`.
#[derive(Clone, Debug)]
pub struct TerminalDerivs {
    pub h_x: DVector<f64>,
    pub h_p: DVector<f64>,
    pub h_xx: DMatrix<f64>,
    pub h_xp: DMatrix<f64>,
}

/// Parameterized running and final costs.
pub trait CostModel: Send + Sync {
    fn param_dim(&self) -> usize;
    fn running(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> f64;
    fn running_derivs(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> RunningDerivs;
    /// `∂²c/∂p²`. Not needed by the solver or the Riccati pass.
    fn running_param_hessian(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64>;
    fn terminal(&self, x: &DVector<f64>, p: &DVector<f64>) -> f64;
    fn terminal_derivs(&self, x: &DVector<f64>, p: &DVector<f64>) -> TerminalDerivs;
    fn terminal_param_hessian(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64>;
}

/// Every first and second partial of `c` over `{x, u, p}` and of `h` over
/// `{x, p}`.
#[derive(Clone, Debug)]
pub struct CostDerivatives {
    pub running: RunningDerivs,
    pub c_pp: DMatrix<f64>,
    pub terminal: TerminalDerivs,
    pub h_pp: DMatrix<f64>,
}

pub fn cost_derivatives(
    cost: &dyn CostModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    p: &DVector<f64>,
) -> CostDerivatives {
    CostDerivatives {
        running: cost.running_derivs(x, u, p),
        c_pp: cost.running_param_hessian(x, u, p),
        terminal: cost.terminal_derivs(x, p),
        h_pp: cost.terminal_param_hessian(x, p),
    }
}

/// Velocity-mapped dynamics of the time-warped system, `v_β(τ) f(x, u)`.
pub fn warped_dynamics(
    dynamics: &dyn DynamicsModel,
    beta: &[f64],
    tau: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    dynamics.eval(x, u) * warp_velocity(beta, tau)
}

/// Symmetric Hessian of a scalar quadratic form given only evaluations,
/// recovered exactly by polarization at the origin.
pub(crate) fn quadratic_form_hessian(dim: usize, form: impl Fn(&DVector<f64>) -> f64) -> DMatrix<f64> {
    let mut hess = DMatrix::zeros(dim, dim);
    let unit = |i: usize| {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        e
    };
    for i in 0..dim {
        let ei = unit(i);
        hess[(i, i)] = 2.0 * form(&ei);
        for j in 0..i {
            let ej = unit(j);
            let v = form(&(&ei + &ej)) - form(&ei) - form(&ej);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}
