//! Linear time-invariant dynamics and quadratic costs, the setting where the
//! optimal control problem has a closed-form Riccati solution.

use nalgebra::{DMatrix, DVector};

use super::{ContractedHessians, CostModel, DynamicsModel, RunningDerivs, TerminalDerivs};

#[derive(Clone, Debug)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        assert_eq!(a.nrows(), b.nrows());
        Self { a, b }
    }
}

impl DynamicsModel for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }

    fn contracted_hessians(&self, _x: &DVector<f64>, _u: &DVector<f64>, _l: &DVector<f64>) -> ContractedHessians {
        let (n, m) = (self.state_dim(), self.control_dim());
        ContractedHessians {
            xx: DMatrix::zeros(n, n),
            xu: DMatrix::zeros(n, m),
            uu: DMatrix::zeros(m, m),
        }
    }
}

/// `c = ½ s (x − x_r)ᵀ Q (x − x_r) + ½ uᵀ R u`, `h = ½ (x − x_r)ᵀ Q_f (x − x_r)`.
///
/// With `scale_param` set, `s = p[0]` is the single learnable parameter;
/// otherwise `s = 1` and the cost has no parameters.
#[derive(Clone, Debug)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub reference: DVector<f64>,
    pub scale_param: bool,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>) -> Self {
        let n = q.nrows();
        Self { q, r, qf, reference: DVector::zeros(n), scale_param: false }
    }

    pub fn with_scale_param(mut self) -> Self {
        self.scale_param = true;
        self
    }

    pub fn with_reference(mut self, reference: DVector<f64>) -> Self {
        self.reference = reference;
        self
    }

    fn scale(&self, p: &DVector<f64>) -> f64 {
        if self.scale_param {
            p[0]
        } else {
            1.0
        }
    }
}

impl CostModel for QuadraticCost {
    fn param_dim(&self) -> usize {
        usize::from(self.scale_param)
    }

    fn running(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> f64 {
        let d = x - &self.reference;
        0.5 * self.scale(p) * d.dot(&(&self.q * &d)) + 0.5 * u.dot(&(&self.r * u))
    }

    fn running_derivs(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> RunningDerivs {
        let (n, m, k) = (x.len(), u.len(), self.param_dim());
        let d = x - &self.reference;
        let qd = &self.q * &d;
        let s = self.scale(p);
        let (c_p, c_xp) = if self.scale_param {
            (DVector::from_element(1, 0.5 * d.dot(&qd)), DMatrix::from_column_slice(n, 1, qd.as_slice()))
        } else {
            (DVector::zeros(0), DMatrix::zeros(n, 0))
        };
        RunningDerivs {
            c_x: &qd * s,
            c_u: &self.r * u,
            c_p,
            c_xx: &self.q * s,
            c_xu: DMatrix::zeros(n, m),
            c_uu: self.r.clone(),
            c_xp,
            c_up: DMatrix::zeros(m, k),
        }
    }

    fn running_param_hessian(&self, _x: &DVector<f64>, _u: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        let k = self.param_dim();
        DMatrix::zeros(k, k)
    }

    fn terminal(&self, x: &DVector<f64>, _p: &DVector<f64>) -> f64 {
        let d = x - &self.reference;
        0.5 * d.dot(&(&self.qf * &d))
    }

    fn terminal_derivs(&self, x: &DVector<f64>, _p: &DVector<f64>) -> TerminalDerivs {
        let k = self.param_dim();
        let d = x - &self.reference;
        TerminalDerivs {
            h_x: &self.qf * d,
            h_p: DVector::zeros(k),
            h_xx: self.qf.clone(),
            h_xp: DMatrix::zeros(x.len(), k),
        }
    }

    fn terminal_param_hessian(&self, _x: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        let k = self.param_dim();
        DMatrix::zeros(k, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fdcheck::{check_cost, check_dynamics};

    #[test]
    fn derivatives() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sys = LinearDynamics::new(a, b);
        let x = DVector::from_vec(vec![0.4, -0.9]);
        let u = DVector::from_vec(vec![1.3]);
        assert!(check_dynamics(&sys, &x, &u, &DVector::from_vec(vec![1.0, 2.0])) < 1e-8);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let cost = QuadraticCost::new(q.clone(), DMatrix::identity(1, 1), q)
            .with_scale_param()
            .with_reference(DVector::from_vec(vec![1.0, 0.0]));
        assert!(check_cost(&cost, &x, &u, &DVector::from_vec(vec![1.7])) < 1e-6);
    }
}
