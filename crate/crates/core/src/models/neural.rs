//! One-hidden-layer feature cost `φ = tanh(W x + b)`, `c = φᵀφ + w_u‖u‖²`,
//! `h = φᵀφ`.
//!
//! Parameter layout: `W` row-major (`width × n`), then `b`.

use nalgebra::{DMatrix, DVector};

use super::{CostModel, RunningDerivs, TerminalDerivs};

#[derive(Clone, Debug)]
pub struct NeuralCost {
    pub input_dim: usize,
    pub width: usize,
    pub control_weight: f64,
}

struct Layer {
    w: DMatrix<f64>,
    phi: DVector<f64>,
    // d(φ_k²)/da_k and d²(φ_k²)/da_k²
    g1: DVector<f64>,
    g2: DVector<f64>,
}

impl NeuralCost {
    pub fn new(input_dim: usize, width: usize) -> Self {
        Self { input_dim, width, control_weight: 0.5 }
    }

    fn layer(&self, x: &DVector<f64>, p: &DVector<f64>) -> Layer {
        let (h, n) = (self.width, self.input_dim);
        let w = DMatrix::from_row_slice(h, n, &p.as_slice()[..h * n]);
        let b = p.rows(h * n, h);
        let phi = (&w * x + b).map(f64::tanh);
        let s = phi.map(|v| 1.0 - v * v);
        let g1 = phi.component_mul(&s) * 2.0;
        let g2 = DVector::from_fn(h, |k, _| 2.0 * s[k] * (s[k] - 2.0 * phi[k] * phi[k]));
        Layer { w, phi, g1, g2 }
    }

    fn state_block(&self, x: &DVector<f64>, l: &Layer) -> (DVector<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (h, n) = (self.width, self.input_dim);
        let r = h * n + h;
        let gx = l.w.transpose() * &l.g1;
        let gxx = l.w.transpose() * DMatrix::from_diagonal(&l.g2) * &l.w;
        let mut gp = DVector::zeros(r);
        let mut gxp = DMatrix::zeros(n, r);
        for k in 0..h {
            for j in 0..n {
                let idx = k * n + j;
                gp[idx] = l.g1[k] * x[j];
                for i in 0..n {
                    gxp[(i, idx)] = l.w[(k, i)] * l.g2[k] * x[j] + if i == j { l.g1[k] } else { 0.0 };
                }
            }
            gp[h * n + k] = l.g1[k];
            for i in 0..n {
                gxp[(i, h * n + k)] = l.w[(k, i)] * l.g2[k];
            }
        }
        (gx, gp, gxx, gxp)
    }

    fn param_hessian(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        let (h, n) = (self.width, self.input_dim);
        let l = self.layer(x, p);
        let r = h * n + h;
        let mut out = DMatrix::zeros(r, r);
        // Each hidden unit contributes g''_k z zᵀ with z = ∂a_k/∂p = [x; 1].
        for k in 0..h {
            let idx: Vec<usize> = (0..n).map(|j| k * n + j).chain(std::iter::once(h * n + k)).collect();
            let z: Vec<f64> = x.iter().copied().chain(std::iter::once(1.0)).collect();
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &ib) in idx.iter().enumerate() {
                    out[(ia, ib)] = l.g2[k] * z[a] * z[b];
                }
            }
        }
        out
    }
}

impl CostModel for NeuralCost {
    fn param_dim(&self) -> usize {
        self.width * self.input_dim + self.width
    }

    fn running(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> f64 {
        self.layer(x, p).phi.norm_squared() + self.control_weight * u.norm_squared()
    }

    fn running_derivs(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> RunningDerivs {
        let l = self.layer(x, p);
        let (c_x, c_p, c_xx, c_xp) = self.state_block(x, &l);
        let (n, m, r) = (self.input_dim, u.len(), self.param_dim());
        RunningDerivs {
            c_x,
            c_u: u * (2.0 * self.control_weight),
            c_p,
            c_xx,
            c_xu: DMatrix::zeros(n, m),
            c_uu: DMatrix::identity(m, m) * (2.0 * self.control_weight),
            c_xp,
            c_up: DMatrix::zeros(m, r),
        }
    }

    fn running_param_hessian(&self, x: &DVector<f64>, _u: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        self.param_hessian(x, p)
    }

    fn terminal(&self, x: &DVector<f64>, p: &DVector<f64>) -> f64 {
        self.layer(x, p).phi.norm_squared()
    }

    fn terminal_derivs(&self, x: &DVector<f64>, p: &DVector<f64>) -> TerminalDerivs {
        let l = self.layer(x, p);
        let (h_x, h_p, h_xx, h_xp) = self.state_block(x, &l);
        TerminalDerivs { h_x, h_p, h_xx, h_xp }
    }

    fn terminal_param_hessian(&self, x: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        self.param_hessian(x, p)
    }
}
