//! Central-difference checks of the analytic model derivatives.
//!
//! Errors are reported as `max |a − fd| / max(1, |fd|)` over all entries, so
//! small entries are compared absolutely and large ones relatively.

use nalgebra::{DMatrix, DVector};

use super::{CostModel, DynamicsModel};

const STEP: f64 = 1e-6;

/// Central-difference Jacobian of `f` at `z` (rows: outputs).
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, z: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let out_dim = f(z).len();
    let mut jac = DMatrix::zeros(out_dim, z.len());
    let mut zp = z.clone();
    for i in 0..z.len() {
        zp[i] = z[i] + step;
        let fp = f(&zp);
        zp[i] = z[i] - step;
        let fm = f(&zp);
        zp[i] = z[i];
        jac.set_column(i, &((fp - fm) / (2.0 * step)));
    }
    jac
}

pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, z: &DVector<f64>, step: f64) -> DVector<f64> {
    fd_jacobian(|v| DVector::from_element(1, f(v)), z, step).row(0).transpose()
}

pub fn mixed_rel_err(analytic: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    assert_eq!(analytic.shape(), reference.shape(), "shape mismatch in derivative check");
    analytic
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn vec_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    mixed_rel_err(&DMatrix::from_column_slice(a.len(), 1, a.as_slice()), &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))
}

fn split(z: &DVector<f64>, n: usize) -> (DVector<f64>, DVector<f64>) {
    (z.rows(0, n).into_owned(), z.rows(n, z.len() - n).into_owned())
}

fn join(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Worst error of `∂f/∂x`, `∂f/∂u` and the `λ`-contracted Hessian blocks.
pub fn check_dynamics(dynamics: &dyn DynamicsModel, x: &DVector<f64>, u: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let n = x.len();
    let z = join(x, u);
    let fd = fd_jacobian(
        |z| {
            let (x, u) = split(z, n);
            dynamics.eval(&x, &u)
        },
        &z,
        STEP,
    );
    let (fx, fu) = dynamics.jacobians(x, u);
    let mut err = mixed_rel_err(&fx, &fd.columns(0, n).into_owned());
    err = err.max(mixed_rel_err(&fu, &fd.columns(n, u.len()).into_owned()));

    // Hessian of λᵀf by differencing the analytic gradient.
    let hess = fd_jacobian(
        |z| {
            let (x, u) = split(z, n);
            let (fx, fu) = dynamics.jacobians(&x, &u);
            join(&(fx.transpose() * lambda), &(fu.transpose() * lambda))
        },
        &z,
        STEP,
    );
    let h = dynamics.contracted_hessians(x, u, lambda);
    let m = u.len();
    err = err.max(mixed_rel_err(&h.xx, &hess.view((0, 0), (n, n)).into_owned()));
    err = err.max(mixed_rel_err(&h.xu, &hess.view((0, n), (n, m)).into_owned()));
    err.max(mixed_rel_err(&h.uu, &hess.view((n, n), (m, m)).into_owned()))
}

/// Worst error over every first and second partial of `c` and `h`.
pub fn check_cost(cost: &dyn CostModel, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let (n, m, r) = (x.len(), u.len(), p.len());
    let z = join(&join(x, u), p);
    let unpack = |z: &DVector<f64>| {
        (
            z.rows(0, n).into_owned(),
            z.rows(n, m).into_owned(),
            z.rows(n + m, r).into_owned(),
        )
    };
    let grad = fd_gradient(
        |z| {
            let (x, u, p) = unpack(z);
            cost.running(&x, &u, &p)
        },
        &z,
        STEP,
    );
    let d = cost.running_derivs(x, u, p);
    let mut err = vec_err(&join(&join(&d.c_x, &d.c_u), &d.c_p), &grad);

    let hess = fd_jacobian(
        |z| {
            let (x, u, p) = unpack(z);
            let d = cost.running_derivs(&x, &u, &p);
            join(&join(&d.c_x, &d.c_u), &d.c_p)
        },
        &z,
        STEP,
    );
    let block = |r0, c0, rows, cols| hess.view((r0, c0), (rows, cols)).into_owned();
    err = err.max(mixed_rel_err(&d.c_xx, &block(0, 0, n, n)));
    err = err.max(mixed_rel_err(&d.c_xu, &block(0, n, n, m)));
    err = err.max(mixed_rel_err(&d.c_uu, &block(n, n, m, m)));
    err = err.max(mixed_rel_err(&d.c_xp, &block(0, n + m, n, r)));
    err = err.max(mixed_rel_err(&d.c_up, &block(n, n + m, m, r)));
    err = err.max(mixed_rel_err(&cost.running_param_hessian(x, u, p), &block(n + m, n + m, r, r)));

    let zt = join(x, p);
    let tgrad = fd_gradient(
        |z| {
            let (x, p) = split(z, n);
            cost.terminal(&x, &p)
        },
        &zt,
        STEP,
    );
    let t = cost.terminal_derivs(x, p);
    err = err.max(vec_err(&join(&t.h_x, &t.h_p), &tgrad));
    let thess = fd_jacobian(
        |z| {
            let (x, p) = split(z, n);
            let t = cost.terminal_derivs(&x, &p);
            join(&t.h_x, &t.h_p)
        },
        &zt,
        STEP,
    );
    err = err.max(mixed_rel_err(&t.h_xx, &thess.view((0, 0), (n, n)).into_owned()));
    err = err.max(mixed_rel_err(&t.h_xp, &thess.view((0, n), (n, r)).into_owned()));
    err.max(mixed_rel_err(&cost.terminal_param_hessian(x, p), &thess.view((n, n), (r, r)).into_owned()))
}
