//! Rigid-body quadrotor with quaternion attitude, plus its costs.
//!
//! State layout: `r (0..3)`, `v (3..6)`, `q = [w, x, y, z] (6..10)`,
//! `ω (10..13)`. Controls are the four rotor thrusts.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};

use super::{
    quadratic_form_hessian, ContractedHessians, CostModel, DynamicsModel, RunningDerivs,
    TerminalDerivs,
};
use crate::{Error, Result};

const R: usize = 0;
const V: usize = 3;
const Q: usize = 6;
const W: usize = 10;
const N: usize = 13;
const M: usize = 4;

#[derive(Clone, Debug)]
pub struct QuadDynamics {
    pub mass: f64,
    pub inertia: Vector3<f64>,
    pub arm_length: f64,
    pub yaw_coeff: f64,
    pub gravity: f64,
}

impl Default for QuadDynamics {
    fn default() -> Self {
        Self {
            mass: 1.0,
            inertia: Vector3::new(1.0, 1.0, 1.0),
            arm_length: 1.0,
            yaw_coeff: 1.0,
            gravity: 10.0,
        }
    }
}

fn quat(x: &DVector<f64>) -> Vector4<f64> {
    Vector4::new(x[Q], x[Q + 1], x[Q + 2], x[Q + 3])
}

fn omega(x: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(x[W], x[W + 1], x[W + 2])
}

fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Third column of the (homogeneous) rotation matrix, i.e. body z in world.
fn body_z(q: &Vector4<f64>) -> Vector3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Vector3::new(
        2.0 * (x * z + w * y),
        2.0 * (y * z - w * x),
        w * w - x * x - y * y + z * z,
    )
}

fn body_z_jacobian(q: &Vector4<f64>) -> nalgebra::Matrix3x4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    nalgebra::Matrix3x4::new(
        2.0 * y, 2.0 * z, 2.0 * w, 2.0 * x,
        -2.0 * x, -2.0 * w, 2.0 * z, 2.0 * y,
        2.0 * w, -2.0 * x, -2.0 * y, 2.0 * z,
    )
}

/// `Ω(ω)` with `q̇ = ½ Ω(ω) q`.
fn omega_matrix(w: &Vector3<f64>) -> Matrix4<f64> {
    Matrix4::new(
        0.0, -w.x, -w.y, -w.z,
        w.x, 0.0, w.z, -w.y,
        w.y, -w.z, 0.0, w.x,
        w.z, w.y, -w.x, 0.0,
    )
}

/// `Ξ(q)` with `q̇ = ½ Ξ(q) ω`.
fn xi_matrix(q: &Vector4<f64>) -> nalgebra::Matrix4x3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    nalgebra::Matrix4x3::new(
        -x, -y, -z,
        w, -z, y,
        z, w, -x,
        -y, x, w,
    )
}

/// Homogeneous rotation matrix of a (not necessarily unit) quaternion.
pub fn rotation_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z,
    )
}

impl QuadDynamics {
    fn torque_map(&self) -> nalgebra::Matrix3x4<f64> {
        let half = self.arm_length / 2.0;
        let c = self.yaw_coeff;
        nalgebra::Matrix3x4::new(
            0.0, -half, 0.0, half,
            -half, 0.0, half, 0.0,
            c, -c, c, -c,
        )
    }

    fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.inertia)
    }
}

impl DynamicsModel for QuadDynamics {
    fn state_dim(&self) -> usize {
        N
    }

    fn control_dim(&self) -> usize {
        M
    }

    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let q = quat(x);
        let w = omega(x);
        let thrust: f64 = u.iter().sum();
        let mut f = DVector::zeros(N);
        for i in 0..3 {
            f[R + i] = x[V + i];
        }
        let acc = body_z(&q) * (thrust / self.mass) - Vector3::new(0.0, 0.0, self.gravity);
        f.rows_mut(V, 3).copy_from(&acc);
        f.rows_mut(Q, 4).copy_from(&(omega_matrix(&w) * q * 0.5));
        let j = self.inertia_matrix();
        let u4 = Vector4::new(u[0], u[1], u[2], u[3]);
        let tau = self.torque_map() * u4;
        let wdot = (tau - w.cross(&(j * w))).component_div(&self.inertia);
        f.rows_mut(W, 3).copy_from(&wdot);
        f
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let q = quat(x);
        let w = omega(x);
        let thrust: f64 = u.iter().sum();
        let mut fx = DMatrix::zeros(N, N);
        let mut fu = DMatrix::zeros(N, M);
        for i in 0..3 {
            fx[(R + i, V + i)] = 1.0;
        }
        fx.view_mut((V, Q), (3, 4)).copy_from(&(body_z_jacobian(&q) * (thrust / self.mass)));
        let bz = body_z(&q) / self.mass;
        for k in 0..M {
            fu.view_mut((V, k), (3, 1)).copy_from(&bz);
        }
        fx.view_mut((Q, Q), (4, 4)).copy_from(&(omega_matrix(&w) * 0.5));
        fx.view_mut((Q, W), (4, 3)).copy_from(&(xi_matrix(&q) * 0.5));
        let j = self.inertia_matrix();
        let jinv = Matrix3::from_diagonal(&self.inertia.map(|v| 1.0 / v));
        let dgyro = skew(&(j * w)) - skew(&w) * j;
        fx.view_mut((W, W), (3, 3)).copy_from(&(jinv * dgyro));
        fu.view_mut((W, 0), (3, 4)).copy_from(&(jinv * self.torque_map()));
        (fx, fu)
    }

    fn contracted_hessians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> ContractedHessians {
        let thrust: f64 = u.iter().sum();
        let lv = Vector3::new(lambda[V], lambda[V + 1], lambda[V + 2]);
        let (a, b, c, d) = (lambda[Q], lambda[Q + 1], lambda[Q + 2], lambda[Q + 3]);
        let lw = Vector3::new(lambda[W], lambda[W + 1], lambda[W + 2]);
        let mut xx = DMatrix::zeros(N, N);
        let mut xu = DMatrix::zeros(N, M);

        // λ_vᵀ body_z(q) is a quadratic form in q.
        let (l0, l1, l2) = (lv.x, lv.y, lv.z);
        let s_qq = Matrix4::new(
            2.0 * l2, -2.0 * l1, 2.0 * l0, 0.0,
            -2.0 * l1, -2.0 * l2, 0.0, 2.0 * l0,
            2.0 * l0, 0.0, -2.0 * l2, 2.0 * l1,
            0.0, 2.0 * l0, 2.0 * l1, 2.0 * l2,
        );
        xx.view_mut((Q, Q), (4, 4)).copy_from(&(s_qq * (thrust / self.mass)));
        let s_q = body_z_jacobian(&quat(x)).transpose() * lv / self.mass;
        for k in 0..M {
            xu.view_mut((Q, k), (4, 1)).copy_from(&s_q);
        }

        // ½ λ_qᵀ Ξ(q) ω is bilinear in (q, ω).
        let h_wq = nalgebra::Matrix3x4::new(
            b, -a, -d, c,
            c, d, -a, -b,
            d, -c, b, -a,
        ) * 0.5;
        xx.view_mut((W, Q), (3, 4)).copy_from(&h_wq);
        xx.view_mut((Q, W), (4, 3)).copy_from(&h_wq.transpose());

        // −μᵀ(ω × Jω) with μ = J⁻¹λ_ω is a quadratic form in ω.
        let mu = lw.component_div(&self.inertia);
        let j = self.inertia_matrix();
        let h_ww = quadratic_form_hessian(3, |v| {
            let v3 = Vector3::new(v[0], v[1], v[2]);
            -mu.dot(&v3.cross(&(j * v3)))
        });
        xx.view_mut((W, W), (3, 3)).copy_from(&h_ww);

        ContractedHessians { xx, xu, uu: DMatrix::zeros(M, M) }
    }

    fn normalize_state(&self, x: &mut DVector<f64>) {
        let norm = x.rows(Q, 4).norm();
        if norm > 0.0 && norm.is_finite() {
            x.rows_mut(Q, 4).unscale_mut(norm);
        }
    }
}

/// `½ tr(I − R(q_g)ᵀ R(q))` for unit quaternions.
pub fn attitude_error(q: &[f64; 4], q_goal: &[f64; 4]) -> Result<f64> {
    for quat in [q, q_goal] {
        let norm = quat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidQuaternion { norm });
        }
    }
    let rq = rotation_matrix(&Vector4::from_column_slice(q));
    let rg = rotation_matrix(&Vector4::from_column_slice(q_goal));
    Ok(0.5 * (Matrix3::identity() - rg.transpose() * rq).trace())
}

/// Smooth extension of [`attitude_error`] off the unit sphere, matching it
/// exactly on unit quaternions: `½(3 + ‖q‖² − 4 (q_g·q)²)`.
fn attitude_form(q: &Vector4<f64>, qg: &Vector4<f64>) -> (f64, Vector4<f64>, Matrix4<f64>) {
    let dot = qg.dot(q);
    let value = 0.5 * (3.0 + q.norm_squared() - 4.0 * dot * dot);
    let grad = q - qg * (4.0 * dot);
    let hess = Matrix4::identity() - qg * qg.transpose() * 4.0;
    (value, grad, hess)
}

/// Fixed final cost `w_r‖r − r_g‖² + w_v‖v‖² + w_q e(q, q_g) + w_ω‖ω‖²`.
#[derive(Clone, Debug)]
pub struct QuadGoalCost {
    pub goal_position: Vector3<f64>,
    pub goal_attitude: Vector4<f64>,
    pub weights: [f64; 4],
}

impl Default for QuadGoalCost {
    fn default() -> Self {
        Self {
            goal_position: Vector3::new(8.0, 8.0, 0.0),
            goal_attitude: Vector4::new(1.0, 0.0, 0.0, 0.0),
            weights: [10.0, 5.0, 100.0, 5.0],
        }
    }
}

impl QuadGoalCost {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let [wr, wv, wq, ww] = self.weights;
        let r = Vector3::new(x[R], x[R + 1], x[R + 2]);
        let v = Vector3::new(x[V], x[V + 1], x[V + 2]);
        let (e, _, _) = attitude_form(&quat(x), &self.goal_attitude);
        wr * (r - self.goal_position).norm_squared() + wv * v.norm_squared() + wq * e + ww * omega(x).norm_squared()
    }

    fn derivs(&self, x: &DVector<f64>, r_dim: usize) -> TerminalDerivs {
        let [wr, wv, wq, ww] = self.weights;
        let mut h_x = DVector::zeros(N);
        let mut h_xx = DMatrix::zeros(N, N);
        for i in 0..3 {
            h_x[R + i] = 2.0 * wr * (x[R + i] - self.goal_position[i]);
            h_x[V + i] = 2.0 * wv * x[V + i];
            h_x[W + i] = 2.0 * ww * x[W + i];
            h_xx[(R + i, R + i)] = 2.0 * wr;
            h_xx[(V + i, V + i)] = 2.0 * wv;
            h_xx[(W + i, W + i)] = 2.0 * ww;
        }
        let (_, g, h) = attitude_form(&quat(x), &self.goal_attitude);
        h_x.rows_mut(Q, 4).copy_from(&(g * wq));
        h_xx.view_mut((Q, Q), (4, 4)).copy_from(&(h * wq));
        TerminalDerivs {
            h_x,
            h_p: DVector::zeros(r_dim),
            h_xx,
            h_xp: DMatrix::zeros(N, r_dim),
        }
    }
}

/// Running cost `p · φ(r) + w_u‖u‖²` over the nine monomials of position up to
/// degree two: `[x², y², z², x, y, z, xy, xz, yz]`.
#[derive(Clone, Debug)]
pub struct QuadPolynomialCost {
    pub control_weight: f64,
    pub terminal: QuadGoalCost,
}

impl Default for QuadPolynomialCost {
    fn default() -> Self {
        Self { control_weight: 0.1, terminal: QuadGoalCost::default() }
    }
}

const POLY_TERMS: usize = 9;

fn poly_features(x: &DVector<f64>) -> DVector<f64> {
    let (a, b, c) = (x[R], x[R + 1], x[R + 2]);
    DVector::from_vec(vec![a * a, b * b, c * c, a, b, c, a * b, a * c, b * c])
}

/// `∂φ/∂r`, 9×3.
fn poly_jacobian(x: &DVector<f64>) -> DMatrix<f64> {
    let (a, b, c) = (x[R], x[R + 1], x[R + 2]);
    DMatrix::from_row_slice(
        POLY_TERMS,
        3,
        &[
            2.0 * a, 0.0, 0.0,
            0.0, 2.0 * b, 0.0,
            0.0, 0.0, 2.0 * c,
            1.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,
            b, a, 0.0,
            c, 0.0, a,
            0.0, c, b,
        ],
    )
}

impl CostModel for QuadPolynomialCost {
    fn param_dim(&self) -> usize {
        POLY_TERMS
    }

    fn running(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> f64 {
        p.dot(&poly_features(x)) + self.control_weight * u.norm_squared()
    }

    fn running_derivs(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> RunningDerivs {
        let jac = poly_jacobian(x);
        let mut c_x = DVector::zeros(N);
        c_x.rows_mut(R, 3).copy_from(&(jac.transpose() * p));
        let mut c_xx = DMatrix::zeros(N, N);
        let hr = Matrix3::new(
            2.0 * p[0], p[6], p[7],
            p[6], 2.0 * p[1], p[8],
            p[7], p[8], 2.0 * p[2],
        );
        c_xx.view_mut((R, R), (3, 3)).copy_from(&hr);
        let mut c_xp = DMatrix::zeros(N, POLY_TERMS);
        c_xp.view_mut((R, 0), (3, POLY_TERMS)).copy_from(&jac.transpose());
        RunningDerivs {
            c_x,
            c_u: u * (2.0 * self.control_weight),
            c_p: poly_features(x),
            c_xx,
            c_xu: DMatrix::zeros(N, M),
            c_uu: DMatrix::identity(M, M) * (2.0 * self.control_weight),
            c_xp,
            c_up: DMatrix::zeros(M, POLY_TERMS),
        }
    }

    fn running_param_hessian(&self, _x: &DVector<f64>, _u: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(POLY_TERMS, POLY_TERMS)
    }

    fn terminal(&self, x: &DVector<f64>, _p: &DVector<f64>) -> f64 {
        self.terminal.value(x)
    }

    fn terminal_derivs(&self, x: &DVector<f64>, _p: &DVector<f64>) -> TerminalDerivs {
        self.terminal.derivs(x, POLY_TERMS)
    }

    fn terminal_param_hessian(&self, _x: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(POLY_TERMS, POLY_TERMS)
    }
}

/// Running cost `−Σ_i p_i ‖r − o_i‖² + w_u‖u‖²` around fixed obstacle points.
#[derive(Clone, Debug)]
pub struct DistToObstacleCost {
    pub obstacles: Vec<Vector3<f64>>,
    pub control_weight: f64,
    pub terminal: QuadGoalCost,
}

impl DistToObstacleCost {
    pub fn new(obstacles: Vec<Vector3<f64>>) -> Self {
        Self { obstacles, control_weight: 0.1, terminal: QuadGoalCost::default() }
    }

    /// Four obstacle points placed between the default start and goal.
    pub fn default_obstacles() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(-1.5, -7.5, 3.0),
            Vector3::new(-1.5, -4.5, 3.0),
            Vector3::new(-0.5, 3.0, 4.5),
            Vector3::new(1.5, 0.5, 4.5),
        ]
    }

    fn offsets(&self, x: &DVector<f64>) -> Vec<Vector3<f64>> {
        let r = Vector3::new(x[R], x[R + 1], x[R + 2]);
        self.obstacles.iter().map(|o| r - o).collect()
    }
}

impl CostModel for DistToObstacleCost {
    fn param_dim(&self) -> usize {
        self.obstacles.len()
    }

    fn running(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> f64 {
        let d: f64 = self.offsets(x).iter().zip(p.iter()).map(|(o, pi)| -pi * o.norm_squared()).sum();
        d + self.control_weight * u.norm_squared()
    }

    fn running_derivs(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> RunningDerivs {
        let k = self.obstacles.len();
        let offsets = self.offsets(x);
        let mut c_x = DVector::zeros(N);
        let mut c_xp = DMatrix::zeros(N, k);
        let mut c_p = DVector::zeros(k);
        for (i, o) in offsets.iter().enumerate() {
            c_x.rows_mut(R, 3).axpy(-2.0 * p[i], o, 1.0);
            c_xp.view_mut((R, i), (3, 1)).copy_from(&(o * -2.0));
            c_p[i] = -o.norm_squared();
        }
        let mut c_xx = DMatrix::zeros(N, N);
        let diag = -2.0 * p.sum();
        for i in 0..3 {
            c_xx[(R + i, R + i)] = diag;
        }
        RunningDerivs {
            c_x,
            c_u: u * (2.0 * self.control_weight),
            c_p,
            c_xx,
            c_xu: DMatrix::zeros(N, M),
            c_uu: DMatrix::identity(M, M) * (2.0 * self.control_weight),
            c_xp,
            c_up: DMatrix::zeros(M, k),
        }
    }

    fn running_param_hessian(&self, _x: &DVector<f64>, _u: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        let k = self.obstacles.len();
        DMatrix::zeros(k, k)
    }

    fn terminal(&self, x: &DVector<f64>, _p: &DVector<f64>) -> f64 {
        self.terminal.value(x)
    }

    fn terminal_derivs(&self, x: &DVector<f64>, _p: &DVector<f64>) -> TerminalDerivs {
        self.terminal.derivs(x, self.obstacles.len())
    }

    fn terminal_param_hessian(&self, _x: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        let k = self.obstacles.len();
        DMatrix::zeros(k, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::fdcheck::{check_cost, check_dynamics};

    fn state(seed: f64) -> DVector<f64> {
        let mut x = DVector::from_fn(N, |i, _| ((i as f64 + 1.0) * seed).sin() * 2.0);
        let q = x.rows(Q, 4).normalize();
        x.rows_mut(Q, 4).copy_from(&q);
        x
    }

    #[test]
    fn dynamics_derivatives() {
        let quad = QuadDynamics { inertia: Vector3::new(1.0, 1.5, 2.0), ..Default::default() };
        for seed in [0.3, 1.7, 2.9] {
            let x = state(seed);
            let u = DVector::from_vec(vec![2.0, 3.0, 1.5, 4.0]);
            let lambda = DVector::from_fn(N, |i, _| ((i as f64) * 0.37 + seed).cos());
            let err = check_dynamics(&quad, &x, &u, &lambda);
            assert!(err < 1e-6, "quad derivative rel err {err}");
        }
    }

    #[test]
    fn hover_is_equilibrium() {
        let quad = QuadDynamics::default();
        let mut x = DVector::zeros(N);
        x[Q] = 1.0;
        let u = DVector::from_element(4, 2.5);
        assert!(quad.eval(&x, &u).norm() < 1e-15);
    }

    #[test]
    fn attitude_error_values() {
        let id = [1.0, 0.0, 0.0, 0.0];
        assert!(attitude_error(&id, &id).unwrap().abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // 90° about z: ½ tr(I − R) = ½(3 − 1) = 1
        let e = attitude_error(&[h, 0.0, 0.0, h], &id).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        // 180°: 2
        let e = attitude_error(&[0.0, 1.0, 0.0, 0.0], &id).unwrap();
        assert!((e - 2.0).abs() < 1e-12);
        assert!(matches!(
            attitude_error(&[1.1, 0.0, 0.0, 0.0], &id),
            Err(Error::InvalidQuaternion { .. })
        ));
    }

    #[test]
    fn attitude_form_matches_trace_on_unit_sphere() {
        for seed in [0.1f64, 0.9, 2.2, 4.0] {
            let q = Vector4::new(seed.sin(), seed.cos(), (2.0 * seed).sin(), 0.3).normalize();
            let g = Vector4::new(0.2, seed, -0.4, 1.0).normalize();
            let (v, _, _) = attitude_form(&q, &g);
            let exact = attitude_error(&[q[0], q[1], q[2], q[3]], &[g[0], g[1], g[2], g[3]]).unwrap();
            assert!((v - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_derivatives() {
        let p = DVector::from_vec(vec![0.5, -0.2, 1.0, 0.3, 0.7, -1.0, 0.1, 0.2, -0.3]);
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        for seed in [0.4, 1.3] {
            let x = state(seed);
            assert!(check_cost(&QuadPolynomialCost::default(), &x, &u, &p) < 1e-6);
            let obs = DistToObstacleCost::new(DistToObstacleCost::default_obstacles());
            let po = DVector::from_vec(vec![0.5, 1.0, 0.2, 0.1]);
            assert!(check_cost(&obs, &x, &u, &po) < 1e-6);
        }
    }
}
