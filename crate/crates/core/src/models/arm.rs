//! Planar two-link arm and its weighted-feature cost.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::{ContractedHessians, CostModel, DynamicsModel, RunningDerivs, TerminalDerivs};

/// Two-link planar arm with state `[q1, q2, q̇1, q̇2]` and joint torques as
/// controls. Links are uniform rods, centre of mass at mid-length.
#[derive(Clone, Debug)]
pub struct ArmDynamics {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
}

impl Default for ArmDynamics {
    fn default() -> Self {
        Self { m1: 2.0, m2: 1.0, l1: 1.0, l2: 1.0 }
    }
}

// Indices into z = (q1, q2, q̇1, q̇2, u1, u2).
const Z: usize = 6;

struct ArmTerms {
    minv: Matrix2<f64>,
    acc: Vector2<f64>,
    // ∂M/∂q2 and ∂²M/∂q2², the only nonzero mass-matrix derivatives.
    dm: Matrix2<f64>,
    ddm: Matrix2<f64>,
    // ∂b/∂z_i, b = u − Coriolis.
    db: [Vector2<f64>; Z],
    hc: f64,
    sc: f64,
}

impl ArmDynamics {
    fn terms(&self, x: &DVector<f64>, u: &DVector<f64>) -> ArmTerms {
        let (m1, m2, l1, l2) = (self.m1, self.m2, self.l1, self.l2);
        let (r1, r2) = (l1 / 2.0, l2 / 2.0);
        let (i1, i2) = (m1 * l1 * l1 / 12.0, m2 * l2 * l2 / 12.0);
        let (q2, dq1, dq2) = (x[1], x[2], x[3]);
        let (s2, c2) = q2.sin_cos();
        let k = m2 * l1 * r2;
        let hc = k * s2;
        let sc = k * c2;
        let m11 = m1 * r1 * r1 + i1 + m2 * (l1 * l1 + r2 * r2) + 2.0 * k * c2 + i2;
        let m12 = m2 * r2 * r2 + k * c2 + i2;
        let m22 = m2 * r2 * r2 + i2;
        let mass = Matrix2::new(m11, m12, m12, m22);
        let minv = mass.try_inverse().expect("arm mass matrix is positive definite");
        let b = Vector2::new(
            u[0] + hc * (2.0 * dq1 * dq2 + dq2 * dq2),
            u[1] - hc * dq1 * dq1,
        );
        let acc = minv * b;
        let dm = Matrix2::new(-2.0 * hc, -hc, -hc, 0.0);
        let ddm = Matrix2::new(-2.0 * sc, -sc, -sc, 0.0);
        let mut db = [Vector2::zeros(); Z];
        db[1] = Vector2::new(sc * (2.0 * dq1 * dq2 + dq2 * dq2), -sc * dq1 * dq1);
        db[2] = Vector2::new(2.0 * hc * dq2, -2.0 * hc * dq1);
        db[3] = Vector2::new(2.0 * hc * (dq1 + dq2), 0.0);
        db[4] = Vector2::new(1.0, 0.0);
        db[5] = Vector2::new(0.0, 1.0);
        ArmTerms { minv, acc, dm, ddm, db, hc, sc }
    }

    fn dmass(t: &ArmTerms, i: usize) -> Matrix2<f64> {
        if i == 1 {
            t.dm
        } else {
            Matrix2::zeros()
        }
    }

    fn ddb(t: &ArmTerms, x: &DVector<f64>, i: usize, j: usize) -> Vector2<f64> {
        let (dq1, dq2) = (x[2], x[3]);
        let (hc, sc) = (t.hc, t.sc);
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        match (i, j) {
            (1, 1) => Vector2::new(-hc * (2.0 * dq1 * dq2 + dq2 * dq2), hc * dq1 * dq1),
            (1, 2) => Vector2::new(2.0 * sc * dq2, -2.0 * sc * dq1),
            (1, 3) => Vector2::new(2.0 * sc * (dq1 + dq2), 0.0),
            (2, 2) => Vector2::new(0.0, -2.0 * hc),
            (2, 3) | (3, 3) => Vector2::new(2.0 * hc, 0.0),
            _ => Vector2::zeros(),
        }
    }

    /// First derivatives of the joint accelerations with respect to z.
    fn dacc(t: &ArmTerms) -> [Vector2<f64>; Z] {
        let mut out = [Vector2::zeros(); Z];
        for (i, o) in out.iter_mut().enumerate() {
            *o = t.minv * (t.db[i] - Self::dmass(t, i) * t.acc);
        }
        out
    }
}

impl DynamicsModel for ArmDynamics {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let t = self.terms(x, u);
        DVector::from_vec(vec![x[2], x[3], t.acc[0], t.acc[1]])
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let t = self.terms(x, u);
        let da = Self::dacc(&t);
        let mut fx = DMatrix::zeros(4, 4);
        fx[(0, 2)] = 1.0;
        fx[(1, 3)] = 1.0;
        let mut fu = DMatrix::zeros(4, 2);
        for i in 0..4 {
            fx[(2, i)] = da[i][0];
            fx[(3, i)] = da[i][1];
        }
        for i in 0..2 {
            fu[(2, i)] = da[4 + i][0];
            fu[(3, i)] = da[4 + i][1];
        }
        (fx, fu)
    }

    fn contracted_hessians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> ContractedHessians {
        let t = self.terms(x, u);
        let da = Self::dacc(&t);
        // λ_aᵀ M⁻¹ (b_ij − M_i a_j − M_j a_i − M_ij a), M symmetric.
        let w = t.minv * Vector2::new(lambda[2], lambda[3]);
        let mut full = [[0.0; Z]; Z];
        for i in 0..Z {
            for j in 0..=i {
                let mij = if i == 1 && j == 1 { t.ddm } else { Matrix2::zeros() };
                let v = Self::ddb(&t, x, i, j)
                    - Self::dmass(&t, i) * da[j]
                    - Self::dmass(&t, j) * da[i]
                    - mij * t.acc;
                let s = w.dot(&v);
                full[i][j] = s;
                full[j][i] = s;
            }
        }
        let xx = DMatrix::from_fn(4, 4, |i, j| full[i][j]);
        let xu = DMatrix::from_fn(4, 2, |i, j| full[i][4 + j]);
        let uu = DMatrix::from_fn(2, 2, |i, j| full[4 + i][4 + j]);
        ContractedHessians { xx, xu, uu }
    }
}

/// `c = Σ p_i (x_i − g_i)² + w_u ‖u‖²`, `h = Σ p_i (x_i − g_i)²`.
#[derive(Clone, Debug)]
pub struct WeightedFeatureCost {
    pub goal: DVector<f64>,
    pub control_weight: f64,
}

impl WeightedFeatureCost {
    pub fn new(goal: DVector<f64>, control_weight: f64) -> Self {
        Self { goal, control_weight }
    }

    /// Arm default: reach `[π/2, 0, 0, 0]` with `0.5 ‖u‖²` effort.
    pub fn arm_default() -> Self {
        Self::new(
            DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]),
            0.5,
        )
    }

    fn features(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.goal).map(|d| d * d)
    }

    fn state_terms(&self, x: &DVector<f64>, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.goal.len();
        let d = x - &self.goal;
        let gx = DVector::from_fn(n, |i, _| 2.0 * p[i] * d[i]);
        let gxx = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 * p[i] } else { 0.0 });
        let gxp = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 * d[i] } else { 0.0 });
        (gx, gxx, gxp)
    }
}

impl CostModel for WeightedFeatureCost {
    fn param_dim(&self) -> usize {
        self.goal.len()
    }

    fn running(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> f64 {
        p.dot(&self.features(x)) + self.control_weight * u.norm_squared()
    }

    fn running_derivs(&self, x: &DVector<f64>, u: &DVector<f64>, p: &DVector<f64>) -> RunningDerivs {
        let (n, m) = (self.goal.len(), u.len());
        let (c_x, c_xx, c_xp) = self.state_terms(x, p);
        RunningDerivs {
            c_x,
            c_u: u * (2.0 * self.control_weight),
            c_p: self.features(x),
            c_xx,
            c_xu: DMatrix::zeros(n, m),
            c_uu: DMatrix::identity(m, m) * (2.0 * self.control_weight),
            c_xp,
            c_up: DMatrix::zeros(m, n),
        }
    }

    fn running_param_hessian(&self, _x: &DVector<f64>, _u: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        let n = self.goal.len();
        DMatrix::zeros(n, n)
    }

    fn terminal(&self, x: &DVector<f64>, p: &DVector<f64>) -> f64 {
        p.dot(&self.features(x))
    }

    fn terminal_derivs(&self, x: &DVector<f64>, p: &DVector<f64>) -> TerminalDerivs {
        let (h_x, h_xx, h_xp) = self.state_terms(x, p);
        TerminalDerivs { h_x, h_p: self.features(x), h_xx, h_xp }
    }

    fn terminal_param_hessian(&self, _x: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        let n = self.goal.len();
        DMatrix::zeros(n, n)
    }
}
