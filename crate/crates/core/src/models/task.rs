//! Task-space maps `y = g(x, u)` that keyframes are expressed in.

use nalgebra::{DMatrix, DVector};

pub trait TaskMap: Send + Sync {
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `(∂g/∂x, ∂g/∂u)`.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);
}

/// Picks a subset of state coordinates, e.g. joint angles or position.
#[derive(Clone, Debug)]
pub struct StateSelector {
    pub indices: Vec<usize>,
    pub state_dim: usize,
    pub control_dim: usize,
}

impl StateSelector {
    pub fn new(indices: Vec<usize>, state_dim: usize, control_dim: usize) -> Self {
        assert!(indices.iter().all(|&i| i < state_dim));
        Self { indices, state_dim, control_dim }
    }

    /// Joint angles `[q1, q2]` of the two-link arm.
    pub fn arm_joints() -> Self {
        Self::new(vec![0, 1], 4, 2)
    }

    /// Position `r` of the quadrotor.
    pub fn quad_position() -> Self {
        Self::new(vec![0, 1, 2], 13, 4)
    }
}

impl TaskMap for StateSelector {
    fn output_dim(&self) -> usize {
        self.indices.len()
    }

    fn eval(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| x[i]))
    }

    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut gx = DMatrix::zeros(self.indices.len(), self.state_dim);
        for (row, &i) in self.indices.iter().enumerate() {
            gx[(row, i)] = 1.0;
        }
        (gx, DMatrix::zeros(self.indices.len(), self.control_dim))
    }
}
