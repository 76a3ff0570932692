//! Fixed-step integration and interpolation on a shared uniform time grid.
//!
//! Every time integral in the crate (state, costate, Riccati, trajectory
//! sensitivities) runs classical RK4 over the same [`TimeGrid`], so paths
//! produced by different passes line up node for node.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t0 = τ_0 < τ_1 < … < τ_K = t1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite()) || t1 <= t0 {
            return Err(Error::InvalidGrid(format!("need t1 > t0, got [{t0}, {t1}]")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("need at least one step".into()));
        }
        Ok(Self { t0, t1, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    /// Number of steps `K`; there are `K + 1` nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t1
        } else {
            self.t0 + k as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.node(k))
    }

    pub fn contains(&self, tau: f64) -> bool {
        tau >= self.t0 && tau <= self.t1
    }

    /// Index `k` of the interval `[τ_k, τ_{k+1}]` holding `tau`, and the
    /// fractional position inside it.
    pub fn locate(&self, tau: f64) -> Result<(usize, f64)> {
        if !self.contains(tau) {
            return Err(Error::OutOfRange {
                tau,
                t0: self.t0,
                t1: self.t1,
            });
        }
        let mut s = (tau - self.t0) / self.step();
        // Times meant to sit on a node should not fall into the previous
        // interval through rounding.
        if (s - s.round()).abs() < 1e-9 {
            s = s.round();
        }
        let k = (s.floor() as usize).min(self.steps - 1);
        let frac = (s - k as f64).clamp(0.0, 1.0);
        Ok((k, frac))
    }
}

/// Values that RK4 can carry: a vector space with a finiteness check.
pub trait OdeValue: Clone {
    /// `self + s * other`
    fn add_scaled(&self, other: &Self, s: f64) -> Self;
    fn is_finite(&self) -> bool;
    fn same_shape(&self, other: &Self) -> bool;
}

impl OdeValue for f64 {
    fn add_scaled(&self, other: &Self, s: f64) -> Self {
        self + s * other
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn same_shape(&self, _other: &Self) -> bool {
        true
    }
}

impl OdeValue for DVector<f64> {
    fn add_scaled(&self, other: &Self, s: f64) -> Self {
        self + other * s
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn same_shape(&self, other: &Self) -> bool {
        self.len() == other.len()
    }
}

impl OdeValue for DMatrix<f64> {
    fn add_scaled(&self, other: &Self, s: f64) -> Self {
        self + other * s
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }
}

impl<A: OdeValue, B: OdeValue> OdeValue for (A, B) {
    fn add_scaled(&self, other: &Self, s: f64) -> Self {
        (self.0.add_scaled(&other.0, s), self.1.add_scaled(&other.1, s))
    }
    fn is_finite(&self) -> bool {
        self.0.is_finite() && self.1.is_finite()
    }
    fn same_shape(&self, other: &Self) -> bool {
        self.0.same_shape(&other.0) && self.1.same_shape(&other.1)
    }
}

/// Index into the half-step lattice `t0 + j·h/2` nearest to `tau`. RK4
/// evaluates only at nodes and midpoints, so this recovers which sample a
/// field call refers to.
pub fn half_step_index(grid: &TimeGrid, tau: f64) -> usize {
    let j = ((tau - grid.t0()) / (0.5 * grid.step())).round();
    (j.max(0.0) as usize).min(2 * grid.steps())
}

/// One value per grid node.
#[derive(Clone, Debug)]
pub struct SampledPath<V> {
    grid: TimeGrid,
    values: Vec<V>,
}

impl<V: OdeValue> SampledPath<V> {
    pub fn new(grid: TimeGrid, values: Vec<V>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ContractViolation(format!(
                "path has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(first) = values.first() {
            if values.iter().any(|v| !v.same_shape(first)) {
                return Err(Error::ContractViolation("path values differ in shape".into()));
            }
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { node });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: V) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [V] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<V> {
        self.values
    }

    pub fn at_node(&self, k: usize) -> &V {
        &self.values[k]
    }

    pub fn first(&self) -> &V {
        &self.values[0]
    }

    pub fn last(&self) -> &V {
        &self.values[self.values.len() - 1]
    }

    /// Linear interpolation between the bracketing nodes; exact at nodes.
    pub fn sample_at(&self, tau: f64) -> Result<V> {
        let (k, frac) = self.grid.locate(tau)?;
        if frac == 0.0 {
            return Ok(self.values[k].clone());
        }
        if frac == 1.0 {
            return Ok(self.values[k + 1].clone());
        }
        let a = &self.values[k];
        let diff = self.values[k + 1].add_scaled(a, -1.0);
        Ok(a.add_scaled(&diff, frac))
    }
}

/// Free-function form of [`SampledPath::sample_at`].
pub fn sample_at<V: OdeValue>(path: &SampledPath<V>, tau: f64) -> Result<V> {
    path.sample_at(tau)
}

/// Cubic Hermite value at the midpoint of a step of length `h`, given the
/// end values and their derivatives.
pub fn hermite_midpoint<V: OdeValue>(y0: &V, y1: &V, d0: &V, d1: &V, h: f64) -> V {
    y0.add_scaled(&y1.add_scaled(y0, -1.0), 0.5)
        .add_scaled(d0, h / 8.0)
        .add_scaled(d1, -h / 8.0)
}

/// One classical RK4 step from `tau` to `tau + h`; `None` on a non-finite stage.
pub fn rk4_step<V, F>(field: &mut F, tau: f64, y: &V, h: f64) -> Option<V>
where
    V: OdeValue,
    F: FnMut(f64, &V) -> V,
{
    let k1 = field(tau, y);
    if !k1.is_finite() {
        return None;
    }
    let k2 = field(tau + 0.5 * h, &y.add_scaled(&k1, 0.5 * h));
    if !k2.is_finite() {
        return None;
    }
    let k3 = field(tau + 0.5 * h, &y.add_scaled(&k2, 0.5 * h));
    if !k3.is_finite() {
        return None;
    }
    let k4 = field(tau + h, &y.add_scaled(&k3, h));
    let next = y
        .add_scaled(&k1, h / 6.0)
        .add_scaled(&k2, h / 3.0)
        .add_scaled(&k3, h / 3.0)
        .add_scaled(&k4, h / 6.0);
    next.is_finite().then_some(next)
}

/// Classical RK4 forward from `init` at `t0`; node 0 is `init` exactly.
pub fn integrate_forward<V, F>(field: F, init: V, grid: &TimeGrid) -> Result<SampledPath<V>>
where
    V: OdeValue,
    F: FnMut(f64, &V) -> V,
{
    integrate_forward_with(field, init, grid, |_, _| {})
}

/// As [`integrate_forward`], applying `post_step(k, value)` to each new node
/// value (e.g. to renormalize a quaternion block).
pub fn integrate_forward_with<V, F, P>(
    mut field: F,
    init: V,
    grid: &TimeGrid,
    mut post_step: P,
) -> Result<SampledPath<V>>
where
    V: OdeValue,
    F: FnMut(f64, &V) -> V,
    P: FnMut(usize, &mut V),
{
    if !init.is_finite() {
        return Err(Error::IntegrationDiverged { node: 0 });
    }
    let h = grid.step();
    let mut values = Vec::with_capacity(grid.len());
    values.push(init);
    for k in 0..grid.steps() {
        let mut next = rk4_step(&mut field, grid.node(k), &values[k], h)
            .ok_or(Error::IntegrationDiverged { node: k + 1 })?;
        post_step(k + 1, &mut next);
        values.push(next);
    }
    Ok(SampledPath {
        grid: *grid,
        values,
    })
}

/// Classical RK4 backward from `terminal` at `t1`; node K is `terminal`
/// exactly.
///
/// `field(τ, y)` returns the *negative* time derivative `-dy/dτ`, the form in
/// which costate and Riccati equations are usually written.
pub fn integrate_backward<V, F>(mut field: F, terminal: V, grid: &TimeGrid) -> Result<SampledPath<V>>
where
    V: OdeValue,
    F: FnMut(f64, &V) -> V,
{
    let k_max = grid.steps();
    if !terminal.is_finite() {
        return Err(Error::IntegrationDiverged { node: k_max });
    }
    let h = grid.step();
    let mut values: Vec<V> = Vec::with_capacity(grid.len());
    values.push(terminal);
    for k in (1..=k_max).rev() {
        let y = values.last().expect("non-empty");
        let next = rk4_step_reverse(&mut field, grid.node(k), y, h)
            .ok_or(Error::IntegrationDiverged { node: k - 1 })?;
        values.push(next);
    }
    values.reverse();
    Ok(SampledPath {
        grid: *grid,
        values,
    })
}

/// One RK4 step from `tau` to `tau - h` where `field` returns `-dy/dτ`.
pub fn rk4_step_reverse<V, F>(field: &mut F, tau: f64, y: &V, h: f64) -> Option<V>
where
    V: OdeValue,
    F: FnMut(f64, &V) -> V,
{
    // Step from τ to τ - h for dy/dτ = -field(τ, y).
    let k1 = field(tau, y);
    if !k1.is_finite() {
        return None;
    }
    let k2 = field(tau - 0.5 * h, &y.add_scaled(&k1, 0.5 * h));
    if !k2.is_finite() {
        return None;
    }
    let k3 = field(tau - 0.5 * h, &y.add_scaled(&k2, 0.5 * h));
    if !k3.is_finite() {
        return None;
    }
    let k4 = field(tau - h, &y.add_scaled(&k3, h));
    let next = y
        .add_scaled(&k1, h / 6.0)
        .add_scaled(&k2, h / 3.0)
        .add_scaled(&k3, h / 3.0)
        .add_scaled(&k4, h / 6.0);
    next.is_finite().then_some(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(t1: f64, k: usize) -> TimeGrid {
        TimeGrid::new(0.0, t1, k).unwrap()
    }

    #[test]
    fn grid_rejects_bad_ranges() {
        assert!(TimeGrid::new(1.0, 1.0, 10).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        let g = grid(1.0, 7);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(7), 1.0);
        assert!(g.nodes().collect::<Vec<_>>().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_field_keeps_constant() {
        let g = grid(2.0, 13);
        let c = DVector::from_vec(vec![1.5, -2.0]);
        let fwd = integrate_forward(|_, y: &DVector<f64>| y * 0.0, c.clone(), &g).unwrap();
        let bwd = integrate_backward(|_, y: &DVector<f64>| y * 0.0, c.clone(), &g).unwrap();
        for v in fwd.values().iter().chain(bwd.values()) {
            assert_eq!(v, &c);
        }
    }

    #[test]
    fn exponential_growth() {
        let path = integrate_forward(|_, y: &f64| *y, 1.0, &grid(1.0, 100)).unwrap();
        assert_eq!(*path.first(), 1.0);
        assert_abs_diff_eq!(*path.last(), std::f64::consts::E, epsilon = 1e-6);
    }

    #[test]
    fn time_dependent_field_is_exact_for_polynomials() {
        let path = integrate_forward(|t, _: &f64| -2.0 * t, 1.0, &grid(1.0, 50)).unwrap();
        assert_abs_diff_eq!(*path.last(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn backward_exponential() {
        // -λ̇ = λ with λ(1) = 1 gives λ(0) = e.
        let path = integrate_backward(|_, y: &f64| *y, 1.0, &grid(1.0, 100)).unwrap();
        assert_eq!(*path.last(), 1.0);
        assert_abs_diff_eq!(*path.first(), std::f64::consts::E, epsilon = 1e-6);
    }

    #[test]
    fn forward_then_backward_recovers_init() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let g = grid(1.0, 200);
        let init = DVector::from_vec(vec![0.7, -1.1]);
        let fwd = integrate_forward(|_, y: &DVector<f64>| &a * y, init.clone(), &g).unwrap();
        // Same ODE run backward: -ẏ = -A y.
        let bwd = integrate_backward(|_, y: &DVector<f64>| -(&a * y), fwd.last().clone(), &g).unwrap();
        assert!((bwd.first() - &init).amax() < 1e-6);
    }

    #[test]
    fn rk4_convergence_order() {
        let err = |k| (integrate_forward(|_, y: &f64| *y, 1.0, &grid(1.0, k)).unwrap().last() - std::f64::consts::E).abs();
        let ratio = err(10) / err(20);
        assert!(ratio >= 2f64.powf(3.5), "ratio {ratio}");
    }

    #[test]
    fn divergence_reports_node() {
        let err = integrate_forward(|_, y: &f64| y * y * 1e200, 1.0, &grid(1.0, 10)).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { node: 1 }));
    }

    #[test]
    fn interpolation() {
        let g = grid(1.0, 4);
        let path = SampledPath::new(g, (0..5).map(|k| 3.0 * k as f64).collect()).unwrap();
        assert_eq!(path.sample_at(0.25).unwrap(), 3.0);
        assert_abs_diff_eq!(path.sample_at(0.125).unwrap(), 1.5, epsilon = 1e-12);
        assert_eq!(path.sample_at(1.0).unwrap(), 12.0);
        assert!(matches!(path.sample_at(1.2), Err(Error::OutOfRange { .. })));
        let flat = SampledPath::constant(g, 2.5);
        assert_eq!(sample_at(&flat, 0.61).unwrap(), 2.5);
    }
}
