//! Polynomial time warp `t = w_β(τ) = Σ_{i=1..s} β_i τ^i`.
//!
//! An empty `β` stands for the fixed identity warp `t = τ`.

/// Lower bound on `dw/dτ` that defines the admissible set of warps.
pub const WARP_VELOCITY_FLOOR: f64 = 1e-3;

pub fn warp_eval(beta: &[f64], tau: f64) -> f64 {
    if beta.is_empty() {
        return tau;
    }
    // Horner on τ·(β_1 + β_2 τ + …); no constant term, so w(0) = 0 exactly.
    let inner = beta.iter().rev().fold(0.0, |acc, b| acc * tau + b);
    inner * tau
}

pub fn warp_velocity(beta: &[f64], tau: f64) -> f64 {
    if beta.is_empty() {
        return 1.0;
    }
    beta.iter()
        .enumerate()
        .rev()
        .fold(0.0, |acc, (i, b)| acc * tau + (i + 1) as f64 * b)
}

/// `∂v/∂β_i = i·τ^{i-1}`.
pub fn warp_velocity_grad(s: usize, tau: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(s);
    let mut pow = 1.0;
    for i in 1..=s {
        out.push(i as f64 * pow);
        pow *= tau;
    }
    out
}

/// True when `v_β > ε_v` at `grid_checks` evenly spaced points of `[0, T]`.
pub fn warp_is_admissible(beta: &[f64], horizon: f64, grid_checks: usize) -> bool {
    if beta.is_empty() {
        return true;
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return false;
    }
    let n = grid_checks.max(2);
    (0..n).all(|j| {
        let tau = horizon * j as f64 / (n - 1) as f64;
        warp_velocity(beta, tau) > WARP_VELOCITY_FLOOR
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn table_values() {
        assert_eq!(warp_eval(&[1.997], 1.0), 1.997);
        assert_abs_diff_eq!(warp_eval(&[2.128, -0.239], 1.0), 1.889, epsilon = 1e-12);
        assert_eq!(warp_eval(&[1.0], 0.37), 0.37);
        assert_eq!(warp_velocity(&[1.997], 0.3), 1.997);
        assert_abs_diff_eq!(warp_velocity(&[0.0, 1.0], 0.5), 1.0, epsilon = 1e-15);
        assert_eq!(warp_velocity_grad(3, 0.5), vec![1.0, 1.0, 0.75]);
        assert_eq!(warp_eval(&[], 0.4), 0.4);
        assert_eq!(warp_velocity(&[], 0.4), 1.0);
    }

    #[test]
    fn admissibility() {
        assert!(warp_is_admissible(&[1.0], 1.0, 100));
        assert!(!warp_is_admissible(&[-1.0], 1.0, 100));
        assert!(warp_is_admissible(&[2.043, 0.29, -0.221, -0.443], 1.0, 100));
        // v(1) = 1 - 2 < 0
        assert!(!warp_is_admissible(&[1.0, -1.0], 1.0, 100));
    }

    proptest! {
        #[test]
        fn zero_at_origin(beta in proptest::collection::vec(-10.0f64..10.0, 0..6)) {
            prop_assert_eq!(warp_eval(&beta, 0.0), 0.0);
        }

        #[test]
        fn velocity_is_derivative(beta in proptest::collection::vec(-3.0f64..3.0, 1..5), tau in 0.0f64..1.0) {
            let h = 1e-6;
            let fd = (warp_eval(&beta, tau + h) - warp_eval(&beta, tau - h)) / (2.0 * h);
            prop_assert!((fd - warp_velocity(&beta, tau)).abs() < 1e-6);
        }

        #[test]
        fn admissible_is_increasing(beta in proptest::collection::vec(-2.0f64..3.0, 1..5)) {
            if warp_is_admissible(&beta, 1.0, 100) {
                let grid: Vec<f64> = (0..=50).map(|k| warp_eval(&beta, k as f64 / 50.0)).collect();
                prop_assert!(grid.windows(2).all(|w| w[1] > w[0]));
            }
        }
    }
}
