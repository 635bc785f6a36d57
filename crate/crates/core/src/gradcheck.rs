//! Central finite differences for checking tape gradients.
//!
//! Nothing here touches the tape: the oracle evaluates a plain closure at
//! perturbed inputs.

/// Default half-step for central differences.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`.
pub fn numerical_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Worst elementwise relative error between two gradient vectors.
///
/// Each element is compared relative to `max(|a|, |b|, floor)` where the
/// floor is `1e-3` of the larger vector's max-norm, so entries that are
/// numerically zero next to large ones do not dominate.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale + 1e-10;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g = numerical_gradient(&mut f, &[2.0, -1.0], DEFAULT_STEP);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(max_relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        let e = max_relative_error(&[1.0, 1e-9], &[1.0, 0.0]);
        assert!(e < 1e-5, "{e}");
        let e = max_relative_error(&[2.0], &[1.0]);
        assert!((e - 0.5).abs() < 1e-12);
    }
}
