//! Central finite-difference gradient verification.

/// Central-difference estimate of `∇f` at `params`.
pub fn central_difference<F>(mut f: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Max over coordinates of `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// `max |a - n|` scaled by the largest magnitude in either vector (floored at 1e-8).
///
/// Preferred over the elementwise measure when some coordinates are tiny
/// compared to the rest of the block: there, central differences are dominated
/// by rounding in the loss and elementwise ratios stop meaning anything.
pub fn normwise_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / inf(analytic).max(inf(numeric)).max(1e-8)
}

/// Compares an analytic gradient with central differences of `f`.
pub fn finite_difference_gradcheck<F>(f: F, params: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    max_relative_error(analytic, &central_difference(f, params, eps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = [0.3, -1.7, 2.2, 0.0, 5.0];
        let f = |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        assert!(finite_difference_gradcheck(f, &p, &p, 1e-5) < 1e-9);
    }

    #[test]
    fn linear_sum_has_unit_gradient() {
        let p = [0.3, -1.7, 2.2];
        let f = |x: &[f64]| x.iter().sum::<f64>();
        assert!(finite_difference_gradcheck(f, &p, &[1.0; 3], 1e-5) < 1e-9);
    }

    #[test]
    fn normwise_ignores_noise_on_tiny_coordinates() {
        let a = [1.0, 1e-7];
        let n = [1.0, 1e-7 + 1e-11];
        assert!(max_relative_error(&a, &n) > 1e-5);
        assert!(normwise_relative_error(&a, &n) < 1e-10);
        assert!(normwise_relative_error(&[1.0, 0.5], &[1.0, 0.4]) > 0.09);
        assert_eq!(normwise_relative_error(&[0.0; 3], &[0.0; 3]), 0.0);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let p = [1.0, 2.0];
        let f = |x: &[f64]| x[0] * x[1];
        assert!(finite_difference_gradcheck(f, &p, &[2.0, 2.0], 1e-5) > 0.1);
    }
}
