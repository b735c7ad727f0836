//! Composite trapezoid quadrature on sample grids.

/// Trapezoid weights for (possibly nonuniform) increasing abscissae.
/// A single node gets weight zero; callers with one sample handle that case.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for k in 1..n {
        let dt = times[k] - times[k - 1];
        w[k - 1] += 0.5 * dt;
        w[k] += 0.5 * dt;
    }
    w
}

pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(times.len(), values.len());
    trapezoid_weights(times)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

/// A trapezoid value together with the same rule applied on every second
/// node, and the Richardson estimate of the fine-grid error
/// (`value - exact ≈ error_estimate`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureEstimate {
    pub value: f64,
    pub coarse: f64,
    pub error_estimate: f64,
}

/// Returns `None` unless the node count is odd and at least 3, so that the
/// coarse grid shares both endpoints.
pub fn trapezoid_richardson(times: &[f64], values: &[f64]) -> Option<QuadratureEstimate> {
    let n = times.len();
    if n < 3 || n % 2 == 0 {
        return None;
    }
    let value = trapezoid(times, values);
    let ct: Vec<f64> = times.iter().step_by(2).copied().collect();
    let cv: Vec<f64> = values.iter().step_by(2).copied().collect();
    let coarse = trapezoid(&ct, &cv);
    Some(QuadratureEstimate {
        value,
        coarse,
        error_estimate: (coarse - value) / 3.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_length() {
        let t: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let s: f64 = trapezoid_weights(&t).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_on_linear() {
        let t = [0.0, 0.5, 1.5, 2.0];
        let v: Vec<f64> = t.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((trapezoid(&t, &v) - 8.0).abs() < 1e-14);
    }

    #[test]
    fn richardson_estimates_quadratic_error() {
        let t: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let v: Vec<f64> = t.iter().map(|x| x * x).collect();
        let q = trapezoid_richardson(&t, &v).unwrap();
        // exact 1/3; the estimate recovers the fine-grid error exactly for x².
        assert!((q.value - q.error_estimate - 1.0 / 3.0).abs() < 1e-14);
        assert!(trapezoid_richardson(&t[..20], &v[..20]).is_none());
    }
}
