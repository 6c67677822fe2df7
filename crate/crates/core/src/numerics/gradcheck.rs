use crate::error::{shape_err, Error, Result};

/// Largest relative discrepancy between `analytic` and central differences of
/// `loss` around `point`, using `|a - d| / (|a| + |d| + 1e-12)` per coordinate.
pub fn finite_difference_check<F>(mut loss: F, analytic: &[f64], point: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    if analytic.len() != point.len() {
        return Err(shape_err("analytic gradient length differs from the point"));
    }
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        probe[i] = point[i] + epsilon;
        let up = loss(&probe);
        probe[i] = point[i] - epsilon;
        let down = loss(&probe);
        probe[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_quadratics() {
        let p = [0.3, -1.2, 4.0, 0.0];
        let disc = finite_difference_check(|q| 0.5 * q.iter().map(|v| v * v).sum::<f64>(), &p, &p, 1e-5).unwrap();
        assert!(disc < 1e-8, "{disc}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let p = [1.0, 2.0];
        let disc = finite_difference_check(|q| q[0] * q[0] + q[1], &[2.0, 2.0], &p, 1e-5).unwrap();
        assert!(disc > 0.3);
    }

    #[test]
    fn rejects_bad_epsilon_and_non_finite() {
        assert!(finite_difference_check(|q| q[0], &[1.0], &[0.0], 1.0).is_err());
        assert!(finite_difference_check(|q| q[0], &[1.0], &[0.0], 1e-9).is_err());
        let r = finite_difference_check(|q| q[0].ln(), &[1.0], &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
