use crate::error::{Error, Result};
use crate::tensor::TensorValue;

/// Central-difference estimate of the gradient of a scalar function:
/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` for every coordinate `i`.
///
/// Used as an independent oracle for [`Tape::backward`](super::Tape::backward).
pub fn finite_difference_gradient<F>(mut f: F, theta: &TensorValue, step: f64) -> Result<TensorValue>
where
    F: FnMut(&TensorValue) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = theta.clone();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let x = theta.data()[i];
        probe.data_mut()[i] = x + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = x - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = x;
        for value in [plus, minus] {
            if !value.is_finite() {
                return Err(Error::NonFiniteObjective { coordinate: i, value });
            }
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    TensorValue::new(theta.shape().clone(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_difference_gradient(|t| Ok(t.data()[0].powi(2)), &TensorValue::from_slice(&[3.0]), 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_difference_gradient(|_| Ok(4.2), &TensorValue::from_slice(&[1.0, -2.0, 0.5]), 1e-5).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_reports_coordinate() {
        let theta = TensorValue::from_slice(&[1.0, 1e-6]);
        let err = finite_difference_gradient(|t| Ok(t.data()[1].ln()), &theta, 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFiniteObjective { coordinate: 1, .. }), "{err:?}");
    }

    #[test]
    fn rejects_bad_step() {
        assert!(finite_difference_gradient(|_| Ok(0.0), &TensorValue::scalar(1.0), 0.0).is_err());
    }
}
