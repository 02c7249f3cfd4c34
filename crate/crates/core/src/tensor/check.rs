use super::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function.
///
/// Each coordinate is perturbed by `±h` in turn; the estimate is
/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::contract(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!(
                "function is not finite around coordinate {i}"
            )));
        }
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Norm-wise relative error `max|a − b| / max|b|`.
///
/// When the reference is exactly zero the absolute error is returned.
pub fn rel_err(actual: &Tensor, reference: &Tensor) -> f64 {
    let diff = actual
        .data()
        .iter()
        .zip(reference.data())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = reference.max_abs();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_one() {
        let g = finite_diff_grad(|x| Ok(x.data()[0].powi(2)), &Tensor::scalar(1.0), 1e-5).unwrap();
        assert!((g.item().unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_function() {
        let x = Tensor::vector(vec![0.3, -1.2, 5.0]);
        let g = finite_diff_grad(|_| Ok(4.2), &x, 1e-5).unwrap();
        assert_eq!(g, Tensor::zeros(&[3]));
    }

    #[test]
    fn linear_sum_gives_ones() {
        let x = Tensor::vector(vec![0.1, -0.7, 2.5, 9.0]);
        let g = finite_diff_grad(|x| Ok(x.sum()), &x, 1e-5).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let x = Tensor::scalar(0.0);
        let r = finite_diff_grad(|_| Ok(f64::NAN), &x, 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(finite_diff_grad(|x| Ok(x.sum()), &Tensor::scalar(1.0), 0.0).is_err());
    }
}
