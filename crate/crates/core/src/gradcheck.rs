//! Central finite-difference checking of analytic gradients.

use crate::error::{IleError, Result};
use crate::tensor::Tensor;

/// Compares the gradient returned by `f` at `params` against central
/// differences with step `h`.
///
/// `f` returns `(value, gradient)`; the gradient is only read at the base
/// point. Returns the largest `|analytic − numeric| / max(1, |numeric|)`
/// over every coordinate of every parameter.
pub fn finite_diff_check<F>(mut f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    let (_, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(IleError::Shape(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut probe: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (p, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[p].shape() {
            return Err(IleError::Shape(format!("gradient {p} has the wrong shape")));
        }
        for i in 0..params[p].numel() {
            let x = params[p].data()[i];
            probe[p].data_mut()[i] = x + h;
            let (fp, _) = f(&probe)?;
            probe[p].data_mut()[i] = x - h;
            let (fm, _) = f(&probe)?;
            probe[p].data_mut()[i] = x;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(IleError::Numeric("finite_diff_check evaluation".into()));
            }
            let numeric = (fp - fm) / (2.0 * h);
            let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(p: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        // f = Σ (i+1)·x_i² + x_0 x_1
        let x = p[0].data();
        let mut v = x[0] * x[1];
        let mut g = vec![0.0; x.len()];
        for (i, &xi) in x.iter().enumerate() {
            v += (i as f64 + 1.0) * xi * xi;
            g[i] = 2.0 * (i as f64 + 1.0) * xi;
        }
        g[0] += x[1];
        g[1] += x[0];
        Ok((v, vec![Tensor::column(g)?]))
    }

    #[test]
    fn exact_for_quadratics() {
        let p = vec![Tensor::column(vec![0.3, -1.2, 2.5]).unwrap()];
        let err = finite_diff_check(quad, &p, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_planted_fault() {
        // f = 5x² at x = 3: g = 30, reported 33.
        let wrong = |p: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let x = p[0].item();
            Ok((5.0 * x * x, vec![Tensor::scalar(1.1 * 10.0 * x)]))
        };
        let err = finite_diff_check(wrong, &[Tensor::scalar(3.0)], 1e-5).unwrap();
        assert!((err - 0.1).abs() < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let f = |p: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let x = p[0].item();
            let v = if x > 1.0 { f64::INFINITY } else { x };
            Ok((v, vec![Tensor::scalar(1.0)]))
        };
        assert!(finite_diff_check(f, &[Tensor::scalar(1.0)], 1e-3).is_err());
    }
}
