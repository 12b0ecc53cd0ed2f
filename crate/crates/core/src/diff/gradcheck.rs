//! Central-difference gradient checking at 64-bit precision.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over the smooth coordinates.
    pub max_rel_err: f64,
    /// Coordinate with the worst error.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Coordinates where one-sided differences disagree (a kink inside ±eps).
    pub kinks: Vec<usize>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Compares an analytic gradient with central differences of `f` around `point`.
///
/// `f` returns the scalar value and, when asked, the analytic gradient. Only the
/// listed `coords` are perturbed (all of them when `None`). Relative error uses
/// `|a - n| / max(|a|, |n|, 1e-2 · max|a|, 1e-10)` so that coordinates with a
/// negligible gradient do not dominate through rounding noise.
pub fn finite_diff_check<F>(mut f: F, point: &Tensor<f64>, eps: f64, coords: Option<&[usize]>) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor<f64>, bool) -> Result<(f64, Option<Tensor<f64>>)>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let (f0, grad) = f(point, true)?;
    let grad = grad.ok_or_else(|| Error::invalid("analytic gradient not returned"))?;
    if grad.shape() != point.shape() {
        return Err(Error::shape("finite_diff_check", format!("gradient {:?} for point {:?}", grad.shape(), point.shape())));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let floor = (1e-2 * grad.max_abs()).max(1e-10);
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, checked: 0, kinks: Vec::new() };
    let mut x = point.clone();
    for &i in coords {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let fp = f(&x, false)?.0;
        x.data_mut()[i] = orig - eps;
        let fm = f(&x, false)?.0;
        x.data_mut()[i] = orig;

        let fwd = (fp - f0) / eps;
        let bwd = (f0 - fm) / eps;
        let side_scale = fwd.abs().max(bwd.abs()).max(floor);
        if (fwd - bwd).abs() > 1e-2 * side_scale && (fwd - bwd).abs() > 1e-6 {
            report.kinks.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let analytic = grad.data()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = rel;
            report.worst = Some(i);
        }
    }
    Ok(report)
}
