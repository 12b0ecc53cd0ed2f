use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `10·log10(1 / MSE)` for images in `[0, 1]`; `+∞` for identical images.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x.f64() - y.f64()).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}
