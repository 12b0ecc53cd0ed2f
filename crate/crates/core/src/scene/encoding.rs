use crate::diff::{Graph, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Width of the encoding of a 3-vector with `bands` frequency bands.
pub fn encoded_width(bands: usize) -> usize {
    3 + 6 * bands
}

/// `[x, sin(2⁰πx), cos(2⁰πx), …, sin(2ᵏπx), cos(2ᵏπx)]` for `x: [n, 3]`.
pub fn encode<T: Scalar>(g: &mut Graph<'_, T>, x: Var, bands: usize) -> Result<Var> {
    let mut out = x;
    for k in 0..bands {
        let f = T::of((1u64 << k) as f64 * std::f64::consts::PI);
        let a = g.affine(x, f, T::zero())?;
        let s = g.sin(a)?;
        let b = g.affine(x, f, T::FRAC_PI_2())?;
        let c = g.sin(b)?;
        out = g.concat_cols(out, s)?;
        out = g.concat_cols(out, c)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    #[test]
    fn layout_and_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![1, 3], vec![0.25, 0.0, 1.0]).unwrap());
        let e = encode(&mut g, x, 2).unwrap();
        assert_eq!(g.shape(e), &[1, encoded_width(2)]);
        let v = g.value(e).data();
        let pi = std::f64::consts::PI;
        assert_eq!(&v[..3], &[0.25, 0.0, 1.0]);
        assert!((v[3] - (0.25 * pi).sin()).abs() < 1e-15);
        assert!((v[6] - (0.25 * pi).cos()).abs() < 1e-15);
        assert!((v[9 + 3] - (0.5 * pi).cos()).abs() < 1e-15);
    }
}
