use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Overlap weights of each output cell with the input cells along one axis.
fn box_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut taps = Vec::new();
            let mut i = a.floor() as usize;
            while (i as f64) < b && i < n_in {
                let overlap = (b.min((i + 1) as f64) - a.max(i as f64)) / scale;
                if overlap > 0.0 {
                    taps.push((i, overlap));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Area-averaging resize of an `(H, W, 3)` image.
pub fn resize_rgb<T: Scalar>(img: &Tensor<T>, width: usize, height: usize) -> Result<Tensor<T>> {
    let (h, w) = match *img.shape() {
        [h, w, 3] if h > 0 && w > 0 => (h, w),
        ref s => return Err(Error::shape("resize_rgb", format!("expected (H, W, 3), got {s:?}"))),
    };
    if width == 0 || height == 0 {
        return Err(Error::invalid("target extents must be positive"));
    }
    if (w, h) == (width, height) {
        return Ok(img.clone());
    }
    let (wx, wy) = (box_weights(w, width), box_weights(h, height));
    let d = img.data();
    let mut out = vec![T::zero(); height * width * 3];
    for (oy, ty) in wy.iter().enumerate() {
        for (ox, tx) in wx.iter().enumerate() {
            let mut acc = [0.0; 3];
            for &(iy, fy) in ty {
                for &(ix, fx) in tx {
                    for c in 0..3 {
                        acc[c] += fy * fx * d[(iy * w + ix) * 3 + c].f64();
                    }
                }
            }
            for c in 0..3 {
                out[(oy * width + ox) * 3 + c] = T::of(acc[c]);
            }
        }
    }
    Tensor::new(vec![height, width, 3], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_averages_blocks() {
        let img = Tensor::<f64>::from_fn([2, 4, 3], |i| (i / 3) as f64);
        let out = resize_rgb(&img, 2, 1).unwrap();
        // Block (0..2, 0..2) holds pixels 0, 1, 4, 5.
        assert_eq!(out.data(), &[2.5, 2.5, 2.5, 4.5, 4.5, 4.5]);
    }

    #[test]
    fn constant_stays_constant_for_fractional_factors() {
        let img = Tensor::<f64>::full([7, 5, 3], 0.3);
        let out = resize_rgb(&img, 3, 4).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
}
