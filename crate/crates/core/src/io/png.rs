use std::path::Path;

use image::{Rgb, RgbImage};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `round(255 · clamp(v, 0, 1))`
pub fn to_u8<T: Scalar>(v: T) -> u8 {
    (255.0 * v.f64().clamp(0.0, 1.0)).round() as u8
}

/// Writes an `(H, W, 3)` tensor as an 8-bit PNG.
pub fn save_rgb<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let (h, w) = match *img.shape() {
        [h, w, 3] => (h, w),
        ref s => return Err(Error::shape("save_png", format!("expected (H, W, 3), got {s:?}"))),
    };
    let d = img.data();
    let out = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = (y as usize * w + x as usize) * 3;
        Rgb([to_u8(d[i]), to_u8(d[i + 1]), to_u8(d[i + 2])])
    });
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    out.save(path)?;
    Ok(())
}

/// Reads any PNG as `(H, W, 3)` with values in `[0, 1]`.
pub fn load_rgb<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let img = image::open(path.as_ref())?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| T::of(b as f64 / 255.0)).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}
