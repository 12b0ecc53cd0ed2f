//! Rays, depth sampling, emission–absorption compositing and image rendering.

pub mod camera;
pub mod composite;
pub mod trace;

pub use camera::{Camera, Ray};
pub use composite::{composite, expected_depth, sample_depths, Composite};
pub use trace::{trace, traced_depth, ColorSource, Colored, RenderOptions, SampleBatch, Traced};

use crate::cubemap::Cubemap;
use crate::diff::{Graph, Tensor};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::scene::SceneModel;

/// Weight sums at or below this mark a pixel's depth as invalid.
pub const DEPTH_EPS: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct RenderedImage<T> {
    /// `(H, W, 3)`
    pub rgb: Tensor<T>,
    /// `(H, W)` accumulated weights.
    pub weight_sum: Tensor<T>,
    /// `(H, W)` expected ray distance, `-1` where invalid.
    pub depth: Tensor<T>,
}

pub enum ImageSource<'c, T> {
    Appearance,
    Cubemap(&'c Cubemap<T>),
}

/// Renders every pixel of `camera`, in chunks of `opts.chunk` rays.
pub fn render_image<T: Scalar>(
    model: &SceneModel<T>,
    camera: &Camera,
    source: ImageSource<'_, T>,
    opts: &RenderOptions,
) -> Result<RenderedImage<T>> {
    render_pixels(model, camera, &(0..camera.pixel_count()).collect::<Vec<_>>(), source, opts)
}

/// Renders the listed pixels (in any order) into a full-size image; pixels not
/// listed stay at the background with zero weight.
pub fn render_pixels<T: Scalar>(
    model: &SceneModel<T>,
    camera: &Camera,
    pixels: &[usize],
    source: ImageSource<'_, T>,
    opts: &RenderOptions,
) -> Result<RenderedImage<T>> {
    camera.validate()?;
    let (h, w) = (camera.height, camera.width);
    let mut rgb = Tensor::from_fn([h, w, 3], |i| T::of(opts.background[i % 3]));
    let mut wsum = Tensor::zeros([h, w]);
    let mut depth = Tensor::full([h, w], -T::one());
    let rays = camera.generate_rays(pixels)?;
    for chunk in rays.chunks(opts.chunk.max(1)) {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let src = match source {
            ImageSource::Appearance => ColorSource::Appearance,
            ImageSource::Cubemap(c) => ColorSource::Cubemap(g.constant_ref(c.tensor())),
        };
        let traced = trace(&mut g, model, &vars, chunk, camera.near, camera.far, opts, src, None)?;
        let c = g.value(traced.rgb).data();
        let ws = g.value(traced.weight_sum).data();
        let ds = traced_depth(&g, &traced, DEPTH_EPS);
        for (k, ray) in chunk.iter().enumerate() {
            let p = ray.pixel;
            rgb.data_mut()[3 * p..3 * p + 3].copy_from_slice(&c[3 * k..3 * k + 3]);
            wsum.data_mut()[p] = ws[k];
            if let Some(d) = ds[k] {
                depth.data_mut()[p] = T::of(d);
            }
        }
    }
    Ok(RenderedImage { rgb, weight_sum: wsum, depth })
}
