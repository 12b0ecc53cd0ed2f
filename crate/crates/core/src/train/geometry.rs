use crate::cubemap::texel_coords;
use crate::diff::{bilinear_taps, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::render::{trace, Camera, ColorSource, RenderOptions};
use crate::scalar::Scalar;
use crate::scene::SceneModel;

/// The frozen scene's rendering of one view as a sparse linear map from cubemap
/// texels to pixels: `pixel = Σ coeff · texel + background`.
#[derive(Clone, Debug)]
pub struct GeometryCache<T> {
    pub width: usize,
    pub height: usize,
    pub face_res: usize,
    texels: Vec<u32>,
    coeffs: Vec<T>,
    /// Per-pixel ranges into `texels`.
    offsets: Vec<usize>,
    /// `[h·w, 3]` background contribution.
    background: Tensor<T>,
}

impl<T: Scalar> GeometryCache<T> {
    pub fn build(model: &SceneModel<T>, camera: &Camera, face_res: usize, opts: &RenderOptions) -> Result<Self> {
        let rays = camera.all_rays();
        let blank = Tensor::zeros([6, face_res, face_res, 3]);
        let mut texels = Vec::new();
        let mut coeffs = Vec::new();
        let mut offsets = vec![0];
        let mut background = Vec::with_capacity(rays.len() * 3);
        let mut merged: Vec<(u32, T)> = Vec::new();
        for chunk in rays.chunks(opts.chunk.max(1)) {
            let mut g = Graph::new();
            let vars = model.bind(&mut g, false);
            let cube = g.constant_ref(&blank);
            let traced = trace(&mut g, model, &vars, chunk, camera.near, camera.far, opts, ColorSource::Cubemap(cube), None)?;
            background.extend_from_slice(g.value(traced.rgb).data());
            let c = &traced.colored;
            let (sv, wv) = match (c.s, traced.weights) {
                (Some(s), Some(w)) => (g.value(s).data().to_vec(), g.value(w).data().to_vec()),
                _ => (vec![], vec![]),
            };
            for r in 0..chunk.len() {
                merged.clear();
                for k in c.offsets[r]..c.offsets[r + 1] {
                    let p = [sv[3 * k].f64(), sv[3 * k + 1].f64(), sv[3 * k + 2].f64()];
                    let (face, x, y) = texel_coords(face_res, p);
                    let (idx, wts) = bilinear_taps(face_res, face_res, T::of(x), T::of(y));
                    let base = (face * face_res * face_res) as u32;
                    for (i, wt) in idx.iter().zip(wts) {
                        merged.push((base + i, wv[c.samples[k]] * wt));
                    }
                }
                merged.sort_by_key(|e| e.0);
                for &(i, v) in &merged {
                    match texels.last() {
                        Some(&last) if last == i && texels.len() > *offsets.last().unwrap() => {
                            *coeffs.last_mut().unwrap() += v;
                        }
                        _ => {
                            texels.push(i);
                            coeffs.push(v);
                        }
                    }
                }
                offsets.push(texels.len());
            }
        }
        Ok(GeometryCache {
            width: camera.width,
            height: camera.height,
            face_res,
            texels,
            coeffs,
            offsets,
            background: Tensor::new(vec![rays.len(), 3], background)?,
        })
    }

    pub fn entries(&self) -> usize {
        self.texels.len()
    }

    /// Total rendering weight each texel receives over the view, `6·F·F` long.
    pub fn texel_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; 6 * self.face_res * self.face_res];
        for (&t, &c) in self.texels.iter().zip(&self.coeffs) {
            w[t as usize] += c.f64();
        }
        w
    }

    /// Renders with `cube: [6, F, F, 3]` as colour source; result `[h·w, 3]`.
    pub fn render<'a>(&'a self, g: &mut Graph<'a, T>, cube: Var) -> Result<Var> {
        if g.shape(cube) != [6, self.face_res, self.face_res, 3] {
            return Err(Error::shape("geometry render", format!("cubemap {:?} for face resolution {}", g.shape(cube), self.face_res)));
        }
        let bg = g.constant_ref(&self.background);
        if self.texels.is_empty() {
            return Ok(bg);
        }
        let taps = g.interp(cube, 3, 1, self.texels.clone(), self.coeffs.clone())?;
        let per_pixel = g.segment_sum(taps, self.offsets.clone())?;
        g.add(per_pixel, bg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubemap::Cubemap;
    use crate::geom::Aabb;
    use crate::render::{render_image, ImageSource};
    use crate::scene::SceneConfig;

    #[test]
    fn cached_render_matches_renderer() {
        let mut m = SceneModel::<f64>::new(SceneConfig::new(Aabb::cube(1.0)).with_resolution(6, 5), 3).unwrap();
        let id = m.density;
        let raw = Tensor::from_fn(m.params.get(id).shape().to_vec(), |i| 3.0 + 4.0 * ((i as f64) * 0.7).sin());
        m.params.set(id, raw).unwrap();
        let cam = Camera::look_at([0.3, 0.5, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 8, 6, 8.0, 0.5, 5.0);
        let cube = Cubemap::from_tensor(Tensor::from_fn([6, 4, 4, 3], |i| 0.5 + 0.5 * (i as f64 * 1.3).sin())).unwrap();
        let opts = RenderOptions { samples: 24, ..RenderOptions::default() };
        let direct = render_image(&m, &cam, ImageSource::Cubemap(&cube), &opts).unwrap();
        let cache = GeometryCache::build(&m, &cam, 4, &opts).unwrap();
        assert!(cache.entries() > 0);
        let total: f64 = cache.texel_weights().iter().sum();
        let covered: f64 = direct.weight_sum.data().iter().sum();
        assert!(total > 0.0 && total <= covered + 1e-9, "{total} vs {covered}");
        let mut g = Graph::new();
        let c = g.constant_ref(cube.tensor());
        let out = cache.render(&mut g, c).unwrap();
        for (a, b) in g.value(out).data().iter().zip(direct.rgb.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
