//! Differentiable rendering of a ray batch inside a [`Graph`].

use rand_chacha::ChaCha8Rng;

use super::camera::Ray;
use super::composite::sample_depths;
use crate::cubemap::texel_coords;
use crate::diff::{Graph, Tensor, Var};
use crate::error::Result;
use crate::geom::{self, Vec3};
use crate::scalar::Scalar;
use crate::scene::{SceneModel, SceneVars, UV_DEGENERATE};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub samples: usize,
    pub stratified: bool,
    /// Samples with a smaller contribution weight skip the colour (and cycle)
    /// evaluation; their weight still counts against the background.
    pub color_threshold: f64,
    pub background: [f64; 3],
    /// Rays per graph when rendering whole images.
    pub chunk: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { samples: 128, stratified: false, color_threshold: 1e-4, background: [1.0; 3], chunk: 4096 }
    }
}

impl RenderOptions {
    /// Deterministic, no pruning: what gradient checks need.
    pub fn exact(samples: usize) -> Self {
        RenderOptions { samples, stratified: false, color_threshold: 0.0, ..Self::default() }
    }
}

/// Where per-sample colour comes from.
#[derive(Clone, Copy, Debug)]
pub enum ColorSource {
    Appearance,
    /// A `(6, F, F, 3)` cubemap node of the same graph, looked up by sphere point.
    Cubemap(Var),
}

/// Samples that fall inside the bounding box, grouped by ray.
#[derive(Clone, Debug, Default)]
pub struct SampleBatch {
    pub positions: Vec<Vec3>,
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub dirs: Vec<Vec3>,
    /// `offsets[r]..offsets[r + 1]` are the samples of ray `r`.
    pub offsets: Vec<usize>,
}

impl SampleBatch {
    pub fn build(
        rays: &[Ray],
        near: f64,
        far: f64,
        bbox: &geom::Aabb,
        samples: usize,
        mut jitter: Option<&mut ChaCha8Rng>,
    ) -> Result<Self> {
        let mut b = SampleBatch { offsets: vec![0], ..Default::default() };
        for ray in rays {
            let (t, delta) = sample_depths(near, far, samples, jitter.as_deref_mut())?;
            if let Some((t0, t1)) = bbox.intersect(ray.origin, ray.dir) {
                for (ti, di) in t.into_iter().zip(delta) {
                    if ti < t0 || ti > t1 {
                        continue;
                    }
                    let p = ray.at(ti);
                    if !bbox.contains(p) {
                        continue;
                    }
                    b.positions.push(p);
                    b.t.push(ti);
                    b.delta.push(di);
                    b.dirs.push(ray.dir);
                }
            }
            b.offsets.push(b.positions.len());
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn rays(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Samples that received a colour.
#[derive(Clone, Debug, Default)]
pub struct Colored {
    /// Indices into the [`SampleBatch`], ascending.
    pub samples: Vec<usize>,
    /// Per-ray ranges into `samples`.
    pub offsets: Vec<usize>,
    /// Unit sphere points `[k, 3]`, absent when nothing was coloured.
    pub s: Option<Var>,
}

pub struct Traced {
    /// `[r, 3]`
    pub rgb: Var,
    /// `[r]`
    pub weight_sum: Var,
    /// `[n]` over the sample batch, absent when no sample is inside the box.
    pub weights: Option<Var>,
    pub batch: SampleBatch,
    pub colored: Colored,
}

fn vector<T: Scalar>(v: &[f64]) -> Result<Tensor<T>> {
    Tensor::new(vec![v.len()], v.iter().map(|&x| T::of(x)).collect())
}

/// Renders a ray batch. Colour is evaluated only for samples whose weight
/// reaches the threshold and whose UV vector can be normalized.
pub fn trace<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    model: &SceneModel<T>,
    vars: &SceneVars,
    rays: &[Ray],
    near: f64,
    far: f64,
    opts: &RenderOptions,
    source: ColorSource,
    jitter: Option<&mut ChaCha8Rng>,
) -> Result<Traced> {
    let r = rays.len();
    let batch = SampleBatch::build(rays, near, far, &model.config.bbox, opts.samples, jitter)?;
    let bg_rows = g.constant(Tensor::from_fn([r, 3], |i| T::of(opts.background[i % 3])));
    if batch.is_empty() {
        let weight_sum = g.constant(Tensor::zeros([r]));
        return Ok(Traced {
            rgb: bg_rows,
            weight_sum,
            weights: None,
            batch,
            colored: Colored { samples: vec![], offsets: vec![0; r + 1], s: None },
        });
    }

    let sigma = model.density_at(g, vars, &batch.positions)?;
    let delta = g.constant(vector(&batch.delta)?);
    let tau = g.mul(sigma, delta)?;
    let before = g.segment_excl_cumsum(tau, batch.offsets.clone())?;
    let neg = g.neg(before)?;
    let trans = g.exp(neg)?;
    let neg_tau = g.neg(tau)?;
    let keep = g.exp(neg_tau)?;
    let alpha = g.affine(keep, -T::one(), T::one())?;
    let w = g.mul(trans, alpha)?;
    let weight_sum = g.segment_sum(w, batch.offsets.clone())?;

    let residual = g.affine(weight_sum, -T::one(), T::one())?;
    let residual = g.broadcast_cols(residual, 3)?;
    let bg = g.mul(residual, bg_rows)?;

    let thresh = T::of(opts.color_threshold);
    let wv = g.value(w).data();
    let candidates: Vec<usize> = (0..batch.len()).filter(|&i| wv[i] >= thresh).collect();
    let mut colored = Colored { samples: vec![], offsets: vec![0], s: None };
    let mut rgb = bg;
    if !candidates.is_empty() {
        let cand_pos: Vec<Vec3> = candidates.iter().map(|&i| batch.positions[i]).collect();
        let raw = model.uv_raw_at(g, vars, &cand_pos)?;
        let rv = g.value(raw).data();
        let ok: Vec<usize> = (0..candidates.len())
            .filter(|&k| {
                let n = (rv[3 * k] * rv[3 * k] + rv[3 * k + 1] * rv[3 * k + 1] + rv[3 * k + 2] * rv[3 * k + 2]).sqrt();
                n.f64() >= UV_DEGENERATE
            })
            .collect();
        colored.samples = ok.iter().map(|&k| candidates[k]).collect();
        let mut cursor = 0;
        for ray in 0..r {
            while cursor < colored.samples.len() && colored.samples[cursor] < batch.offsets[ray + 1] {
                cursor += 1;
            }
            colored.offsets.push(cursor);
        }
        if !ok.is_empty() {
            let raw = if ok.len() == candidates.len() { raw } else { g.gather_rows(raw, &ok)? };
            let s = g.normalize_rows(raw)?;
            colored.s = Some(s);
            let color = match source {
                ColorSource::Appearance => {
                    let dirs: Vec<Vec3> = colored.samples.iter().map(|&i| batch.dirs[i]).collect();
                    model.appearance_at(g, vars, s, &dirs)?
                }
                ColorSource::Cubemap(cube) => {
                    let f = g.shape(cube)[1];
                    let sv = g.value(s).data();
                    let queries: Vec<(usize, T, T)> = (0..ok.len())
                        .map(|k| {
                            let p = [sv[3 * k].f64(), sv[3 * k + 1].f64(), sv[3 * k + 2].f64()];
                            let (face, x, y) = texel_coords(f, p);
                            (face, T::of(x), T::of(y))
                        })
                        .collect();
                    g.bilinear(cube, &queries)?
                }
            };
            let wk = g.gather(w, colored.samples.clone(), vec![colored.samples.len()])?;
            let wk = g.broadcast_cols(wk, 3)?;
            let wc = g.mul(wk, color)?;
            let per_ray = g.segment_sum(wc, colored.offsets.clone())?;
            rgb = g.add(per_ray, bg)?;
        }
    } else {
        colored.offsets = vec![0; r + 1];
    }
    Ok(Traced { rgb, weight_sum, weights: Some(w), batch, colored })
}

/// Per-ray expected depth from a traced batch; `None` where the weights sum to ≤ `eps`.
pub fn traced_depth<T: Scalar>(g: &Graph<'_, T>, traced: &Traced, eps: f64) -> Vec<Option<f64>> {
    let Some(w) = traced.weights else { return vec![None; traced.batch.rays()] };
    let wv = g.value(w).data();
    traced
        .batch
        .offsets
        .windows(2)
        .map(|s| {
            let ws: Vec<f64> = wv[s[0]..s[1]].iter().map(|v| v.f64()).collect();
            super::composite::expected_depth(&ws, &traced.batch.t[s[0]..s[1]], eps)
        })
        .collect()
}
