//! Joint fit of density, UV mapping, appearance and inverse mapping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{cycle_loss, rec_loss};
use crate::diff::{adam_step, AdamState, Graph, Tensor};
use crate::error::{Error, Result};
use crate::eval::psnr;
use crate::geom::Vec3;
use crate::io::SceneDataset;
use crate::render::{render_image, trace, ColorSource, ImageSource, Ray, RenderOptions};
use crate::scalar::Scalar;
use crate::scene::{SceneConfig, SceneModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageIConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub lambda_rec: f64,
    pub lambda_cycle: f64,
    pub lr_voxels: f64,
    pub lr_mlp: f64,
    pub seed: u64,
    pub samples: usize,
    pub density_res: usize,
    pub uv_res: usize,
    pub color_threshold: f64,
}

impl Default for StageIConfig {
    fn default() -> Self {
        StageIConfig {
            iterations: 3000,
            batch_rays: 2048,
            lambda_rec: 1.0,
            lambda_cycle: 1.0,
            lr_voxels: 0.1,
            lr_mlp: 0.001,
            seed: 0,
            samples: 128,
            density_res: 64,
            uv_res: 64,
            color_threshold: 1e-4,
        }
    }
}

impl StageIConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lambda_rec, self.lr_voxels, self.lr_mlp];
        if positive.iter().any(|&v| !(v > 0.0)) || !(self.lambda_cycle >= 0.0) {
            return Err(Error::invalid("loss weights and learning rates must be positive"));
        }
        if self.batch_rays == 0 || self.samples == 0 {
            return Err(Error::invalid("batch size and samples per ray must be positive"));
        }
        Ok(())
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions { samples: self.samples, color_threshold: self.color_threshold, ..RenderOptions::default() }
    }

    fn lr_for(&self, name: &str) -> f64 {
        if name == "density" || name == "uv" {
            self.lr_voxels
        } else {
            self.lr_mlp
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRow {
    pub iteration: usize,
    pub rec: f64,
    pub cycle: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    pub model: SceneModel<T>,
    pub curve: Vec<LossRow>,
    /// Mean PSNR over held-out views, if the dataset has any.
    pub test_psnr: Option<f64>,
    /// Iteration whose loss was not finite; the model is the last finite state.
    pub diverged: Option<usize>,
}

/// One Adam step of the full objective on a ray batch. Returns `(rec, cycle)`.
pub fn stage1_step<T: Scalar>(
    model: &mut SceneModel<T>,
    adam: &mut AdamState<T>,
    rays: &[Ray],
    target: &[[f32; 3]],
    near: f64,
    far: f64,
    cfg: &StageIConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let opts = RenderOptions { stratified: true, ..cfg.render_options() };
    let (rec, cyc, grads) = {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, true);
        let traced = trace(&mut g, model, &vars, rays, near, far, &opts, ColorSource::Appearance, Some(rng))?;
        let tgt = g.constant(Tensor::new(vec![rays.len(), 3], target.iter().flatten().map(|&v| T::of(v as f64)).collect())?);
        let rec = rec_loss(&mut g, traced.rgb, tgt)?;
        let mut total = g.scale(rec, T::of(cfg.lambda_rec))?;
        let mut cyc = 0.0;
        if let Some(c) = cycle_loss(&mut g, model, &vars, &traced)? {
            cyc = g.value(c).item().f64();
            if cfg.lambda_cycle > 0.0 {
                let weighted = g.scale(c, T::of(cfg.lambda_cycle))?;
                total = g.add(total, weighted)?;
            }
        }
        let grads = g.backward_params(total, &model.params)?;
        (g.value(rec).item().f64(), cyc, grads)
    };
    adam_step(&mut model.params, &grads, adam)?;
    Ok((rec, cyc))
}

/// Uniformly sampled `(frame, pixel)` pairs over the training views.
fn sample_rays(ds: &SceneDataset, train: &[usize], n: usize, rng: &mut ChaCha8Rng) -> (Vec<Ray>, Vec<[f32; 3]>) {
    let px = ds.manifest.width * ds.manifest.height;
    let mut rays = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        let f = train[rng.gen_range(0..train.len())];
        let p = rng.gen_range(0..px);
        rays.push(ds.camera(f).ray(p));
        let d = ds.images[f].data();
        colors.push([d[3 * p], d[3 * p + 1], d[3 * p + 2]]);
    }
    (rays, colors)
}

pub fn init_model<T: Scalar>(ds: &SceneDataset, cfg: &StageIConfig) -> Result<SceneModel<T>> {
    SceneModel::new(SceneConfig::new(ds.bbox()).with_resolution(cfg.density_res, cfg.uv_res), cfg.seed)
}

/// Stage I. `progress` sees every loss row as it is produced.
pub fn fit_scene(ds: &SceneDataset, cfg: &StageIConfig, mut progress: impl FnMut(&LossRow)) -> Result<FitResult<f32>> {
    cfg.validate()?;
    let train = ds.train();
    if train.len() < 2 {
        return Err(Error::invalid("at least 2 training views are required"));
    }
    let mut model = init_model::<f32>(ds, cfg)?;
    let mut adam = AdamState::with_rates(&model.params, |n| cfg.lr_for(n));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (near, far) = (ds.manifest.near, ds.manifest.far);
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut diverged = None;
    for it in 0..cfg.iterations {
        let (rays, colors) = sample_rays(ds, &train, cfg.batch_rays, &mut rng);
        let backup = model.params.clone();
        let step = stage1_step(&mut model, &mut adam, &rays, &colors, near, far, cfg, &mut rng);
        let (rec, cycle) = match step {
            Ok(v) if v.0.is_finite() && v.1.is_finite() && model.params.ids().all(|id| model.params.get(id).all_finite()) => v,
            Ok(_) | Err(Error::NonFinite { .. }) => {
                model.params = backup;
                diverged = Some(it);
                break;
            }
            Err(e) => return Err(e),
        };
        let row = LossRow { iteration: it, rec, cycle, total: cfg.lambda_rec * rec + cfg.lambda_cycle * cycle };
        progress(&row);
        curve.push(row);
    }
    let test_psnr = test_psnr(&model, ds, &cfg.render_options())?;
    Ok(FitResult { model, curve, test_psnr, diverged })
}

/// Mean PSNR of appearance renders over the held-out views.
pub fn test_psnr<T: Scalar>(model: &SceneModel<T>, ds: &SceneDataset, opts: &RenderOptions) -> Result<Option<f64>> {
    let test = ds.test();
    if test.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &f in &test {
        let img = render_image(model, &ds.camera(f), ImageSource::Appearance, opts)?;
        total += psnr(&img.rgb.cast::<f32>(), &ds.images[f])?.min(100.0);
    }
    Ok(Some(total / test.len() as f64))
}

/// Per-ray weighted round-trip error `Σ wᵢ eᵢ / Σ wᵢ` for rays whose weights
/// sum above one half (rays that hit a surface).
pub fn surface_cycle_errors<T: Scalar>(model: &SceneModel<T>, rays: &[Ray], near: f64, far: f64, opts: &RenderOptions) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for chunk in rays.chunks(opts.chunk.max(1)) {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let traced = trace(&mut g, model, &vars, chunk, near, far, opts, ColorSource::Appearance, None)?;
        let (Some(s), Some(w)) = (traced.colored.s, traced.weights) else { continue };
        let mapped = model.inverse_at(&mut g, &vars, s)?;
        let mv = g.value(mapped).data();
        let wv = g.value(w).data();
        let ws = g.value(traced.weight_sum).data();
        let c = &traced.colored;
        for r in 0..chunk.len() {
            if ws[r].f64() <= 0.5 {
                continue;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for k in c.offsets[r]..c.offsets[r + 1] {
                let i = c.samples[k];
                let p: Vec3 = traced.batch.positions[i];
                let e = (0..3).map(|a| (p[a] - mv[3 * k + a].f64()).powi(2)).sum::<f64>().sqrt();
                num += wv[i].f64() * e;
                den += wv[i].f64();
            }
            if den > 0.0 {
                out.push(num / den);
            }
        }
    }
    Ok(out)
}
