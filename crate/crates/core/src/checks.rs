//! Finite-difference audits of the differentiable paths at 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diff::{finite_diff_check, GradCheckReport, Graph, ParamId, Tensor};
use crate::error::{Error, Result};
use crate::geom::Aabb;
use crate::render::{trace, Camera, ColorSource, Ray, RenderOptions};
use crate::scene::{SceneConfig, SceneModel};
use crate::stylizer::{noise_content, StyleStats, StylizerNet};
use crate::train::{cycle_loss, gas_loss, rec_loss, GeometryCache};

pub const GRAD_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Render,
    Stylizer,
    Losses,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "render" => Ok(Suite::Render),
            "stylizer" => Ok(Suite::Stylizer),
            "losses" => Ok(Suite::Losses),
            _ => Err(Error::invalid(format!("unknown gradient suite `{s}` (render, stylizer, losses)"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub checked: usize,
    pub kinks: usize,
    pub passed: bool,
}

impl CheckOutcome {
    fn from(name: &'static str, r: GradCheckReport) -> Self {
        CheckOutcome { name, max_rel_err: r.max_rel_err, checked: r.checked, kinks: r.kinks.len(), passed: r.passes(GRAD_TOLERANCE) }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckOutcome>> {
    match suite {
        Suite::Render => Ok(vec![pixel_vs_density(seed)?, pixel_vs_texel(seed)?]),
        Suite::Stylizer => Ok(vec![stylized_vs_prompt(seed)?]),
        Suite::Losses => Ok(vec![gas_vs_prompt(seed)?, cycle_vs_uv(seed)?, rec_vs_density(seed)?]),
    }
}

/// A small f64 scene with a lumpy, partly opaque density field.
fn toy_scene(seed: u64) -> Result<SceneModel<f64>> {
    let mut m = SceneModel::new(SceneConfig::new(Aabb::cube(1.0)).with_resolution(6, 5), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = m.density;
    let raw = Tensor::from_fn(m.params.get(id).shape().to_vec(), |_| rng.gen_range(2.0..6.0));
    m.params.set(id, raw)?;
    let id = m.uv;
    let uv = m.params.get(id).map(|v| v * 1.0);
    let jitter = Tensor::from_fn(uv.shape().to_vec(), |i| uv.data()[i] + rng.gen_range(-0.2..0.2));
    m.params.set(id, jitter)?;
    Ok(m)
}

fn toy_camera(w: usize, h: usize) -> Camera {
    Camera::look_at([0.4, 0.3, 2.6], [0.0; 3], [0.0, 1.0, 0.0], w, h, w as f64, 0.5, 4.5)
}

fn opts() -> RenderOptions {
    RenderOptions::exact(32)
}

/// Coordinates with the largest analytic gradients plus a few random ones.
fn pick_coords(grad: &Tensor<f64>, rng: &mut ChaCha8Rng, top: usize, random: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..grad.len()).collect();
    order.sort_by(|&a, &b| grad.data()[b].abs().total_cmp(&grad.data()[a].abs()));
    let mut out: Vec<usize> = order.into_iter().take(top).collect();
    for _ in 0..random {
        out.push(rng.gen_range(0..grad.len()));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Value and optional gradient of `loss(model)` with respect to one parameter.
fn param_check(
    name: &'static str,
    mut model: SceneModel<f64>,
    id: ParamId,
    seed: u64,
    loss: impl Fn(&SceneModel<f64>) -> Result<(f64, Option<Tensor<f64>>)>,
) -> Result<CheckOutcome> {
    let point = model.params.get(id).clone();
    let mut f = |x: &Tensor<f64>, want: bool| {
        model.params.set(id, x.clone())?;
        let (v, g) = loss(&model)?;
        Ok((v, if want { g } else { None }))
    };
    let (_, grad) = f(&point, true)?;
    let grad = grad.ok_or_else(|| Error::invalid("no gradient"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = pick_coords(&grad, &mut rng, 24, 8);
    Ok(CheckOutcome::from(name, finite_diff_check(f, &point, EPS, Some(&coords))?))
}

fn grad_of(model: &SceneModel<f64>, grads: Vec<Tensor<f64>>, id: ParamId) -> Tensor<f64> {
    let _ = model;
    grads.into_iter().nth(id.index()).expect("one gradient per parameter")
}

fn pixel_rays(cam: &Camera, pixels: &[usize]) -> Result<Vec<Ray>> {
    cam.generate_rays(pixels)
}

pub fn pixel_vs_density(seed: u64) -> Result<CheckOutcome> {
    let model = toy_scene(seed)?;
    let id = model.density;
    let cam = toy_camera(4, 3);
    let rays = pixel_rays(&cam, &[5])?;
    param_check("rendered pixel vs density node", model, id, seed, |m| {
        let mut g = Graph::new();
        let vars = m.bind(&mut g, true);
        let t = trace(&mut g, m, &vars, &rays, cam.near, cam.far, &opts(), ColorSource::Appearance, None)?;
        let px = g.gather(t.rgb, vec![0], vec![1])?;
        let v = g.value(px).item();
        let grads = g.backward_params(px, &m.params)?;
        Ok((v, Some(grad_of(m, grads, id))))
    })
}

pub fn pixel_vs_texel(seed: u64) -> Result<CheckOutcome> {
    let model = toy_scene(seed)?;
    let cam = toy_camera(4, 3);
    let rays = pixel_rays(&cam, &[4, 5, 6])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cube = Tensor::from_fn([6, 3, 3, 3], |_| rng.gen_range(0.0..1.0));
    let f = |x: &Tensor<f64>, want: bool| {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let c = g.variable(x.clone());
        let t = trace(&mut g, &model, &vars, &rays, cam.near, cam.far, &opts(), ColorSource::Cubemap(c), None)?;
        let px = g.gather(t.rgb, vec![4], vec![1])?;
        let v = g.value(px).item();
        if !want {
            return Ok((v, None));
        }
        let grads = g.backward(px)?;
        Ok((v, Some(grads.wrt(c).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))))
    };
    Ok(CheckOutcome::from("rendered pixel vs cubemap texel", finite_diff_check(f, &cube, EPS, None)?))
}

fn toy_style(seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5);
    Tensor::from_fn([3, 16, 16], |_| rng.gen_range(0.0..1.0))
}

pub fn stylized_vs_prompt(seed: u64) -> Result<CheckOutcome> {
    let net = StylizerNet::<f64>::new(seed);
    let z = noise_content::<f64>(4, seed)?;
    let style = toy_style(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = Tensor::from_fn([3, 12, 16], |_| rng.gen_range(-1.0..1.0));
    let point = Tensor::from_fn([64, 3, 4], |_| rng.gen_range(-0.1..0.1));
    let f = |x: &Tensor<f64>, want: bool| {
        let mut g = Graph::new();
        let vars = net.bind(&mut g, false);
        let (zc, sc, pr) = (g.constant_ref(&z), g.constant_ref(&style), g.constant_ref(&probe));
        let p = g.variable(x.clone());
        let out = vars.stylize(&mut g, zc, sc, Some(p))?;
        let prod = g.mul(out, pr)?;
        let l = g.sum(prod)?;
        let v = g.value(l).item();
        if !want {
            return Ok((v, None));
        }
        Ok((v, g.backward(l)?.wrt(p).cloned()))
    };
    let coords: Vec<usize> = (0..point.len()).step_by(7).collect();
    Ok(CheckOutcome::from("stylized output vs prompt", finite_diff_check(f, &point, EPS, Some(&coords))?))
}

pub fn gas_vs_prompt(seed: u64) -> Result<CheckOutcome> {
    let model = toy_scene(seed)?;
    let net = StylizerNet::<f64>::new(seed);
    let cam = toy_camera(16, 16);
    let geometry = GeometryCache::build(&model, &cam, 4, &opts())?;
    let style = toy_style(seed);
    let stats = StyleStats::of(&net.bank, &style)?;
    let gen = crate::stylizer::PatternGenerator::new(&net, &noise_content(4, seed)?, &style)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ics = Tensor::from_fn([256, 3], |_| rng.gen_range(0.0..1.0));
    let point = Tensor::from_fn(gen.prompt_shape().to_vec(), |_| rng.gen_range(-0.1..0.1));
    let f = |x: &Tensor<f64>, want: bool| {
        let mut g = Graph::new();
        let vars = net.bind(&mut g, false);
        let p = g.variable(x.clone());
        let cube = gen.generate(&mut g, &vars, Some(p))?;
        let rendered = geometry.render(&mut g, cube)?;
        let target = g.constant_ref(&ics);
        let l = gas_loss(&mut g, &net.bank, rendered, target, (16, 16), &stats, 0.1)?.total;
        let v = g.value(l).item();
        if !want {
            return Ok((v, None));
        }
        Ok((v, g.backward(l)?.wrt(p).cloned()))
    };
    let coords: Vec<usize> = (0..point.len()).step_by(5).collect();
    Ok(CheckOutcome::from("gas loss vs prompt", finite_diff_check(f, &point, EPS, Some(&coords))?))
}

pub fn cycle_vs_uv(seed: u64) -> Result<CheckOutcome> {
    let model = toy_scene(seed)?;
    let id = model.uv;
    let cam = toy_camera(4, 3);
    let rays = cam.all_rays();
    param_check("cycle loss vs UV node", model, id, seed, |m| {
        let mut g = Graph::new();
        let vars = m.bind(&mut g, true);
        let t = trace(&mut g, m, &vars, &rays, cam.near, cam.far, &opts(), ColorSource::Appearance, None)?;
        let l = cycle_loss(&mut g, m, &vars, &t)?.ok_or_else(|| Error::invalid("no coloured samples"))?;
        let v = g.value(l).item();
        let grads = g.backward_params(l, &m.params)?;
        Ok((v, Some(grad_of(m, grads, id))))
    })
}

pub fn rec_vs_density(seed: u64) -> Result<CheckOutcome> {
    let model = toy_scene(seed)?;
    let id = model.density;
    let cam = toy_camera(4, 3);
    let rays = cam.all_rays();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = Tensor::from_fn([rays.len(), 3], |_| rng.gen_range(0.0..1.0));
    param_check("reconstruction loss vs density node", model, id, seed, |m| {
        let mut g = Graph::new();
        let vars = m.bind(&mut g, true);
        let t = trace(&mut g, m, &vars, &rays, cam.near, cam.far, &opts(), ColorSource::Appearance, None)?;
        let tg = g.constant_ref(&target);
        let l = rec_loss(&mut g, t.rgb, tg)?;
        let v = g.value(l).item();
        let grads = g.backward_params(l, &m.params)?;
        Ok((v, Some(grad_of(m, grads, id))))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        assert_eq!("render".parse::<Suite>().unwrap(), Suite::Render);
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn every_suite_passes() {
        for suite in [Suite::Render, Suite::Stylizer, Suite::Losses] {
            for o in run_suite(suite, 0).unwrap() {
                assert!(o.passed && o.checked > 0, "{o:?}");
            }
        }
    }
}
