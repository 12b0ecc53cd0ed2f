//! Prompt optimization against a frozen stylizer and frozen scenes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::GeometryCache;
use crate::diff::{adam_step, AdamState, Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::{resize_rgb, SceneDataset};
use crate::render::RenderOptions;
use crate::scalar::Scalar;
use crate::scene::SceneModel;
use crate::stylizer::{noise_content, to_chw, to_hwc, FeatureBank, PatternGenerator, StyleStats, StylizerNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageIIConfig {
    pub iterations: usize,
    pub lr_prompt: f64,
    pub lambda_style: f64,
    /// Stage I checkpoint directories; one is the scene-related regime.
    pub scenes: Vec<String>,
    /// Style image files.
    pub styles: Vec<String>,
    pub seed: u64,
    /// One prompt for all styles instead of one per style.
    pub shared_prompt: bool,
    pub face_res: usize,
    /// Width of the per-iteration renders; height follows the view aspect.
    pub render_width: usize,
    pub samples: usize,
}

impl Default for StageIIConfig {
    fn default() -> Self {
        StageIIConfig {
            iterations: 5000,
            lr_prompt: 0.1,
            lambda_style: 0.1,
            scenes: vec![],
            styles: vec![],
            seed: 0,
            shared_prompt: false,
            face_res: 256,
            render_width: 64,
            samples: 128,
        }
    }
}

impl StageIIConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_prompt > 0.0) || !(self.lambda_style > 0.0) {
            return Err(Error::invalid("lr_prompt and lambda_style must be positive"));
        }
        if self.face_res < 4 || self.face_res % 4 != 0 {
            return Err(Error::invalid(format!("face_res must be a positive multiple of 4, got {}", self.face_res)));
        }
        if self.render_width < 16 || self.render_width % 16 != 0 {
            return Err(Error::invalid(format!("render_width must be a positive multiple of 16, got {}", self.render_width)));
        }
        Ok(())
    }

    /// Render extents for views of `width × height`: the height keeps the
    /// aspect, rounded to a multiple of 16 for the feature bank.
    pub fn render_extents(&self, width: usize, height: usize) -> (usize, usize) {
        let h = (self.render_width as f64 * height as f64 / width as f64 / 16.0).round().max(1.0) as usize * 16;
        (self.render_width, h)
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions { samples: self.samples, ..RenderOptions::default() }
    }
}

/// Alignment between the rendered view and the 2D-stylized training view plus
/// style-statistic distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GasValue {
    pub total: f64,
    pub align: f64,
    pub style: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GasVars {
    pub total: Var,
    pub align: Var,
    pub style: Var,
}

impl GasVars {
    pub fn value<T: Scalar>(&self, g: &Graph<'_, T>) -> GasValue {
        GasValue { total: g.value(self.total).item().f64(), align: g.value(self.align).item().f64(), style: g.value(self.style).item().f64() }
    }
}

/// Loss from explicit statistics of the rendered view: `rendered`, `ics` are
/// `[P, 3]`; `stats[i] = (μᵢ, sᵢ)` of the rendered view at stage `i`.
pub fn gas_from_stats<T: Scalar>(
    g: &mut Graph<'_, T>,
    rendered: Var,
    ics: Var,
    stats: &[(Var, Var)],
    target: &StyleStats<T>,
    lambda_style: f64,
) -> Result<GasVars> {
    if stats.len() != target.stages.len() {
        return Err(Error::shape("gas_loss", format!("{} stages vs {} target stages", stats.len(), target.stages.len())));
    }
    let diff = g.sub(ics, rendered)?;
    let norms = g.row_norm(diff)?;
    let align = g.mean(norms)?;
    let mut style: Option<Var> = None;
    for (&(mu, sd), (tmu, tsd)) in stats.iter().zip(&target.stages) {
        for (v, t) in [(mu, tmu), (sd, tsd)] {
            let c = t.len();
            let t = g.constant(t.clone());
            let d = g.sub(v, t)?;
            let d = g.reshape(d, vec![1, c])?;
            let n = g.row_norm(d)?;
            style = Some(match style {
                Some(s) => g.add(s, n)?,
                None => n,
            });
        }
    }
    let style = style.ok_or_else(|| Error::invalid("no feature stages"))?;
    let weighted = g.scale(style, T::of(lambda_style))?;
    let total = g.add(align, weighted)?;
    Ok(GasVars { total, align, style })
}

/// Geometry-aware stylization loss of a rendered view `[h·w, 3]` against its
/// stylized training view `ics` (same layout) and the style statistics.
pub fn gas_loss<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    bank: &'a FeatureBank<T>,
    rendered: Var,
    ics: Var,
    (h, w): (usize, usize),
    target: &StyleStats<T>,
    lambda_style: f64,
) -> Result<GasVars> {
    if g.shape(rendered) != [h * w, 3] || g.shape(ics) != [h * w, 3] {
        return Err(Error::shape("gas_loss", format!("{:?} and {:?} for {h}x{w}", g.shape(rendered), g.shape(ics))));
    }
    let chw: Vec<usize> = (0..3 * h * w).map(|i| (i % (h * w)) * 3 + i / (h * w)).collect();
    let img = g.gather(rendered, chw, vec![3, h, w])?;
    let feats = bank.extract(g, img)?;
    let stats = feats.into_iter().map(|f| Ok((g.channel_mean(f)?, g.channel_std(f)?))).collect::<Result<Vec<_>>>()?;
    gas_from_stats(g, rendered, ics, &stats, target, lambda_style)
}

/// Passes each `(H, W, 3)` view through the frozen stylizer with `style`
/// (`(h, w, 3)`); no prompt. Outputs keep the view extents.
pub fn precompute_ics<T: Scalar>(net: &StylizerNet<T>, views: &[Tensor<f32>], style: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
    let s: Tensor<T> = to_chw(style)?;
    views
        .iter()
        .map(|v| {
            let c: Tensor<T> = to_chw(v)?;
            to_hwc(&net.stylize_image(&c, &s, None)?)
        })
        .collect()
}

/// One training or evaluation view of a frozen scene at Stage II resolution.
#[derive(Clone, Debug)]
pub struct PreparedView<T> {
    pub frame: usize,
    pub height: usize,
    pub width: usize,
    pub geometry: GeometryCache<T>,
    /// Ground-truth view resized to the render extents, `(h, w, 3)`.
    pub image: Tensor<f32>,
    /// Stylized `image` per style, `[h·w, 3]`.
    pub ics: Vec<Tensor<T>>,
}

pub fn prepare_views<T: Scalar>(
    model: &SceneModel<T>,
    dataset: &SceneDataset,
    frames: &[usize],
    cfg: &StageIIConfig,
) -> Result<Vec<PreparedView<T>>> {
    let (w, h) = cfg.render_extents(dataset.manifest.width, dataset.manifest.height);
    frames
        .iter()
        .map(|&f| {
            let cam = dataset.camera(f).resized(w, h);
            Ok(PreparedView {
                frame: f,
                height: h,
                width: w,
                geometry: GeometryCache::build(model, &cam, cfg.face_res, &cfg.render_options())?,
                image: resize_rgb(&dataset.images[f], w, h)?,
                ics: vec![],
            })
        })
        .collect()
}

/// Fills `ics` of every view for every style (`(h, w, 3)` images).
pub fn attach_ics<T: Scalar>(net: &StylizerNet<T>, views: &mut [PreparedView<T>], styles: &[Tensor<f32>]) -> Result<()> {
    let images: Vec<Tensor<f32>> = views.iter().map(|v| v.image.clone()).collect();
    for v in views.iter_mut() {
        v.ics.clear();
    }
    for style in styles {
        for (v, ics) in views.iter_mut().zip(precompute_ics(net, &images, style)?) {
            let n = v.height * v.width;
            v.ics.push(Tensor::new(vec![n, 3], ics.data().iter().map(|&x| T::of(x as f64)).collect())?);
        }
    }
    Ok(())
}

/// Everything that depends on one style: its statistics and the cached
/// noise-to-bottleneck pass.
#[derive(Clone, Debug)]
pub struct StyleTarget<T> {
    pub stats: StyleStats<T>,
    pub generator: PatternGenerator<T>,
}

impl<T: Scalar> StyleTarget<T> {
    /// `style: (h, w, 3)`.
    pub fn new(net: &StylizerNet<T>, style: &Tensor<f32>, face_res: usize, noise_seed: u64) -> Result<Self> {
        let s: Tensor<T> = to_chw(style)?;
        let z = noise_content(face_res, noise_seed)?;
        Ok(StyleTarget { stats: StyleStats::of(&net.bank, &s)?, generator: PatternGenerator::new(net, &z, &s)? })
    }
}

/// Loss of one view for one style under `prompt` (zeros when `None`).
pub fn evaluate_gas<T: Scalar>(
    net: &StylizerNet<T>,
    style: &StyleTarget<T>,
    style_index: usize,
    view: &PreparedView<T>,
    prompt: Option<&Tensor<T>>,
    lambda_style: f64,
) -> Result<GasValue> {
    let mut g = Graph::new();
    let vars = net.bind(&mut g, false);
    let p = prompt.map(|p| g.constant_ref(p));
    let cube = style.generator.generate(&mut g, &vars, p)?;
    let rendered = view.geometry.render(&mut g, cube)?;
    let ics = g.constant_ref(ics_of(view, style_index)?);
    Ok(gas_loss(&mut g, &net.bank, rendered, ics, (view.height, view.width), &style.stats, lambda_style)?.value(&g))
}

fn ics_of<T>(view: &PreparedView<T>, style: usize) -> Result<&Tensor<T>> {
    view.ics.get(style).ok_or_else(|| Error::invalid(format!("view {} has no stylized target for style {style}", view.frame)))
}

/// Mean loss over views.
pub fn mean_gas<T: Scalar>(
    net: &StylizerNet<T>,
    style: &StyleTarget<T>,
    style_index: usize,
    views: &[PreparedView<T>],
    prompt: Option<&Tensor<T>>,
    lambda_style: f64,
) -> Result<GasValue> {
    let mut acc = GasValue { total: 0.0, align: 0.0, style: 0.0 };
    for v in views {
        let x = evaluate_gas(net, style, style_index, v, prompt, lambda_style)?;
        acc.total += x.total;
        acc.align += x.align;
        acc.style += x.style;
    }
    let n = views.len().max(1) as f64;
    Ok(GasValue { total: acc.total / n, align: acc.align / n, style: acc.style / n })
}

/// A frozen scene with its prepared training views.
pub struct StageIIScene<'m, T> {
    pub model: &'m SceneModel<T>,
    pub views: Vec<PreparedView<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GasRow {
    pub iteration: usize,
    pub scene: usize,
    pub style: usize,
    pub frame: usize,
    pub total: f64,
    pub align: f64,
    pub style_term: f64,
}

#[derive(Clone, Debug)]
pub struct PromptRun<T> {
    /// `prompt` when shared, else `prompt.{k}` for style `k`.
    pub prompts: ParamSet<T>,
    pub curve: Vec<GasRow>,
}

impl<T: Scalar> PromptRun<T> {
    pub fn prompt_for(&self, style: usize) -> &Tensor<T> {
        let id = self.prompts.id("prompt").or_else(|| self.prompts.id(&format!("prompt.{style}"))).expect("prompt registered per style");
        self.prompts.get(id)
    }
}

fn snapshot<T: Scalar>(net: &StylizerNet<T>, scenes: &[StageIIScene<'_, T>]) -> Vec<(String, [u8; 32])> {
    let mut sums: Vec<_> = net.params.checksums().into_iter().map(|(n, c)| (format!("stylizer/{n}"), c)).collect();
    for (i, s) in scenes.iter().enumerate() {
        sums.extend(s.model.params.checksums().into_iter().map(|(n, c)| (format!("scene{i}/{n}"), c)));
    }
    sums
}

/// Round-robin over seeded shuffles of all `(scene, style, view)` triples;
/// each iteration regenerates the pattern, renders through the cached scene
/// geometry and takes one Adam step on the prompt only. Every other parameter
/// is checksummed before and after.
pub fn train_prompt<T: Scalar>(
    cfg: &StageIIConfig,
    net: &StylizerNet<T>,
    scenes: &[StageIIScene<'_, T>],
    styles: &[StyleTarget<T>],
    mut progress: impl FnMut(&GasRow),
) -> Result<PromptRun<T>> {
    cfg.validate()?;
    if scenes.is_empty() || styles.is_empty() {
        return Err(Error::invalid("Stage II needs at least one scene and one style"));
    }
    if net.params.ids().any(|id| net.params.is_trainable(id)) {
        return Err(Error::FreezeViolation("stylizer must be frozen before prompt training".into()));
    }
    let mut triples = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        if scene.views.is_empty() {
            return Err(Error::invalid(format!("scene {si} has no training views")));
        }
        for (vi, v) in scene.views.iter().enumerate() {
            if v.ics.len() < styles.len() {
                return Err(Error::invalid(format!("scene {si} view {} lacks stylized targets", v.frame)));
            }
            triples.extend((0..styles.len()).map(|k| (si, k, vi)));
        }
    }
    let before = snapshot(net, scenes);
    let mut prompts = ParamSet::new();
    let shape = styles[0].generator.prompt_shape().to_vec();
    if cfg.shared_prompt {
        prompts.insert("prompt", Tensor::zeros(shape), true)?;
    } else {
        for (k, s) in styles.iter().enumerate() {
            prompts.insert(format!("prompt.{k}"), Tensor::zeros(s.generator.prompt_shape().to_vec()), true)?;
        }
    }
    let mut adam = AdamState::new(&prompts, cfg.lr_prompt);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = triples.clone();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let (si, k, vi) = order[cursor];
        cursor += 1;
        let view = &scenes[si].views[vi];
        let pid = prompts.id("prompt").or_else(|| prompts.id(&format!("prompt.{k}"))).expect("registered");
        let (value, grads) = {
            let mut g = Graph::new();
            let vars = net.bind(&mut g, false);
            let p = g.param(&prompts, pid);
            let cube = styles[k].generator.generate(&mut g, &vars, Some(p))?;
            let rendered = view.geometry.render(&mut g, cube)?;
            let ics = g.constant_ref(&view.ics[k]);
            let gas = gas_loss(&mut g, &net.bank, rendered, ics, (view.height, view.width), &styles[k].stats, cfg.lambda_style)?;
            let value = gas.value(&g);
            if !value.total.is_finite() {
                return Err(Error::Divergence { iteration: it });
            }
            (value, g.backward_params(gas.total, &prompts)?)
        };
        adam_step(&mut prompts, &grads, &mut adam)?;
        let row = GasRow { iteration: it, scene: si, style: k, frame: view.frame, total: value.total, align: value.align, style_term: value.style };
        progress(&row);
        curve.push(row);
    }
    let after = snapshot(net, scenes);
    if let Some((name, _)) = before.iter().zip(&after).find(|(a, b)| a != b).map(|(a, _)| a) {
        return Err(Error::FreezeViolation(format!("{name} changed during prompt training")));
    }
    Ok(PromptRun { prompts, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_gas_value() {
        // Two pixels; only one stage with a single channel.
        let mut g = Graph::<f64>::new();
        let r = g.constant(Tensor::new(vec![2, 3], vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap());
        let ics = g.constant(Tensor::new(vec![2, 3], vec![0.3, 0.0, 0.4, 1.0, 1.0, 1.0]).unwrap());
        let mu = g.constant(Tensor::new(vec![1], vec![0.5]).unwrap());
        let sd = g.constant(Tensor::new(vec![1], vec![0.5]).unwrap());
        let target = StyleStats { stages: vec![(Tensor::new(vec![1], vec![0.2]).unwrap(), Tensor::new(vec![1], vec![0.1]).unwrap())] };
        let v = gas_from_stats(&mut g, r, ics, &[(mu, sd)], &target, 0.1).unwrap().value(&g);
        // align = (0.5 + 0) / 2; style = 0.3 + 0.4.
        assert!((v.align - 0.25).abs() < 1e-12);
        assert!((v.style - 0.7).abs() < 1e-12);
        assert!((v.total - 0.32).abs() < 1e-12);
        let v0 = gas_from_stats(&mut g, r, ics, &[(mu, sd)], &target, 0.0).unwrap().value(&g);
        assert_eq!(v0.total, v0.align);
    }

    #[test]
    fn render_extents_keep_aspect() {
        let cfg = StageIIConfig { render_width: 64, ..Default::default() };
        assert_eq!(cfg.render_extents(128, 128), (64, 64));
        assert_eq!(cfg.render_extents(170, 128), (64, 48));
        assert!(StageIIConfig { render_width: 40, ..Default::default() }.validate().is_err());
    }
}
