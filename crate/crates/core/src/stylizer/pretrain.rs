use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::StylizerNet;
use super::{style_loss, to_chw, StyleStats};
use crate::diff::{adam_step, AdamState, Graph, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MIN_TEXTURES: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub style_weight: f64,
    /// Square crop side used for each training image; a multiple of 16.
    pub crop: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { iterations: 2000, lr: 2e-3, style_weight: 0.1, crop: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainRow {
    pub iteration: usize,
    pub reconstruction: f64,
    pub style: f64,
}

fn crop<T: Scalar>(img: &Tensor<T>, side: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let (y0, x0) = (rng.gen_range(0..=h - side), rng.gen_range(0..=w - side));
    let d = img.data();
    Tensor::from_fn([3, side, side], |i| {
        let (c, r, col) = (i / (side * side), (i / side) % side, i % side);
        d[(c * h + y0 + r) * w + x0 + col]
    })
}

/// Trains the encoder/decoder on random content/style pairs drawn from
/// `textures` (each `(H, W, 3)`): reconstruction of the content with itself as
/// style, plus feature-statistic style loss on the cross-stylized output.
/// The returned network is frozen.
pub fn pretrain_stylizer<T: Scalar>(
    textures: &[Tensor<f32>],
    cfg: &PretrainConfig,
    mut progress: impl FnMut(&PretrainRow),
) -> Result<StylizerNet<T>> {
    if textures.len() < MIN_TEXTURES {
        return Err(Error::invalid(format!("pretraining needs at least {MIN_TEXTURES} textures, got {}", textures.len())));
    }
    if cfg.crop == 0 || cfg.crop % 16 != 0 || !(cfg.lr > 0.0) || !(cfg.style_weight >= 0.0) {
        return Err(Error::invalid("crop must be a positive multiple of 16 and lr positive"));
    }
    let images: Vec<Tensor<T>> = textures.iter().map(to_chw).collect::<Result<_>>()?;
    if images.iter().any(|t| t.shape()[1] < cfg.crop || t.shape()[2] < cfg.crop) {
        return Err(Error::invalid(format!("textures must be at least {0}x{0}", cfg.crop)));
    }
    let mut net = StylizerNet::<T>::new(cfg.seed);
    let stats: Vec<StyleStats<T>> = images.iter().map(|t| StyleStats::of(&net.bank, t)).collect::<Result<_>>()?;
    let mut adam = AdamState::new(&net.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    for it in 0..cfg.iterations {
        let ci = rng.gen_range(0..images.len());
        let si = (ci + rng.gen_range(1..images.len())) % images.len();
        let content = crop(&images[ci], cfg.crop, &mut rng);
        let style = crop(&images[si], cfg.crop, &mut rng);
        let (row, grads) = {
            let mut g = Graph::new();
            let vars = net.bind(&mut g, true);
            let c = g.constant(content);
            let s = g.constant(style);
            let rec = vars.stylize(&mut g, c, c, None)?;
            let diff = g.sub(rec, c)?;
            let sq = g.mul(diff, diff)?;
            let rec_l = g.mean(sq)?;
            let out = vars.stylize(&mut g, c, s, None)?;
            let sty_l = style_loss(&mut g, &net.bank, out, &stats[si])?;
            let weighted = g.scale(sty_l, T::of(cfg.style_weight))?;
            let total = g.add(rec_l, weighted)?;
            let grads = g.backward_params(total, &net.params)?;
            (PretrainRow { iteration: it, reconstruction: g.value(rec_l).item().f64(), style: g.value(sty_l).item().f64() }, grads)
        };
        if !(row.reconstruction.is_finite() && row.style.is_finite()) {
            return Err(Error::Divergence { iteration: it });
        }
        adam_step(&mut net.params, &grads, &mut adam)?;
        progress(&row);
    }
    net.spec.trained_iterations = cfg.iterations;
    net.freeze();
    Ok(net)
}

/// Mean absolute error of `stylize(x, x)` against `x` over `(H, W, 3)` images.
pub fn reconstruction_mae<T: Scalar>(net: &StylizerNet<T>, images: &[Tensor<f32>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for img in images {
        let x: Tensor<T> = to_chw(img)?;
        let y = net.stylize_image(&x, &x, None)?;
        total += x.data().iter().zip(y.data()).map(|(a, b)| (a.f64() - b.f64()).abs()).sum::<f64>();
        count += x.len();
    }
    if count == 0 {
        return Err(Error::invalid("no images"));
    }
    Ok(total / count as f64)
}
