//! Frozen 2D stylization: random feature bank, statistic-alignment
//! encoder/decoder, and the prompt-driven style pattern.

pub mod bank;
pub mod net;
pub mod pattern;
pub mod pretrain;
pub mod stats;

pub use bank::{FeatureBank, DEFAULT_BANK_SEED};
pub use net::{NetVars, StylizerNet, StylizerSpec, BOTTLENECK_CHANNELS, STYLIZER_FILE};
pub use pattern::{generate_style_pattern, noise_content, PatternGenerator};
pub use pretrain::{pretrain_stylizer, reconstruction_mae, PretrainConfig};
pub use stats::{align_stats, align_to, channel_stats, channel_stats_of};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `(H, W, 3)` → `(3, H, W)`.
pub fn to_chw<T: Scalar, U: Scalar>(img: &Tensor<T>) -> Result<Tensor<U>> {
    let (h, w) = match *img.shape() {
        [h, w, 3] => (h, w),
        ref s => return Err(Error::shape("to_chw", format!("expected (H, W, 3), got {s:?}"))),
    };
    let d = img.data();
    Ok(Tensor::from_fn([3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        U::of(d[3 * p + c].f64())
    }))
}

/// `(3, H, W)` → `(H, W, 3)`.
pub fn to_hwc<T: Scalar, U: Scalar>(img: &Tensor<T>) -> Result<Tensor<U>> {
    let (h, w) = match *img.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(Error::shape("to_hwc", format!("expected (3, H, W), got {s:?}"))),
    };
    let d = img.data();
    Ok(Tensor::from_fn([h, w, 3], |i| U::of(d[(i % 3) * h * w + i / 3].f64())))
}

/// Per-stage feature-bank statistics of a style image.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleStats<T> {
    pub stages: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> StyleStats<T> {
    /// `img: [3, h, w]`
    pub fn of(bank: &FeatureBank<T>, img: &Tensor<T>) -> Result<Self> {
        let stages = bank
            .features(img)?
            .iter()
            .map(|f| {
                let (mu, sd) = channel_stats_of(f)?;
                Ok((Tensor::new(vec![mu.len()], mu)?, Tensor::new(vec![sd.len()], sd)?))
            })
            .collect::<Result<_>>()?;
        Ok(StyleStats { stages })
    }
}

/// `Σᵢ ‖μ(φᵢ(img)) − μᵢ‖₂ + ‖s(φᵢ(img)) − sᵢ‖₂` over the feature-bank stages.
pub fn style_loss<'a, T: Scalar>(g: &mut Graph<'a, T>, bank: &'a FeatureBank<T>, img: Var, target: &'a StyleStats<T>) -> Result<Var> {
    let feats = bank.extract(g, img)?;
    let mut total: Option<Var> = None;
    for (f, (mu, sd)) in feats.into_iter().zip(&target.stages) {
        for (stat, want) in [(g.channel_mean(f)?, mu), (g.channel_std(f)?, sd)] {
            let c = want.len();
            let want = g.constant_ref(want);
            let d = g.sub(stat, want)?;
            let row = g.reshape(d, vec![1, c])?;
            let n = g.row_norm(row)?;
            let n = g.reshape(n, vec![1])?;
            total = Some(match total {
                Some(t) => g.add(t, n)?,
                None => n,
            });
        }
    }
    total.ok_or_else(|| Error::invalid("empty feature bank"))
}

/// Plain-value style distance between two `[3, h, w]` images.
pub fn style_distance<T: Scalar>(bank: &FeatureBank<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let target = StyleStats::of(bank, b)?;
    let mut g = Graph::new();
    let x = g.constant_ref(a);
    let l = style_loss(&mut g, bank, x, &target)?;
    Ok(g.value(l).item().f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_round_trip() {
        let img = Tensor::<f32>::from_fn([2, 3, 3], |i| i as f32);
        let chw: Tensor<f64> = to_chw(&img).unwrap();
        assert_eq!(chw.data()[..6], [0.0, 3.0, 6.0, 9.0, 12.0, 15.0]);
        assert_eq!(to_hwc::<f64, f32>(&chw).unwrap(), img);
    }

    #[test]
    fn style_distance_zero_on_self() {
        let bank = FeatureBank::<f64>::new(1);
        let a = Tensor::from_fn([3, 16, 16], |i| (i as f64 * 0.1).sin().abs());
        let b = Tensor::from_fn([3, 16, 16], |i| (i as f64 * 0.37).cos().abs());
        assert_eq!(style_distance(&bank, &a, &a).unwrap(), 0.0);
        let d = style_distance(&bank, &a, &b).unwrap();
        assert!(d > 0.0 && (d - style_distance(&bank, &b, &a).unwrap()).abs() < 1e-12);
    }
}
