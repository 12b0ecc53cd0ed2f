use crate::diff::{population_std, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor on the content standard deviation in [`align_stats`].
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and population standard deviation of `[c, ...]`.
pub fn channel_stats<T: Scalar>(g: &mut Graph<'_, T>, feat: Var) -> Result<(Var, Var)> {
    Ok((g.channel_mean(feat)?, g.channel_std(feat)?))
}

/// Plain-value version of [`channel_stats`].
pub fn channel_stats_of<T: Scalar>(feat: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let c = *feat.shape().first().ok_or_else(|| Error::shape("channel_stats", "empty shape"))?;
    if c == 0 || feat.len() % c != 0 || feat.is_empty() {
        return Err(Error::shape("channel_stats", format!("{:?}", feat.shape())));
    }
    let m = feat.len() / c;
    Ok(feat
        .data()
        .chunks(m)
        .map(|ch| (ch.iter().copied().sum::<T>() / T::of(m as f64), population_std(ch)))
        .unzip())
}

/// Re-normalizes `content: [c, h, w]` to the given per-channel statistics:
/// `s ⊙ (content − μ_c) / max(s_c, 1e-6) + μ`.
pub fn align_to<T: Scalar>(g: &mut Graph<'_, T>, content: Var, mu: Var, sd: Var) -> Result<Var> {
    let (h, w) = match *g.shape(content) {
        [_, h, w] => (h, w),
        ref s => return Err(Error::shape("align_stats", format!("content must be [c, h, w], got {s:?}"))),
    };
    let (mc, sc) = channel_stats(g, content)?;
    let sc = g.floor_at(sc, T::of(STD_FLOOR))?;
    let ratio = g.div(sd, sc)?;
    let mc = g.broadcast_channels(mc, h, w)?;
    let centred = g.sub(content, mc)?;
    let ratio = g.broadcast_channels(ratio, h, w)?;
    let scaled = g.mul(centred, ratio)?;
    let mu = g.broadcast_channels(mu, h, w)?;
    g.add(scaled, mu)
}

pub fn align_stats<T: Scalar>(g: &mut Graph<'_, T>, content: Var, style: Var) -> Result<Var> {
    if g.shape(content).first() != g.shape(style).first() {
        return Err(Error::shape("align_stats", format!("{:?} vs {:?}", g.shape(content), g.shape(style))));
    }
    let (mu, sd) = channel_stats(g, style)?;
    align_to(g, content, mu, sd)
}
