use serde::Serialize;

use super::consistency::{consistency_score, pair_schedule, ConsistencyScore, FramePair};
use super::flow::exact_flow;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::render::Camera;
use crate::scalar::Scalar;
use crate::stylizer::FeatureBank;

/// Scores every scheduled pair of a rendered sequence. `depths` are per-frame
/// ray distances used for the analytic flow.
pub fn score_sequence<T: Scalar>(
    bank: &FeatureBank<T>,
    images: &[Tensor<T>],
    cameras: &[Camera],
    depths: &[Vec<Option<f64>>],
    occlusion_eps: f64,
    seed: u64,
) -> Result<Vec<(FramePair, ConsistencyScore)>> {
    if images.len() != cameras.len() || depths.len() != cameras.len() {
        return Err(Error::invalid("need one image and depth map per camera"));
    }
    pair_schedule(cameras.len(), seed)?
        .into_iter()
        .map(|pair| {
            let (x, y) = (pair.first, pair.second);
            let flow = exact_flow(&depths[x], &cameras[x], &depths[y], &cameras[y], occlusion_eps)?;
            Ok((pair, consistency_score(bank, &images[x], &images[y], &flow)?))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanScores {
    pub short: f64,
    pub long: f64,
    /// Mean over all pairs.
    pub all: f64,
}

/// Mean feature score per range.
pub fn mean_scores(pairs: &[(FramePair, ConsistencyScore)]) -> MeanScores {
    let mean = |f: &dyn Fn(&FramePair) -> bool| {
        let v: Vec<f64> = pairs.iter().filter(|(p, _)| f(p)).map(|(_, s)| s.feature).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    MeanScores { short: mean(&|p| !p.long), long: mean(&|p| p.long), all: mean(&|_| true) }
}
