use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::flow::{warp, FlowField};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stylizer::{to_chw, FeatureBank};

pub const SHORT_OFFSET: usize = 1;
pub const LONG_OFFSET: usize = 7;
pub const PAIRS_PER_RANGE: usize = 20;

/// Warped consistency of one view pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConsistencyScore {
    /// Mean over feature-bank stages of the masked mean squared feature difference.
    pub feature: f64,
    /// Masked RGB mean squared error.
    pub rgb: f64,
    pub coverage: f64,
}

fn masked<T: Scalar>(img: &Tensor<T>, mask: &[bool]) -> Tensor<T> {
    Tensor::from_fn(img.shape().to_vec(), |i| if mask[i / 3] { img.data()[i] } else { T::zero() })
}

/// `x` is the view owning the flow grid; `y` is pulled onto that grid and
/// both are masked before comparison. Images are `(H, W, 3)`.
pub fn consistency_score<T: Scalar>(bank: &FeatureBank<T>, x: &Tensor<T>, y: &Tensor<T>, flow: &FlowField) -> Result<ConsistencyScore> {
    if x.shape() != [flow.height, flow.width, 3] {
        return Err(Error::shape("consistency_score", format!("image {:?} for a {}x{} flow", x.shape(), flow.width, flow.height)));
    }
    let count = flow.mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let a = masked(x, &flow.mask);
    let b = warp(y, flow)?;
    let rgb = a.data().iter().zip(b.data()).map(|(&p, &q)| (p - q).f64().powi(2)).sum::<f64>() / (3 * count) as f64;

    let fa = bank.features(&to_chw(&a)?)?;
    let fb = bank.features(&to_chw(&b)?)?;
    let mut mask_level: Vec<f64> = flow.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let (mut h, mut w) = (flow.height, flow.width);
    let mut feature = 0.0;
    for (sa, sb) in fa.iter().zip(&fb) {
        mask_level = (0..(h / 2) * (w / 2))
            .map(|i| {
                let (r, c) = (2 * (i / (w / 2)), 2 * (i % (w / 2)));
                (mask_level[r * w + c] + mask_level[r * w + c + 1] + mask_level[(r + 1) * w + c] + mask_level[(r + 1) * w + c + 1]) / 4.0
            })
            .collect();
        h /= 2;
        w /= 2;
        let weight: f64 = mask_level.iter().sum::<f64>() * sa.shape()[0] as f64;
        let sq: f64 = sa.data().iter().zip(sb.data()).map(|(&p, &q)| (p - q).f64().powi(2)).sum();
        feature += if weight > 0.0 { sq / weight } else { 0.0 };
    }
    Ok(ConsistencyScore { feature: feature / fa.len() as f64, rgb, coverage: flow.mask.iter().filter(|&&m| m).count() as f64 / flow.mask.len() as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FramePair {
    pub first: usize,
    pub second: usize,
    pub long: bool,
    /// The pair repeats an earlier one because too few distinct pairs exist.
    pub duplicate: bool,
}

/// `PAIRS_PER_RANGE` short `(t, t+1)` and long `(t, t+7)` pairs, drawn without
/// replacement while distinct pairs remain.
pub fn pair_schedule(frames: usize, seed: u64) -> Result<Vec<FramePair>> {
    if frames <= LONG_OFFSET {
        return Err(Error::invalid(format!("pair schedule needs at least {} frames, got {frames}", LONG_OFFSET + 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * PAIRS_PER_RANGE);
    for (offset, long) in [(SHORT_OFFSET, false), (LONG_OFFSET, true)] {
        let mut starts: Vec<usize> = (0..frames - offset).collect();
        starts.shuffle(&mut rng);
        let distinct = starts.len().min(PAIRS_PER_RANGE);
        for &t in &starts[..distinct] {
            out.push(FramePair { first: t, second: t + offset, long, duplicate: false });
        }
        for _ in distinct..PAIRS_PER_RANGE {
            let t = starts[rng.gen_range(0..starts.len())];
            out.push(FramePair { first: t, second: t + offset, long, duplicate: true });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: f64) -> Tensor<f64> {
        Tensor::from_fn([16, 16, 3], |i| 0.5 + 0.4 * (i as f64 * 0.37 + seed).sin())
    }

    fn full_mask(w: usize, h: usize) -> FlowField {
        let mut f = FlowField::new(w, h);
        f.mask = vec![true; w * h];
        f
    }

    #[test]
    fn identical_views_score_zero() {
        let bank = FeatureBank::new(1);
        let s = consistency_score(&bank, &image(0.0), &image(0.0), &full_mask(16, 16)).unwrap();
        assert_eq!((s.feature, s.rgb, s.coverage), (0.0, 0.0, 1.0));
        assert!(consistency_score(&bank, &image(0.0), &image(1.0), &full_mask(16, 16)).unwrap().feature > 0.0);
    }

    #[test]
    fn content_outside_mask_is_ignored() {
        let bank = FeatureBank::new(1);
        let mut f = full_mask(16, 16);
        for p in 0..128 {
            f.mask[p] = false;
        }
        let a = image(0.0);
        let mut b = image(0.0);
        let mut c = image(0.0);
        for i in 0..128 * 3 {
            b.data_mut()[i] = 0.9;
            c.data_mut()[i] = 0.1;
        }
        let sb = consistency_score(&bank, &a, &b, &f).unwrap();
        let sc = consistency_score(&bank, &a, &c, &f).unwrap();
        assert_eq!(sb, sc);
        assert_eq!(sb.feature, 0.0);
        f.mask = vec![false; 256];
        assert!(matches!(consistency_score(&bank, &a, &b, &f), Err(Error::EmptyMask)));
    }

    #[test]
    fn schedule_sizes_and_duplicates() {
        let s = pair_schedule(100, 3).unwrap();
        assert_eq!(s.len(), 40);
        assert!(s.iter().all(|p| p.second < 100 && !p.duplicate));
        assert_eq!(s, pair_schedule(100, 3).unwrap());
        let small = pair_schedule(8, 0).unwrap();
        let long: Vec<_> = small.iter().filter(|p| p.long).collect();
        assert!(long.iter().all(|p| (p.first, p.second) == (0, 7)));
        assert_eq!(long.iter().filter(|p| p.duplicate).count(), 19);
        assert!(pair_schedule(7, 0).is_err());
    }
}
