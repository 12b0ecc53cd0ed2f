use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BANK_CHANNELS: [usize; 5] = [3, 8, 16, 32, 64];
pub const DEFAULT_BANK_SEED: u64 = 7;

/// Fixed random multi-scale feature extractor: four bias-free 3×3 conv + relu +
/// 2× average-pool stages. Never trained.
#[derive(Clone, Debug)]
pub struct FeatureBank<T> {
    seed: u64,
    weights: Vec<Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSpec {
    pub seed: u64,
}

impl<T: Scalar> FeatureBank<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = BANK_CHANNELS
            .windows(2)
            .map(|io| {
                let (cin, cout) = (io[0], io[1]);
                let normal = Normal::new(0.0, (2.0 / (cin * 9) as f64).sqrt()).expect("positive std");
                let data = (0..cout * cin * 9).map(|_| T::of(normal.sample(&mut rng))).collect();
                Tensor::new(vec![cout, cin, 3, 3], data).expect("matching length")
            })
            .collect();
        FeatureBank { seed, weights }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> BankSpec {
        BankSpec { seed: self.seed }
    }

    /// Features of `img: [3, h, w]` at the four stages.
    pub fn extract<'a>(&'a self, g: &mut Graph<'a, T>, img: Var) -> Result<Vec<Var>> {
        match *g.shape(img) {
            [3, h, w] if h % 16 == 0 && w % 16 == 0 && h > 0 && w > 0 => {}
            ref s => return Err(Error::shape("extract_features", format!("need [3, h, w] with extents divisible by 16, got {s:?}"))),
        }
        let mut x = img;
        let mut out = Vec::with_capacity(4);
        for wt in &self.weights {
            let w = g.constant_ref(wt);
            let c = g.conv2d(x, w)?;
            let r = g.relu(c)?;
            x = g.avg_pool2(r)?;
            out.push(x);
        }
        Ok(out)
    }

    pub fn features(&self, img: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let x = g.constant_ref(img);
        let f = self.extract(&mut g, x)?;
        Ok(f.into_iter().map(|v| g.value(v).clone()).collect())
    }
}
