use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Output {
    Linear,
    Sigmoid,
}

/// Fully connected ReLU network; weights are `[in, out]`, biases `[out]`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
    pub output: Output,
}

/// Parameter leaves of one [`Mlp`] inside a graph.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
    output: Output,
}

impl Mlp {
    /// Registers `name.w{i}` / `name.b{i}` with Glorot-uniform weights and zero biases.
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        widths: &[usize],
        output: Output,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let (fi, fo) = (pair[0], pair[1]);
            let bound = (6.0 / (fi + fo) as f64).sqrt();
            let w = Tensor::from_fn([fi, fo], |_| T::of(rng.gen_range(-bound..bound)));
            let wid = params.insert(format!("{name}.w{i}"), w, true)?;
            let bid = params.insert(format!("{name}.b{i}"), Tensor::zeros([fo]), true)?;
            layers.push((wid, bid));
        }
        Ok(Mlp { layers, output })
    }

    /// Looks up an already registered network by name.
    pub fn find<T: Scalar>(params: &ParamSet<T>, name: &str, depth: usize, output: Output) -> Option<Self> {
        let layers = (0..depth)
            .map(|i| Some((params.id(&format!("{name}.w{i}"))?, params.id(&format!("{name}.b{i}"))?)))
            .collect::<Option<Vec<_>>>()?;
        Some(Mlp { layers, output })
    }

    pub fn bind<'a, T: Scalar>(&self, g: &mut Graph<'a, T>, params: &'a ParamSet<T>, track: bool) -> MlpVars {
        let leaf = |g: &mut Graph<'a, T>, id: ParamId| {
            if track {
                g.param(params, id)
            } else {
                g.constant_ref(params.get(id))
            }
        };
        let layers = self.layers.iter().map(|&(w, b)| (leaf(g, w), leaf(g, b))).collect();
        MlpVars { layers, output: self.output }
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

impl MlpVars {
    /// `x: [n, in] -> [n, out]`
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul(h, w)?;
            let bias = g.broadcast_rows(b, n)?;
            h = g.add(z, bias)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        match self.output {
            Output::Linear => Ok(h),
            Output::Sigmoid => g.sigmoid(h),
        }
    }
}
