use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::{BankSpec, FeatureBank, DEFAULT_BANK_SEED};
use super::stats::{align_stats, align_to};
use crate::diff::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::{self, f32t};
use crate::scalar::Scalar;

pub const STYLIZER_FILE: &str = "stylizer.json";
pub const BOTTLENECK_CHANNELS: usize = 64;
const LAYERS: [(&str, usize, usize); 4] = [("enc.0", 3, 32), ("enc.1", 32, 64), ("dec.0", 64, 32), ("dec.1", 32, 3)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizerSpec {
    pub seed: u64,
    pub bank: BankSpec,
    /// `(name, in, out)` of each 3×3 convolution, encoder first.
    pub layers: Vec<(String, usize, usize)>,
    /// Pretraining iterations applied so far.
    pub trained_iterations: usize,
}

/// Encoder (conv+relu+pool twice, 3→32→64, extents /4), statistic alignment at
/// the bottleneck, decoder (upsample+conv twice, 64→32→3, sigmoid).
#[derive(Clone, Debug)]
pub struct StylizerNet<T> {
    pub spec: StylizerSpec,
    pub params: ParamSet<T>,
    pub bank: FeatureBank<T>,
    ids: Vec<(ParamId, ParamId)>,
}

/// Graph leaves of a [`StylizerNet`].
#[derive(Clone, Debug)]
pub struct NetVars {
    layers: Vec<(Var, Var)>,
}

impl<T: Scalar> StylizerNet<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut ids = Vec::new();
        for (name, cin, cout) in LAYERS {
            let bound = (6.0 / (cin * 9) as f64).sqrt();
            let w = Tensor::from_fn([cout, cin, 3, 3], |_| T::of(rng.gen_range(-bound..bound)));
            let wid = params.insert(format!("{name}.w"), w, true).expect("unique names");
            let bid = params.insert(format!("{name}.b"), Tensor::zeros([cout]), true).expect("unique names");
            ids.push((wid, bid));
        }
        let spec = StylizerSpec {
            seed,
            bank: BankSpec { seed: DEFAULT_BANK_SEED },
            layers: LAYERS.iter().map(|&(n, i, o)| (n.to_string(), i, o)).collect(),
            trained_iterations: 0,
        };
        StylizerNet { spec, params, bank: FeatureBank::new(DEFAULT_BANK_SEED), ids }
    }

    pub fn bottleneck_shape(h: usize, w: usize) -> Result<[usize; 3]> {
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::shape("stylizer", format!("extents {h}x{w} must be positive multiples of 4")));
        }
        Ok([BOTTLENECK_CHANNELS, h / 4, w / 4])
    }

    pub fn freeze(&mut self) {
        self.params.freeze_all();
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>, track: bool) -> NetVars {
        let layers = self
            .ids
            .iter()
            .map(|&(w, b)| {
                if track {
                    (g.param(&self.params, w), g.param(&self.params, b))
                } else {
                    (g.constant_ref(self.params.get(w)), g.constant_ref(self.params.get(b)))
                }
            })
            .collect();
        NetVars { layers }
    }

    /// `content`, `style`: `[3, h, w]` in `[0, 1]`; result `[3, h, w]`.
    pub fn stylize_image(&self, content: &Tensor<T>, style: &Tensor<T>, prompt: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let c = g.constant_ref(content);
        let s = g.constant_ref(style);
        let p = prompt.map(|p| g.constant_ref(p));
        let out = vars.stylize(&mut g, c, s, p)?;
        Ok(g.value(out).clone())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        io::ensure_dir(dir)?;
        io::write_json(dir.join(STYLIZER_FILE), &self.spec)?;
        for id in self.params.ids() {
            f32t::save(dir.join(format!("{}.f32t", self.params.name(id))), self.params.get(id))?;
        }
        Ok(())
    }

    /// Loads a checkpoint; the loaded network is frozen.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec: StylizerSpec = io::read_json(dir.join(STYLIZER_FILE))?;
        let expected: Vec<_> = LAYERS.iter().map(|&(n, i, o)| (n.to_string(), i, o)).collect();
        if spec.layers != expected {
            return Err(Error::invalid(format!("unsupported stylizer layer spec {:?}", spec.layers)));
        }
        let mut net = Self::new(spec.seed);
        net.bank = FeatureBank::new(spec.bank.seed);
        for id in net.params.ids().collect::<Vec<_>>() {
            let t = f32t::load(dir.join(format!("{}.f32t", net.params.name(id))))?;
            net.params.set(id, t)?;
        }
        net.spec = spec;
        net.freeze();
        Ok(net)
    }
}

fn conv<T: Scalar>(g: &mut Graph<'_, T>, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let y = g.conv2d(x, w)?;
    let (h, wd) = (g.shape(y)[1], g.shape(y)[2]);
    let bias = g.broadcast_channels(b, h, wd)?;
    g.add(y, bias)
}

impl NetVars {
    /// `[3, h, w] -> [64, h/4, w/4]`
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match *g.shape(x) {
            [3, h, w] => StylizerNet::<T>::bottleneck_shape(h, w)?,
            ref s => return Err(Error::shape("stylizer", format!("image must be [3, h, w], got {s:?}"))),
        };
        let mut h = x;
        for &layer in &self.layers[..2] {
            let c = conv(g, h, layer)?;
            let r = g.relu(c)?;
            h = g.avg_pool2(r)?;
        }
        Ok(h)
    }

    /// `[64, h, w] -> [3, 4h, 4w]`
    pub fn decode<T: Scalar>(&self, g: &mut Graph<'_, T>, f: Var) -> Result<Var> {
        let u = g.upsample2(f)?;
        let c = conv(g, u, self.layers[2])?;
        let r = g.relu(c)?;
        let u = g.upsample2(r)?;
        let c = conv(g, u, self.layers[3])?;
        g.sigmoid(c)
    }

    /// `D(align(E(content), E(style)) + prompt)`.
    pub fn stylize<T: Scalar>(&self, g: &mut Graph<'_, T>, content: Var, style: Var, prompt: Option<Var>) -> Result<Var> {
        let fc = self.encode(g, content)?;
        let fs = self.encode(g, style)?;
        let aligned = align_stats(g, fc, fs)?;
        self.decode_prompted(g, aligned, prompt)
    }

    /// Same as [`NetVars::stylize`] given precomputed style statistics of `E(style)`.
    pub fn stylize_to<T: Scalar>(&self, g: &mut Graph<'_, T>, content: Var, mu: Var, sd: Var, prompt: Option<Var>) -> Result<Var> {
        let fc = self.encode(g, content)?;
        let aligned = align_to(g, fc, mu, sd)?;
        self.decode_prompted(g, aligned, prompt)
    }

    pub fn decode_prompted<T: Scalar>(&self, g: &mut Graph<'_, T>, bottleneck: Var, prompt: Option<Var>) -> Result<Var> {
        let z = match prompt {
            Some(p) => {
                if g.shape(p) != g.shape(bottleneck) {
                    return Err(Error::shape("stylize_image", format!("prompt {:?} vs bottleneck {:?}", g.shape(p), g.shape(bottleneck))));
                }
                g.add(bottleneck, p)?
            }
            None => bottleneck,
        };
        self.decode(g, z)
    }
}
