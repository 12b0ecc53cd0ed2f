//! The disentangled scene: density grid, UV grid onto the unit sphere,
//! appearance network and inverse mapper, all in one [`ParamSet`].

pub mod encoding;
pub mod mlp;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{self, Aabb, Vec3};
use crate::io::{self, f32t};
use crate::scalar::{self, Scalar};
use encoding::{encode, encoded_width};
pub use mlp::{Mlp, MlpVars, Output};

pub const MODEL_FILE: &str = "model.json";
/// Interpolated UV vectors shorter than this cannot be normalized.
pub const UV_DEGENERATE: f64 = 1e-8;

/// Everything needed to rebuild a [`SceneModel`] apart from its values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub density_dims: [usize; 3],
    pub uv_dims: [usize; 3],
    pub bbox: Aabb,
    pub density_bias: f64,
    pub uv_bands: usize,
    pub dir_bands: usize,
    pub hidden: [usize; 2],
}

impl SceneConfig {
    pub fn new(bbox: Aabb) -> Self {
        SceneConfig {
            density_dims: [64; 3],
            uv_dims: [64; 3],
            bbox,
            density_bias: -4.0,
            uv_bands: 4,
            dir_bands: 2,
            hidden: [64, 64],
        }
    }

    pub fn with_resolution(mut self, density: usize, uv: usize) -> Self {
        self.density_dims = [density; 3];
        self.uv_dims = [uv; 3];
        self
    }

    pub fn validate(&self) -> Result<()> {
        Aabb::new(self.bbox.min, self.bbox.max)?;
        if self.density_dims.iter().chain(&self.uv_dims).any(|&d| d < 2) {
            return Err(Error::invalid("grid extents must be at least 2 per axis"));
        }
        Ok(())
    }

    /// Edge length of a density voxel (largest axis).
    pub fn voxel_size(&self) -> f64 {
        let e = self.bbox.extent();
        (0..3).map(|a| e[a] / (self.density_dims[a] - 1) as f64).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct SceneModel<T> {
    pub config: SceneConfig,
    pub params: ParamSet<T>,
    pub density: ParamId,
    pub uv: ParamId,
    pub appearance: Mlp,
    pub inverse: Mlp,
}

/// Graph leaves of a bound [`SceneModel`].
pub struct SceneVars {
    pub density: Var,
    pub uv: Var,
    pub appearance: MlpVars,
    pub inverse: MlpVars,
}

fn grid_coord(bbox: &Aabb, dims: [usize; 3], p: Vec3) -> [f64; 3] {
    let mut c = [0.0; 3];
    for a in 0..3 {
        c[a] = (p[a] - bbox.min[a]) / (bbox.max[a] - bbox.min[a]) * (dims[a] - 1) as f64;
    }
    c
}

fn node_position(bbox: &Aabb, dims: [usize; 3], idx: [usize; 3]) -> Vec3 {
    let mut p = [0.0; 3];
    for a in 0..3 {
        p[a] = bbox.min[a] + (bbox.max[a] - bbox.min[a]) * idx[a] as f64 / (dims[a] - 1) as f64;
    }
    p
}

fn check_unit(what: &str, v: Vec3) -> Result<()> {
    let n = geom::norm(v);
    if (n - 1.0).abs() > 1e-4 {
        return Err(Error::invalid(format!("{what} must be unit length, norm is {n}")));
    }
    Ok(())
}

impl<T: Scalar> SceneModel<T> {
    /// Fresh model: raw density 0, radial UV vectors, seeded MLP weights, inverse
    /// mapper output bias at the box centre.
    pub fn new(config: SceneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let density = params.insert("density", Tensor::zeros(config.density_dims.iter().copied().chain([1]).collect::<Vec<_>>()), true)?;
        let [mx, my, mz] = config.uv_dims;
        let center = config.bbox.center();
        let mut uv = Vec::with_capacity(mx * my * mz * 3);
        for i in 0..mx {
            for j in 0..my {
                for k in 0..mz {
                    let d = geom::sub(node_position(&config.bbox, config.uv_dims, [i, j, k]), center);
                    let n = geom::norm(d);
                    // The centre node (odd extents) has no radial direction.
                    let d = if n > 1e-12 { geom::scale(d, 1.0 / n) } else { [0.0, 0.0, 1.0] };
                    uv.extend(d.iter().map(|&v| T::of(v)));
                }
            }
        }
        let uv = params.insert("uv", Tensor::new(vec![mx, my, mz, 3], uv)?, true)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h1, h2] = config.hidden;
        let app_in = encoded_width(config.uv_bands) + encoded_width(config.dir_bands);
        let appearance = Mlp::register(&mut params, "appearance", &[app_in, h1, h2, 3], Output::Sigmoid, &mut rng)?;
        let inverse =
            Mlp::register(&mut params, "inverse", &[encoded_width(config.uv_bands), h1, h2, 3], Output::Linear, &mut rng)?;
        let (_, last_bias) = *inverse.layers.last().unwrap();
        params.set(last_bias, Tensor::new(vec![3], center.iter().map(|&v| T::of(v)).collect())?)?;
        Ok(SceneModel { config, params, density, uv, appearance, inverse })
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>, track: bool) -> SceneVars {
        let leaf = |g: &mut Graph<'a, T>, id| if track { g.param(&self.params, id) } else { g.constant_ref(self.params.get(id)) };
        SceneVars {
            density: leaf(g, self.density),
            uv: leaf(g, self.uv),
            appearance: self.appearance.bind(g, &self.params, track),
            inverse: self.inverse.bind(g, &self.params, track),
        }
    }

    pub fn density_coords(&self, p: Vec3) -> [T; 3] {
        grid_coord(&self.config.bbox, self.config.density_dims, p).map(T::of)
    }

    pub fn uv_coords(&self, p: Vec3) -> [T; 3] {
        grid_coord(&self.config.bbox, self.config.uv_dims, p).map(T::of)
    }

    /// σ at points inside the box: `[n]`.
    pub fn density_at(&self, g: &mut Graph<'_, T>, vars: &SceneVars, pts: &[Vec3]) -> Result<Var> {
        let coords: Vec<_> = pts.iter().map(|&p| self.density_coords(p)).collect();
        let raw = g.trilinear(vars.density, &coords)?;
        let shifted = g.affine(raw, T::one(), T::of(self.config.density_bias))?;
        let sigma = g.softplus(shifted)?;
        g.reshape(sigma, vec![pts.len()])
    }

    /// Interpolated, unnormalized UV vectors: `[n, 3]`.
    pub fn uv_raw_at(&self, g: &mut Graph<'_, T>, vars: &SceneVars, pts: &[Vec3]) -> Result<Var> {
        let coords: Vec<_> = pts.iter().map(|&p| self.uv_coords(p)).collect();
        g.trilinear(vars.uv, &coords)
    }

    /// Radiance colour for sphere points `s: [n, 3]` seen along unit `dirs`.
    pub fn appearance_at(&self, g: &mut Graph<'_, T>, vars: &SceneVars, s: Var, dirs: &[Vec3]) -> Result<Var> {
        let es = encode(g, s, self.config.uv_bands)?;
        let d = g.constant(Tensor::new(vec![dirs.len(), 3], dirs.iter().flatten().map(|&v| T::of(v)).collect())?);
        let ed = encode(g, d, self.config.dir_bands)?;
        let x = g.concat_cols(es, ed)?;
        vars.appearance.forward(g, x)
    }

    /// World points for sphere points `s: [n, 3]`, clamped to twice the box.
    pub fn inverse_at(&self, g: &mut Graph<'_, T>, vars: &SceneVars, s: Var) -> Result<Var> {
        let es = encode(g, s, self.config.uv_bands)?;
        let out = vars.inverse.forward(g, es)?;
        let (c, e) = (self.config.bbox.center(), self.config.bbox.extent());
        let lo = (0..3).map(|a| T::of(c[a] - e[a])).collect();
        let hi = (0..3).map(|a| T::of(c[a] + e[a])).collect();
        g.clamp_cols(out, lo, hi)
    }

    pub fn query_density(&self, p: Vec3) -> f64 {
        if !self.config.bbox.contains(p) {
            return 0.0;
        }
        let grid = self.params.get(self.density);
        let (idx, w) = crate::diff::graph::trilinear_taps(self.config.density_dims, self.density_coords(p));
        let raw: f64 = idx.iter().zip(w).map(|(&i, w)| w.f64() * grid.data()[i as usize].f64()).sum();
        scalar::softplus(raw + self.config.density_bias)
    }

    /// Interpolated UV vector before normalization.
    pub fn query_uv_raw(&self, p: Vec3) -> Vec3 {
        let grid = self.params.get(self.uv);
        let (idx, w) = crate::diff::graph::trilinear_taps(self.config.uv_dims, self.uv_coords(p));
        let mut out = [0.0; 3];
        for (&i, w) in idx.iter().zip(w) {
            for (a, o) in out.iter_mut().enumerate() {
                *o += w.f64() * grid.data()[i as usize * 3 + a].f64();
            }
        }
        out
    }

    pub fn query_uv(&self, p: Vec3) -> Result<Vec3> {
        if !self.config.bbox.contains(p) {
            return Err(Error::invalid(format!("UV query at {p:?} outside the bounding box")));
        }
        let raw = self.query_uv_raw(p);
        let n = geom::norm(raw);
        if n < UV_DEGENERATE {
            return Err(Error::DegenerateUv { norm: n });
        }
        Ok(geom::scale(raw, 1.0 / n))
    }

    pub fn appearance_color(&self, s: Vec3, d: Vec3) -> Result<[f64; 3]> {
        check_unit("sphere point", s)?;
        check_unit("view direction", d)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let sv = g.constant(Tensor::new(vec![1, 3], s.map(T::of).to_vec())?);
        let c = self.appearance_at(&mut g, &vars, sv, &[d])?;
        let v = g.value(c).data();
        Ok([v[0].f64(), v[1].f64(), v[2].f64()])
    }

    pub fn inverse_map(&self, s: Vec3) -> Result<Vec3> {
        check_unit("sphere point", s)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let sv = g.constant(Tensor::new(vec![1, 3], s.map(T::of).to_vec())?);
        let p = self.inverse_at(&mut g, &vars, sv)?;
        let v = g.value(p).data();
        Ok([v[0].f64(), v[1].f64(), v[2].f64()])
    }

    pub fn cast<U: Scalar>(&self) -> SceneModel<U> {
        SceneModel {
            config: self.config.clone(),
            params: self.params.cast(),
            density: self.density,
            uv: self.uv,
            appearance: self.appearance.clone(),
            inverse: self.inverse.clone(),
        }
    }

    /// Writes `model.json` and one `.f32t` per parameter.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        io::ensure_dir(dir)?;
        io::write_json(dir.join(MODEL_FILE), &self.config)?;
        for id in self.params.ids() {
            f32t::save(dir.join(format!("{}.f32t", self.params.name(id))), self.params.get(id))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config: SceneConfig = io::read_json(dir.join(MODEL_FILE))?;
        let mut model = Self::new(config, 0)?;
        for id in model.params.ids().collect::<Vec<_>>() {
            let t = f32t::load(dir.join(format!("{}.f32t", model.params.name(id))))?;
            model.params.set(id, t)?;
        }
        Ok(model)
    }
}
