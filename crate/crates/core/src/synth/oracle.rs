//! Analytic signed-distance scenes with procedural albedo, rendered by sphere tracing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::geom::{self, Aabb, Vec3};
use crate::render::Camera;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    RoundBox { center: Vec3, half: Vec3, round: f64 },
}

impl Primitive {
    pub fn sdf(&self, p: Vec3) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => geom::norm(geom::sub(p, *center)) - radius,
            Primitive::RoundBox { center, half, round } => {
                let q = geom::sub(p, *center);
                let d = [0, 1, 2].map(|a| q[a].abs() - (half[a] - round));
                let outside = geom::norm(d.map(|v| v.max(0.0)));
                outside + d[0].max(d[1]).max(d[2]).min(0.0) - round
            }
        }
    }
}

/// Polynomial smooth minimum; never exceeds `min(a, b)` and keeps the field 1-Lipschitz.
pub fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return a.min(b);
    }
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b + (a - b) * h - k * h * (1.0 - h)
}

/// One sinusoidal term per colour channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub freq: Vec3,
    pub phase: f64,
    pub amp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Albedo {
    pub base: [f64; 3],
    pub waves: [Vec<Wave>; 3],
}

impl Albedo {
    /// Smooth, low-frequency colour field; values stay within `[0.05, 0.95]`.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let base = [0, 1, 2].map(|_| rng.gen_range(0.45..0.7));
        let waves = [0, 1, 2].map(|_| {
            (0..3)
                .map(|_| {
                    let dir = geom::normalize([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                    Wave { freq: geom::scale(dir, rng.gen_range(1.5..3.5)), phase: rng.gen_range(0.0..std::f64::consts::TAU), amp: rng.gen_range(0.04..0.09) }
                })
                .collect()
        });
        Albedo { base, waves }
    }

    pub fn at(&self, p: Vec3) -> [f64; 3] {
        let mut c = self.base;
        for (ch, waves) in self.waves.iter().enumerate() {
            for w in waves {
                c[ch] += w.amp * (geom::dot(w.freq, p) + w.phase).sin();
            }
            c[ch] = c[ch].clamp(0.05, 0.95);
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleScene {
    pub name: String,
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    pub blend: f64,
    pub albedo: Albedo,
    pub bbox: Aabb,
}

pub const SCENE_NAMES: [&str; 4] = ["sphere", "box", "blend", "twin"];

impl OracleScene {
    pub fn named(name: &str, seed: u64) -> Result<Self> {
        let (primitives, blend) = match name {
            "sphere" => (vec![Primitive::Sphere { center: [0.0; 3], radius: 1.0 }], 0.0),
            "box" => (vec![Primitive::RoundBox { center: [0.0; 3], half: [0.75; 3], round: 0.15 }], 0.0),
            "blend" => (
                vec![
                    Primitive::Sphere { center: [-0.35, 0.0, 0.0], radius: 0.7 },
                    Primitive::RoundBox { center: [0.4, 0.0, 0.0], half: [0.5; 3], round: 0.1 },
                ],
                0.3,
            ),
            "twin" => (
                vec![
                    Primitive::Sphere { center: [0.0, 0.45, 0.0], radius: 0.6 },
                    Primitive::Sphere { center: [0.0, -0.45, 0.0], radius: 0.6 },
                ],
                0.25,
            ),
            other => {
                return Err(Error::invalid(format!("unknown scene spec `{other}` (expected one of {SCENE_NAMES:?})")))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce4e);
        Ok(OracleScene { name: name.into(), seed, primitives, blend, albedo: Albedo::random(&mut rng), bbox: Aabb::cube(1.25) })
    }

    pub fn sdf(&self, p: Vec3) -> f64 {
        let mut d = f64::INFINITY;
        for prim in &self.primitives {
            let v = prim.sdf(p);
            d = if d.is_infinite() { v } else { smooth_min(d, v, self.blend) };
        }
        d
    }

    /// First surface hit along a unit-direction ray within `[near, far]`.
    pub fn trace(&self, origin: Vec3, dir: Vec3, near: f64, far: f64) -> Option<f64> {
        let (t0, t1) = self.bbox.intersect(origin, dir)?;
        let mut t = t0.max(near);
        let end = t1.min(far);
        for _ in 0..1024 {
            if t > end {
                return None;
            }
            let d = self.sdf(geom::mul_add(origin, dir, t));
            if d < 1e-7 {
                return Some(t);
            }
            t += d.max(1e-7);
        }
        None
    }

    /// Unlit albedo image `(H, W, 3)` on a white background and ray-distance depth `(H, W)`, `-1` on misses.
    pub fn render(&self, camera: &Camera) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let (h, w) = (camera.height, camera.width);
        let mut rgb = Vec::with_capacity(h * w * 3);
        let mut depth = Vec::with_capacity(h * w);
        for ray in camera.all_rays() {
            match self.trace(ray.origin, ray.dir, camera.near, camera.far) {
                Some(t) => {
                    rgb.extend(self.albedo.at(ray.at(t)).map(|v| v as f32));
                    depth.push(t as f32);
                }
                None => {
                    rgb.extend([1.0f32; 3]);
                    depth.push(-1.0);
                }
            }
        }
        Ok((Tensor::new(vec![h, w, 3], rgb)?, Tensor::new(vec![h, w], depth)?))
    }

    /// Ray distance to the surface for every pixel, `None` on misses.
    pub fn depth_map(&self, camera: &Camera) -> Vec<Option<f64>> {
        camera.all_rays().iter().map(|r| self.trace(r.origin, r.dir, camera.near, camera.far)).collect()
    }
}
