//! Six-face cubemaps addressed by unit directions.
//!
//! Faces are ordered `+X, −X, +Y, −Y, +Z, −Z`. A face with normal `N`, right
//! axis `R` and up axis `U` covers the directions `N + (2a − 1)·R + (1 − 2b)·U`
//! for `(a, b) ∈ [0, 1]²`; `a` runs along texel columns and `b` along rows.
//!
//! | face | R          | U          |
//! |------|------------|------------|
//! | +X   | (0, 0, −1) | (0, 1, 0)  |
//! | −X   | (0, 0, 1)  | (0, 1, 0)  |
//! | +Y   | (1, 0, 0)  | (0, 0, −1) |
//! | −Y   | (1, 0, 0)  | (0, 0, 1)  |
//! | +Z   | (1, 0, 0)  | (0, 1, 0)  |
//! | −Z   | (−1, 0, 0) | (0, 1, 0)  |
//!
//! The horizontal cross is 3F rows by 4F columns:
//!
//! ```text
//!        +Y
//!    −X  +Z  +X  −Z
//!        −Y
//! ```

use std::path::Path;

use crate::diff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::io::{f32t, png};
use crate::scalar::Scalar;
use crate::scene::SceneModel;

pub const FACE_NAMES: [&str; 6] = ["+X", "-X", "+Y", "-Y", "+Z", "-Z"];

/// `(normal, right, up)` per face.
const BASIS: [(Vec3, Vec3, Vec3); 6] = [
    ([1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]),
    ([-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
    ([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]),
    ([0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
    ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
    ([0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
];

/// `(row, column)` cell of each face in the horizontal cross.
pub const CROSS_CELLS: [(usize, usize); 6] = [(1, 2), (1, 0), (0, 1), (2, 1), (1, 1), (1, 3)];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceUv {
    pub face: usize,
    pub a: f64,
    pub b: f64,
}

/// Face of the dominant axis (ties go to X, then Y, then Z; zero goes positive)
/// and the perspective-projected in-face coordinates.
pub fn sphere_to_face(s: Vec3) -> FaceUv {
    let abs = s.map(f64::abs);
    let axis = if abs[0] >= abs[1] && abs[0] >= abs[2] {
        0
    } else if abs[1] >= abs[2] {
        1
    } else {
        2
    };
    let face = 2 * axis + usize::from(s[axis] < 0.0);
    let (n, r, u) = BASIS[face];
    let depth = geom::dot(s, n);
    let uc = geom::dot(s, r) / depth;
    let vc = geom::dot(s, u) / depth;
    FaceUv { face, a: ((uc + 1.0) / 2.0).clamp(0.0, 1.0), b: ((1.0 - vc) / 2.0).clamp(0.0, 1.0) }
}

pub fn face_to_sphere(f: FaceUv) -> Vec3 {
    let (n, r, u) = BASIS[f.face];
    let d = geom::add(n, geom::add(geom::scale(r, 2.0 * f.a - 1.0), geom::scale(u, 1.0 - 2.0 * f.b)));
    geom::normalize(d)
}

/// Continuous texel coordinates `(face, x, y)` of a direction, texel centres at integers.
pub fn texel_coords(face_res: usize, s: Vec3) -> (usize, f64, f64) {
    let f = sphere_to_face(s);
    let res = face_res as f64;
    (f.face, f.a * res - 0.5, f.b * res - 0.5)
}

/// Direction through the centre of texel `(row, col)` of `face`.
pub fn texel_direction(face_res: usize, face: usize, row: usize, col: usize) -> Vec3 {
    let res = face_res as f64;
    face_to_sphere(FaceUv { face, a: (col as f64 + 0.5) / res, b: (row as f64 + 0.5) / res })
}

/// Six `F×F` RGB faces stored as a `(6, F, F, 3)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Cubemap<T> {
    texels: Tensor<T>,
}

impl<T: Scalar> Cubemap<T> {
    pub fn from_tensor(texels: Tensor<T>) -> Result<Self> {
        match *texels.shape() {
            [6, f, f2, 3] if f == f2 && f >= 2 => Ok(Cubemap { texels }),
            ref s => Err(Error::shape("cubemap", format!("expected (6, F, F, 3) with F ≥ 2, got {s:?}"))),
        }
    }

    pub fn constant(face_res: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::from_tensor(Tensor::from_fn([6, face_res, face_res, 3], |i| T::of(rgb[i % 3])))
    }

    pub fn face_res(&self) -> usize {
        self.texels.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.texels
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.texels
    }

    pub fn texel(&self, face: usize, row: usize, col: usize) -> [T; 3] {
        let f = self.face_res();
        let i = ((face * f + row) * f + col) * 3;
        let d = self.texels.data();
        [d[i], d[i + 1], d[i + 2]]
    }

    /// Bilinear lookup, clamped within the face.
    pub fn sample(&self, s: Vec3) -> [f64; 3] {
        let f = self.face_res();
        let (face, x, y) = texel_coords(f, s);
        let (idx, w) = crate::diff::graph::bilinear_taps(f, f, x, y);
        let mut out = [0.0; 3];
        for (&i, w) in idx.iter().zip(w) {
            let base = (face * f * f + i as usize) * 3;
            for (c, o) in out.iter_mut().enumerate() {
                *o += w * self.texels.data()[base + c].f64();
            }
        }
        out
    }

    /// `(3F, 4F, 3)` horizontal cross; unused cells are filled with `fill`.
    pub fn to_cross(&self, fill: [f64; 3]) -> Tensor<T> {
        let f = self.face_res();
        let (h, w) = (3 * f, 4 * f);
        let mut out = Tensor::from_fn([h, w, 3], |i| T::of(fill[i % 3]));
        for (face, &(cr, cc)) in CROSS_CELLS.iter().enumerate() {
            for r in 0..f {
                for c in 0..f {
                    let px = ((cr * f + r) * w + cc * f + c) * 3;
                    out.data_mut()[px..px + 3].copy_from_slice(&self.texel(face, r, c));
                }
            }
        }
        out
    }

    /// Mean colour over all texels.
    pub fn mean_color(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (i, v) in self.texels.data().iter().enumerate() {
            m[i % 3] += v.f64();
        }
        let n = (self.texels.len() / 3) as f64;
        m.map(|v| v / n)
    }

    /// Per face, the largest colour distance between horizontally or
    /// vertically adjacent texels.
    pub fn max_local_gradient(&self) -> [f64; 6] {
        let f = self.face_res();
        let dist = |a: [T; 3], b: [T; 3]| (0..3).map(|c| (a[c] - b[c]).f64().powi(2)).sum::<f64>().sqrt();
        std::array::from_fn(|face| {
            let mut m = 0.0f64;
            for r in 0..f {
                for c in 0..f {
                    let t = self.texel(face, r, c);
                    if c + 1 < f {
                        m = m.max(dist(t, self.texel(face, r, c + 1)));
                    }
                    if r + 1 < f {
                        m = m.max(dist(t, self.texel(face, r + 1, c)));
                    }
                }
            }
            m
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        f32t::save(path, &self.texels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(f32t::load(path)?)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        png::save_rgb(path, &self.to_cross([0.0; 3]))
    }
}

/// Flat indices into a channel-first `(3, 3F, 4F)` cross image, ordered like
/// the `(6, F, F, 3)` cubemap layout. Used to slice faces out inside a graph.
pub fn cross_gather_index(face_res: usize) -> Vec<usize> {
    let f = face_res;
    let (h, w) = (3 * f, 4 * f);
    let mut idx = Vec::with_capacity(6 * f * f * 3);
    for &(cr, cc) in &CROSS_CELLS {
        for r in 0..f {
            for c in 0..f {
                for ch in 0..3 {
                    idx.push((ch * h + cr * f + r) * w + cc * f + c);
                }
            }
        }
    }
    idx
}

/// View direction used when baking view-dependent appearance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BakeView {
    /// Every texel seen along the same direction.
    Fixed(Vec3),
    /// Each texel seen head-on, looking towards the sphere centre.
    Inward,
}

impl Default for BakeView {
    fn default() -> Self {
        BakeView::Fixed([0.0, 0.0, 1.0])
    }
}

/// Bakes the appearance network into a cubemap: each texel holds the colour of
/// its centre direction.
pub fn bake_appearance_cubemap<T: Scalar>(model: &SceneModel<T>, face_res: usize, view: BakeView) -> Result<Cubemap<T>> {
    if face_res < 2 {
        return Err(Error::invalid(format!("face resolution must be at least 2, got {face_res}")));
    }
    let f = face_res;
    let dirs: Vec<Vec3> =
        (0..6 * f * f).map(|i| texel_direction(f, i / (f * f), (i / f) % f, i % f)).collect();
    let views: Vec<Vec3> = match view {
        BakeView::Fixed(d) => vec![geom::normalize(d); dirs.len()],
        BakeView::Inward => dirs.iter().map(|&s| geom::scale(s, -1.0)).collect(),
    };
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let s = g.constant(Tensor::new(vec![dirs.len(), 3], dirs.iter().flatten().map(|&v| T::of(v)).collect())?);
    let c = model.appearance_at(&mut g, &vars, s, &views)?;
    Cubemap::from_tensor(g.value(c).clone().reshape(vec![6, f, f, 3])?)
}
