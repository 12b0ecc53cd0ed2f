use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::{NetVars, StylizerNet};
use super::stats::align_stats;
use crate::cubemap::{cross_gather_index, Cubemap};
use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Seeded iid uniform `[0, 1]` content image `(3, 3F, 4F)` in the cross layout.
pub fn noise_content<T: Scalar>(face_res: usize, seed: u64) -> Result<Tensor<T>> {
    if face_res < 4 || face_res % 4 != 0 {
        return Err(Error::invalid(format!("face resolution must be a positive multiple of 4, got {face_res}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Tensor::from_fn([3, 3 * face_res, 4 * face_res], |_| T::of(rng.gen::<f64>())))
}

fn slice_faces<T: Scalar>(g: &mut Graph<'_, T>, cross: Var) -> Result<Var> {
    let f = g.shape(cross)[1] / 3;
    g.gather(cross, cross_gather_index(f), vec![6, f, f, 3])
}

/// Stylizes the cross-layout noise `z: [3, 3F, 4F]` and slices it into a
/// `[6, F, F, 3]` cubemap tensor.
pub fn generate_style_pattern<T: Scalar>(
    g: &mut Graph<'_, T>,
    net: &NetVars,
    z: Var,
    style: Var,
    prompt: Option<Var>,
) -> Result<Var> {
    let cross = net.stylize(g, z, style, prompt)?;
    slice_faces(g, cross)
}

/// Caches the prompt-independent part of pattern generation, the aligned
/// bottleneck `align(E(z), E(style))`, so each evaluation only runs the decoder.
#[derive(Clone, Debug)]
pub struct PatternGenerator<T> {
    aligned: Tensor<T>,
    face_res: usize,
}

impl<T: Scalar> PatternGenerator<T> {
    /// `z: [3, 3F, 4F]`, `style: [3, h, w]`.
    pub fn new(net: &StylizerNet<T>, z: &Tensor<T>, style: &Tensor<T>) -> Result<Self> {
        let face_res = match *z.shape() {
            [3, h, w] if h % 3 == 0 && w == 4 * (h / 3) => h / 3,
            ref s => return Err(Error::shape("generate_style_pattern", format!("noise must be (3, 3F, 4F), got {s:?}"))),
        };
        let mut g = Graph::new();
        let vars = net.bind(&mut g, false);
        let zc = g.constant_ref(z);
        let sc = g.constant_ref(style);
        let fz = vars.encode(&mut g, zc)?;
        let fs = vars.encode(&mut g, sc)?;
        let aligned = align_stats(&mut g, fz, fs)?;
        Ok(PatternGenerator { aligned: g.value(aligned).clone(), face_res })
    }

    pub fn face_res(&self) -> usize {
        self.face_res
    }

    pub fn prompt_shape(&self) -> &[usize] {
        self.aligned.shape()
    }

    pub fn zero_prompt(&self) -> Tensor<T> {
        Tensor::zeros(self.aligned.shape().to_vec())
    }

    /// Cubemap tensor `[6, F, F, 3]` inside `g`.
    pub fn generate<'a>(&'a self, g: &mut Graph<'a, T>, net: &NetVars, prompt: Option<Var>) -> Result<Var> {
        let a = g.constant_ref(&self.aligned);
        let cross = net.decode_prompted(g, a, prompt)?;
        slice_faces(g, cross)
    }

    pub fn cubemap(&self, net: &StylizerNet<T>, prompt: Option<&Tensor<T>>) -> Result<Cubemap<T>> {
        let mut g = Graph::new();
        let vars = net.bind(&mut g, false);
        let p = prompt.map(|p| g.constant_ref(p));
        let c = self.generate(&mut g, &vars, p)?;
        Cubemap::from_tensor(g.value(c).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubemap::CROSS_CELLS;

    #[test]
    fn noise_is_seeded_uniform() {
        let a = noise_content::<f64>(8, 3).unwrap();
        assert_eq!(a.shape(), &[3, 24, 32]);
        assert_eq!(a, noise_content::<f64>(8, 3).unwrap());
        assert_ne!(a, noise_content::<f64>(8, 4).unwrap());
        assert!(a.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        assert!(noise_content::<f64>(6, 0).is_err());
    }

    #[test]
    fn cached_generator_matches_direct_path() {
        let net = StylizerNet::<f64>::new(4);
        let z = noise_content::<f64>(8, 1).unwrap();
        let style = Tensor::from_fn([3, 16, 16], |i| 0.5 + 0.4 * (i as f64 * 0.3).sin());
        let gen = PatternGenerator::new(&net, &z, &style).unwrap();
        let prompt = Tensor::from_fn(gen.prompt_shape().to_vec(), |i| 0.01 * (i as f64).cos());
        let cached = gen.cubemap(&net, Some(&prompt)).unwrap();

        let mut g = Graph::new();
        let vars = net.bind(&mut g, false);
        let (zc, sc, pc) = (g.constant_ref(&z), g.constant_ref(&style), g.constant_ref(&prompt));
        let direct = generate_style_pattern(&mut g, &vars, zc, sc, Some(pc)).unwrap();
        assert_eq!(g.value(direct), cached.tensor());

        // Face +Z sits in cross cell (1, 1): its first texel is cross pixel (8, 8).
        let cross = net.stylize_image(&z, &style, Some(&prompt)).unwrap();
        let (cr, cc) = CROSS_CELLS[4];
        let px = cross.data()[(cr * 8) * 32 + cc * 8];
        assert_eq!(cached.texel(4, 0, 0)[0], px);
    }

    #[test]
    fn prompt_gradient_reaches_every_face() {
        let net = StylizerNet::<f64>::new(9);
        let z = noise_content::<f64>(4, 2).unwrap();
        let style = Tensor::from_fn([3, 16, 16], |i| (i as f64 * 0.11).sin().abs());
        let gen = PatternGenerator::new(&net, &z, &style).unwrap();
        let prompt = gen.zero_prompt();
        for face in 0..6 {
            let mut g = Graph::new();
            let vars = net.bind(&mut g, false);
            let p = g.variable(prompt.clone());
            let c = gen.generate(&mut g, &vars, Some(p)).unwrap();
            let idx: Vec<usize> = (face * 48..(face + 1) * 48).collect();
            let sel = g.gather(c, idx, vec![48]).unwrap();
            let l = g.sum(sel).unwrap();
            let grads = g.backward(l).unwrap();
            assert!(grads.wrt(p).unwrap().data().iter().any(|&v| v != 0.0), "face {face}");
        }
    }
}
