//! Procedural style textures: stripes, blobs, colour fields and checkers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const STYLE_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Stripes,
    Blobs,
    Field,
    Checker,
}

const PATTERNS: [Pattern; 4] = [Pattern::Stripes, Pattern::Blobs, Pattern::Field, Pattern::Checker];

fn palette(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..1.0))).collect()
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

/// One `(size, size, 3)` texture in `[0, 1]`.
pub fn texture(pattern: Pattern, size: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::invalid(format!("style extents must be a positive multiple of 16, got {size}")));
    }
    let cols = palette(rng, 4);
    let n = size as f64;
    let pixel: Box<dyn Fn(f64, f64) -> [f64; 3]> = match pattern {
        Pattern::Stripes => {
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let freq = rng.gen_range(3.0..9.0);
            let sharp = rng.gen_range(1.0..6.0);
            let (c0, c1) = (cols[0], cols[1]);
            Box::new(move |x, y| {
                let u = (x * angle.cos() + y * angle.sin()) / n;
                let s = (u * freq * std::f64::consts::TAU).sin();
                mix(c0, c1, 0.5 + 0.5 * (sharp * s).tanh())
            })
        }
        Pattern::Blobs => {
            let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.gen_range(4..9))
                .map(|_| (rng.gen_range(0.0..n), rng.gen_range(0.0..n), rng.gen_range(0.08..0.25) * n, cols[rng.gen_range(1..4)]))
                .collect();
            let bg = cols[0];
            Box::new(move |x, y| {
                let mut c = bg;
                for &(bx, by, r, col) in &blobs {
                    let d2 = ((x - bx).powi(2) + (y - by).powi(2)) / (r * r);
                    c = mix(c, col, (-d2).exp());
                }
                c
            })
        }
        Pattern::Field => {
            let (f1, f2) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            let (p1, p2) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
            let (c0, c1, c2) = (cols[0], cols[1], cols[2]);
            Box::new(move |x, y| {
                let a = 0.5 + 0.5 * (f1 * std::f64::consts::TAU * x / n + p1).sin();
                let b = 0.5 + 0.5 * (f2 * std::f64::consts::TAU * y / n + p2).cos();
                mix(mix(c0, c1, a), c2, b)
            })
        }
        Pattern::Checker => {
            let cells = [4.0, 8.0][rng.gen_range(0..2)];
            let (c0, c1) = (cols[0], cols[1]);
            Box::new(move |x, y| {
                let (i, j) = ((x / n * cells).floor() as i64, (y / n * cells).floor() as i64);
                if (i + j) % 2 == 0 {
                    c0
                } else {
                    c1
                }
            })
        }
    };
    let data = (0..size * size)
        .flat_map(|p| pixel((p % size) as f64 + 0.5, (p / size) as f64 + 0.5).map(|v| v.clamp(0.0, 1.0) as f32))
        .collect();
    Tensor::new(vec![size, size, 3], data)
}

/// `count` textures cycling through the pattern families.
pub fn synth_styles(count: usize, seed: u64, size: usize) -> Result<Vec<Tensor<f32>>> {
    if count == 0 {
        return Err(Error::invalid("style count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.gen_range(0..PATTERNS.len());
    (0..count).map(|i| texture(PATTERNS[(start + i) % PATTERNS.len()], size, &mut rng)).collect()
}

/// A single flat colour: every channel has zero variance.
pub fn constant_style(rgb: [f64; 3], size: usize) -> Result<Tensor<f32>> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::invalid(format!("style extents must be a positive multiple of 16, got {size}")));
    }
    Ok(Tensor::from_fn([size, size, 3], |i| rgb[i % 3] as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_in_range() {
        let a = synth_styles(5, 11, 32).unwrap();
        let b = synth_styles(5, 11, 32).unwrap();
        assert_eq!(a, b);
        for t in &a {
            assert_eq!(t.shape(), &[32, 32, 3]);
            assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn extents_must_divide_by_16() {
        assert!(synth_styles(1, 0, 40).is_err());
        assert!(constant_style([0.1; 3], 24).is_err());
    }

    #[test]
    fn constant_has_no_variance() {
        let t = constant_style([0.2, 0.4, 0.6], 16).unwrap();
        for c in 0..3 {
            let first = t.data()[c];
            assert!(t.data().iter().skip(c).step_by(3).all(|&v| v == first));
        }
    }
}
