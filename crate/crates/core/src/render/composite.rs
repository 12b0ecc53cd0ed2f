use rand::Rng;

use crate::error::{Error, Result};

/// Sample depths and spacings over `[near, far]` split into `n` equal bins.
/// Deterministic samples sit at bin centres; stratified ones are jittered
/// uniformly inside their bin. The last spacing runs to `far`.
pub fn sample_depths<R: Rng>(near: f64, far: f64, n: usize, jitter: Option<&mut R>) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid("at least one sample per ray is required"));
    }
    let step = (far - near) / n as f64;
    let t: Vec<f64> = match jitter {
        None => (0..n).map(|i| near + (i as f64 + 0.5) * step).collect(),
        Some(rng) => (0..n).map(|i| near + (i as f64 + rng.gen::<f64>()) * step).collect(),
    };
    let delta = (0..n).map(|i| if i + 1 < n { t[i + 1] - t[i] } else { far - t[i] }).collect();
    Ok((t, delta))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
}

/// Emission–absorption compositing over a white-or-other background.
pub fn composite(sigma: &[f64], colors: &[[f64; 3]], delta: &[f64], background: [f64; 3]) -> Composite {
    let mut acc = 0.0f64;
    let mut weights = Vec::with_capacity(sigma.len());
    let mut transmittance = Vec::with_capacity(sigma.len());
    let mut rgb = [0.0; 3];
    for i in 0..sigma.len() {
        let t = (-acc).exp();
        let tau = sigma[i] * delta[i];
        let w = t * -(-tau).exp_m1();
        for c in 0..3 {
            rgb[c] += w * colors[i][c];
        }
        acc += tau;
        transmittance.push(t);
        weights.push(w);
    }
    let total: f64 = weights.iter().sum();
    for c in 0..3 {
        rgb[c] += (1.0 - total) * background[c];
    }
    Composite { rgb, weights, transmittance }
}

/// `Σ wᵢ tᵢ / Σ wᵢ`, or `None` when the weights sum to at most `eps`.
pub fn expected_depth(weights: &[f64], depths: &[f64], eps: f64) -> Option<f64> {
    let total: f64 = weights.iter().sum();
    (total > eps).then(|| weights.iter().zip(depths).map(|(w, t)| w * t).sum::<f64>() / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_bin() {
        let (t, d) = sample_depths::<ChaCha8Rng>(1.0, 3.0, 1, None).unwrap();
        assert_eq!((t, d), (vec![2.0], vec![1.0]));
    }

    #[test]
    fn four_bins() {
        let (t, d) = sample_depths::<ChaCha8Rng>(0.0, 4.0, 4, None).unwrap();
        assert_eq!(t, vec![0.5, 1.5, 2.5, 3.5]);
        assert_eq!(d, vec![1.0, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn stratified_stays_in_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, d) = sample_depths(2.0, 6.0, 8, Some(&mut rng)).unwrap();
        for (i, &ti) in t.iter().enumerate() {
            assert!(ti >= 2.0 + 0.5 * i as f64 && ti < 2.0 + 0.5 * (i + 1) as f64);
        }
        assert!(d.iter().all(|&v| v > 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_depths(2.0, 6.0, 8, Some(&mut rng)).unwrap().0, t);
    }

    #[test]
    fn empty_and_opaque() {
        let c = composite(&[0.0; 3], &[[0.2; 3]; 3], &[1.0; 3], [1.0; 3]);
        assert_eq!(c.rgb, [1.0; 3]);
        assert!(c.weights.iter().all(|&w| w == 0.0));
        let c = composite(&[50.0, 1.0], &[[0.2, 0.3, 0.4], [0.9; 3]], &[1.0, 1.0], [1.0; 3]);
        assert!((c.weights[0] - 1.0).abs() < 1e-12);
        assert!((c.rgb[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn depth_means() {
        assert_eq!(expected_depth(&[1.0], &[2.0], 1e-6), Some(2.0));
        assert_eq!(expected_depth(&[0.5, 0.5], &[1.0, 3.0], 1e-6), Some(2.0));
        assert_eq!(expected_depth(&[0.0], &[1.0], 1e-6), None);
    }
}
