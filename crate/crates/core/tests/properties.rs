use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stylefield::cubemap::{face_to_sphere, sphere_to_face};
use stylefield::diff::{adam_step, AdamState, Graph, ParamSet, Tensor};
use stylefield::eval::{consistency_score, exact_flow, warp, FlowField};
use stylefield::geom::{self, Aabb};
use stylefield::io::f32t;
use stylefield::render::{composite, render_image, render_pixels, Camera, ImageSource, RenderOptions};
use stylefield::scene::{SceneConfig, SceneModel};
use stylefield::stylizer::{noise_content, FeatureBank, StyleStats, StylizerNet};
use stylefield::synth::{synth_scene, SynthOptions};
use stylefield::train::{gas_loss, weighted_cycle};

fn unit(v: [f64; 3]) -> Option<[f64; 3]> {
    (geom::norm(v) > 1e-3).then(|| geom::normalize(v))
}

fn small_scene(seed: u64, density: usize, uv: usize) -> SceneModel<f64> {
    SceneModel::new(SceneConfig::new(Aabb::cube(1.0)).with_resolution(density, uv), seed).unwrap()
}

fn randomize(m: &mut SceneModel<f64>, values: &[f64]) {
    for id in [m.density, m.uv] {
        let shape = m.params.get(id).shape().to_vec();
        let t = Tensor::from_fn(shape, |i| values[i % values.len()]);
        m.params.set(id, t).unwrap();
    }
}

fn camera(eye: [f64; 3], w: usize, h: usize) -> Camera {
    Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], w, h, w as f64, 0.5, 5.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compositing_weights_are_valid(pairs in prop::collection::vec((0.0f64..50.0, 0.0f64..0.2), 1..64)) {
        let (sigma, delta): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let c = composite(&sigma, &vec![[0.5; 3]; sigma.len()], &delta, [1.0; 3]);
        let tau: f64 = sigma.iter().zip(&delta).map(|(s, d)| s * d).sum();
        prop_assert!((c.weights.iter().sum::<f64>() - (1.0 - (-tau).exp())).abs() < 1e-6);
        prop_assert!(c.weights.iter().all(|&w| w >= 0.0));
        prop_assert!(c.transmittance.windows(2).all(|t| t[1] <= t[0]));
    }

    #[test]
    fn adam_with_zero_gradient_is_identity(values in prop::collection::vec(-5.0f64..5.0, 1..20)) {
        let mut params = ParamSet::new();
        params.insert("x", Tensor::new(vec![values.len()], values.clone()).unwrap(), true).unwrap();
        let mut state = AdamState::new(&params, 0.1);
        adam_step(&mut params, &[Tensor::zeros([values.len()])], &mut state).unwrap();
        let id = params.id("x").unwrap();
        prop_assert_eq!(params.get(id).data(), &values[..]);
        prop_assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn cube_face_round_trip(v in prop::array::uniform3(-1.0f64..1.0)) {
        let Some(d) = unit(v) else { return Ok(()) };
        let f = sphere_to_face(d);
        prop_assert!(f.face < 6 && (0.0..=1.0).contains(&f.a) && (0.0..=1.0).contains(&f.b));
        prop_assert_eq!(sphere_to_face(d), f);
        if [f.a, f.b].iter().all(|x| (1e-3..=1.0 - 1e-3).contains(x)) {
            let back = face_to_sphere(f);
            prop_assert!(geom::norm(geom::sub(back, d)) < 1e-6);
            let again = sphere_to_face(back);
            prop_assert!((again.a - f.a).abs() < 1e-6 && (again.b - f.b).abs() < 1e-6);
        }
    }

    #[test]
    fn uv_queries_are_unit(values in prop::collection::vec(-2.0f64..2.0, 7..30), p in prop::array::uniform3(-0.99f64..0.99)) {
        let mut m = small_scene(0, 3, 4);
        randomize(&mut m, &values);
        if let Ok(s) = m.query_uv(p) {
            prop_assert!((geom::norm(s) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn density_is_lipschitz_across_cells(values in prop::collection::vec(-6.0f64..6.0, 5..30), t in 0.0f64..1.0, axis in 0usize..3) {
        let mut m = small_scene(0, 5, 2);
        randomize(&mut m, &values);
        let voxel = m.config.voxel_size();
        let spread = values.iter().cloned().fold(f64::MIN, f64::max) - values.iter().cloned().fold(f64::MAX, f64::min);
        // Straddle the cell boundary nearest to `t` along `axis`.
        let edge = -1.0 + voxel * ((t * 4.0).round());
        let step = 1e-4;
        let mut a = [0.1, -0.2, 0.3];
        a[axis] = (edge - step / 2.0).clamp(-1.0, 1.0 - step);
        let mut b = a;
        b[axis] += step;
        // softplus is 1-Lipschitz; trilinear raw density changes by at most spread/voxel per unit length.
        prop_assert!((m.query_density(a) - m.query_density(b)).abs() <= spread / voxel * step + 1e-12);
    }

    #[test]
    fn rendering_ignores_pixel_order(seed in 0u64..1000) {
        let mut m = small_scene(seed, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..17).map(|i| ((i * 7 + seed as usize) % 11) as f64 - 2.0).collect();
        randomize(&mut m, &vals);
        let cam = camera([0.3, 0.4, 3.0], 6, 5);
        let opts = RenderOptions { samples: 24, chunk: 7, ..RenderOptions::default() };
        let ordered = render_image(&m, &cam, ImageSource::Appearance, &opts).unwrap();
        let mut pixels: Vec<usize> = (0..cam.pixel_count()).collect();
        pixels.shuffle(&mut rng);
        let shuffled = render_pixels(&m, &cam, &pixels, ImageSource::Appearance, &opts).unwrap();
        for (a, b) in ordered.rgb.data().iter().zip(shuffled.rgb.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn f32t_round_trip_is_bit_exact(values in prop::collection::vec(any::<f32>(), 1..64)) {
        let t = Tensor::new(vec![values.len()], values).unwrap();
        let back: Tensor<f32> = f32t::decode(&f32t::encode(&t)).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn consistency_is_nonnegative_and_ignores_unmasked_content(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let bank = FeatureBank::<f64>::new(3);
        let x = Tensor::from_fn([16, 16, 3], |_| rng.gen_range(0.0..1.0));
        let y = Tensor::from_fn([16, 16, 3], |_| rng.gen_range(0.0..1.0));
        let mut flow = FlowField::new(16, 16);
        for p in 0..256 {
            flow.mask[p] = rng.gen_bool(0.6);
            flow.flow[p] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        }
        prop_assume!(flow.mask.iter().any(|&m| m));
        let s = consistency_score(&bank, &x, &y, &flow).unwrap();
        prop_assert!(s.feature >= 0.0 && s.rgb >= 0.0);
        let mut x2 = x.clone();
        for p in (0..256).filter(|&p| !flow.mask[p]) {
            for c in 0..3 {
                x2.data_mut()[3 * p + c] = rng.gen_range(0.0..1.0);
            }
        }
        prop_assert_eq!(consistency_score(&bank, &x2, &y, &flow).unwrap(), s);
        let same = consistency_score(&bank, &x, &warp(&x, &identity(&flow)).unwrap(), &identity(&flow)).unwrap();
        prop_assert_eq!((same.feature, same.rgb), (0.0, 0.0));
    }

    #[test]
    fn identity_camera_pair_flow_is_zero(eye in prop::array::uniform3(1.5f64..3.0), holes in prop::collection::vec(0usize..48, 0..10)) {
        let cam = camera(eye, 8, 6);
        let mut depth: Vec<Option<f64>> = (0..48).map(|p| Some(1.0 + p as f64 * 0.01)).collect();
        for h in holes {
            depth[h] = None;
        }
        let f = exact_flow(&depth, &cam, &depth, &cam, 1e-6).unwrap();
        prop_assert!(f.flow.iter().zip(&f.mask).all(|(v, &m)| !m || (v[0].abs() < 1e-9 && v[1].abs() < 1e-9)));
        prop_assert_eq!(f.mask, depth.iter().map(Option::is_some).collect::<Vec<_>>());
    }
}

/// Zero displacement on the same mask.
fn identity(f: &FlowField) -> FlowField {
    FlowField { flow: vec![[0.0; 2]; f.flow.len()], ..f.clone() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_prompt_equals_no_prompt(seed in 0u64..100) {
        let net = StylizerNet::<f64>::new(seed);
        let z = noise_content::<f64>(4, seed).unwrap();
        let style = noise_content::<f64>(4, seed + 1).unwrap();
        let zero = Tensor::zeros(StylizerNet::<f64>::bottleneck_shape(12, 16).unwrap());
        let a = net.stylize_image(&z, &style, None).unwrap();
        let b = net.stylize_image(&z, &style, Some(&zero)).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn gas_loss_is_nonnegative(seed in 0u64..100) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = FeatureBank::<f64>::new(seed);
        let style = Tensor::from_fn([3, 16, 16], |_| rng.gen_range(0.0..1.0));
        let stats = StyleStats::of(&bank, &style).unwrap();
        let rendered = Tensor::from_fn([256, 3], |_| rng.gen_range(0.0..1.0));
        let ics = Tensor::from_fn([256, 3], |_| rng.gen_range(0.0..1.0));
        let mut g = Graph::new();
        let (r, i) = (g.constant(rendered), g.constant(ics));
        let v = gas_loss(&mut g, &bank, r, i, (16, 16), &stats, 0.1).unwrap().value(&g);
        prop_assert!(v.total >= 0.0 && v.align >= 0.0 && v.style >= 0.0);
        let copy = g.value(r).clone();
        let i2 = g.constant(copy);
        prop_assert_eq!(gas_loss(&mut g, &bank, r, i2, (16, 16), &stats, 0.1).unwrap().value(&g).align, 0.0);
    }

    #[test]
    fn cycle_loss_ignores_sample_order(seed in 0u64..100) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = small_scene(seed, 3, 3);
        let n = 9;
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let s: Vec<[f64; 3]> = (0..n).map(|_| geom::normalize([rng.gen_range(0.1..1.0), rng.gen_range(-1.0..1.0), 0.5])).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let eval = |idx: &[usize], weights: &dyn Fn(usize) -> f64| {
            let mut g = Graph::new();
            let vars = m.bind(&mut g, false);
            let sv = g.constant(Tensor::new(vec![n, 3], idx.iter().flat_map(|&i| s[i]).collect()).unwrap());
            let p: Vec<[f64; 3]> = idx.iter().map(|&i| pts[i]).collect();
            let l = weighted_cycle(&mut g, &m, &vars, sv, &p, idx.iter().map(|&i| weights(i)).collect(), 3).unwrap().unwrap();
            g.value(l).item()
        };
        let ident: Vec<usize> = (0..n).collect();
        prop_assert!((eval(&ident, &|i| w[i]) - eval(&order, &|i| w[i])).abs() < 1e-12);
        prop_assert_eq!(eval(&order, &|_| 0.0), 0.0);
    }
}

#[test]
fn oracle_views_are_warp_consistent() {
    let opts = SynthOptions { resolution: 48, path_frames: 8, ..SynthOptions::default() };
    let scene = synth_scene("blend", 3, 12, &opts).unwrap();
    for (x, y) in [(0, 1), (2, 3), (4, 9)] {
        let (cx, cy) = (&scene.cameras[x], &scene.cameras[y]);
        let (dx, dy) = (scene.oracle.depth_map(cx), scene.oracle.depth_map(cy));
        let flow = exact_flow(&dx, cx, &dy, cy, 0.05).unwrap();
        let pulled = warp(&scene.images[y], &flow).unwrap();
        let (mut err, mut n) = (0.0, 0);
        for p in (0..flow.mask.len()).filter(|&p| flow.mask[p]) {
            for c in 0..3 {
                err += (pulled.data()[3 * p + c] - scene.images[x].data()[3 * p + c]).abs() as f64;
                n += 1;
            }
        }
        assert!(n > 0);
        assert!(err / n as f64 <= 0.02, "pair ({x}, {y}): MAE {}", err / n as f64);
    }
}

#[test]
fn generation_is_a_pure_function_of_seed() {
    let opts = SynthOptions { resolution: 16, path_frames: 4, ..SynthOptions::default() };
    let a = synth_scene("twin", 9, 3, &opts).unwrap();
    let b = synth_scene("twin", 9, 3, &opts).unwrap();
    assert!(a.images.iter().zip(&b.images).all(|(x, y)| x.data() == y.data()));
}
