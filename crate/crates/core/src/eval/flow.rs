use crate::diff::{bilinear_taps, Tensor};
use crate::error::{Error, Result};
use crate::geom;
use crate::render::Camera;
use crate::scalar::Scalar;

/// Per-pixel displacement on the grid of one view into another view's image
/// plane, with a visibility mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub flow: Vec<[f64; 2]>,
    pub mask: Vec<bool>,
}

impl FlowField {
    pub fn new(width: usize, height: usize) -> Self {
        FlowField { width, height, flow: vec![[0.0; 2]; width * height], mask: vec![false; width * height] }
    }

    /// Fraction of pixels visible in both views.
    pub fn coverage(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len().max(1) as f64
    }
}

/// Unprojects each pixel of `cam_x` at its ray depth, reprojects it into
/// `cam_y`, and masks pixels that leave the frame, lack depth, or whose
/// distance to `cam_y` differs from `depth_y` at the landing pixel by more
/// than `eps`. Depths are distances along unit rays; `None` is invalid.
pub fn exact_flow(depth_x: &[Option<f64>], cam_x: &Camera, depth_y: &[Option<f64>], cam_y: &Camera, eps: f64) -> Result<FlowField> {
    if depth_x.len() != cam_x.pixel_count() || depth_y.len() != cam_y.pixel_count() {
        return Err(Error::shape("exact_flow", "depth maps must match their camera extents"));
    }
    let mut out = FlowField::new(cam_x.width, cam_x.height);
    let eye_y = cam_y.position();
    for (p, d) in depth_x.iter().enumerate() {
        let Some(t) = *d else { continue };
        let ray = cam_x.ray(p);
        let world = ray.at(t);
        let Some((u, v, _)) = cam_y.project(world) else { continue };
        if !(0.0..cam_y.width as f64).contains(&u) || !(0.0..cam_y.height as f64).contains(&v) {
            continue;
        }
        let landing = v as usize * cam_y.width + u as usize;
        let Some(ty) = depth_y[landing] else { continue };
        if (geom::norm(geom::sub(world, eye_y)) - ty).abs() > eps {
            continue;
        }
        let (cx, cy) = ((p % cam_x.width) as f64 + 0.5, (p / cam_x.width) as f64 + 0.5);
        out.flow[p] = [u - cx, v - cy];
        out.mask[p] = true;
    }
    Ok(out)
}

/// Depth map from an `(H, W)` tensor where negative values mark misses.
pub fn depth_from_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<Option<f64>> {
    t.data().iter().map(|&d| (d.f64() >= 0.0).then(|| d.f64())).collect()
}

/// Bilinearly samples `image: (H, W, 3)` at each pixel's displaced position;
/// masked pixels are zero. The result lives on the flow's grid.
pub fn warp<T: Scalar>(image: &Tensor<T>, flow: &FlowField) -> Result<Tensor<T>> {
    let (h, w) = match *image.shape() {
        [h, w, 3] => (h, w),
        ref s => return Err(Error::shape("warp", format!("expected (H, W, 3), got {s:?}"))),
    };
    let d = image.data();
    let mut out = vec![T::zero(); flow.width * flow.height * 3];
    for p in 0..flow.width * flow.height {
        if !flow.mask[p] {
            continue;
        }
        let x = (p % flow.width) as f64 + flow.flow[p][0];
        let y = (p / flow.width) as f64 + flow.flow[p][1];
        let (idx, wts) = bilinear_taps(h, w, T::of(x), T::of(y));
        for c in 0..3 {
            out[3 * p + c] = idx.iter().zip(wts).map(|(&i, wt)| wt * d[3 * i as usize + c]).sum();
        }
    }
    Tensor::new(vec![flow.height, flow.width, 3], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(eye: [f64; 3]) -> Camera {
        Camera::look_at(eye, [eye[0], eye[1], 0.0], [0.0, -1.0, 0.0], 32, 24, 30.0, 0.1, 10.0)
    }

    /// Ray distances to the plane z = 0 for a camera looking along +z.
    fn plane_depth(c: &Camera) -> Vec<Option<f64>> {
        (0..c.pixel_count())
            .map(|p| {
                let r = c.ray(p);
                Some(-r.origin[2] / r.dir[2])
            })
            .collect()
    }

    #[test]
    fn identity_pair_is_zero_flow_on_valid_pixels() {
        let c = cam([0.0, 0.0, -4.0]);
        let mut depth = plane_depth(&c);
        depth[5] = None;
        let f = exact_flow(&depth, &c, &depth, &c, 1e-6).unwrap();
        assert!(f.flow.iter().all(|v| v[0].abs() < 1e-9 && v[1].abs() < 1e-9));
        assert_eq!(f.mask, depth.iter().map(Option::is_some).collect::<Vec<_>>());
    }

    #[test]
    fn translation_gives_uniform_horizontal_flow() {
        // Camera moves +0.2 in x over a fronto-parallel plane at depth 4.
        let (a, b) = (cam([0.0, 0.0, -4.0]), cam([0.2, 0.0, -4.0]));
        let f = exact_flow(&plane_depth(&a), &a, &plane_depth(&b), &b, 0.05).unwrap();
        let expected = -30.0 * 0.2 / 4.0;
        let right = geom::rotate(&a.c2w, [1.0, 0.0, 0.0]);
        let sign = right[0].signum();
        for (v, &m) in f.flow.iter().zip(&f.mask) {
            if m {
                assert!((v[0] - sign * expected).abs() < 1e-9 && v[1].abs() < 1e-9, "{v:?}");
            }
        }
        assert!(f.coverage() > 0.8);
    }

    #[test]
    fn integer_flow_shifts_one_pixel() {
        let img = Tensor::<f64>::from_fn([2, 3, 3], |i| (i / 3) as f64);
        let mut f = FlowField::new(3, 2);
        f.mask = vec![true; 6];
        f.flow = vec![[1.0, 0.0]; 6];
        f.mask[4] = false;
        let out = warp(&img, &f).unwrap();
        let px: Vec<f64> = out.data().chunks(3).map(|c| c[0]).collect();
        assert_eq!(px, vec![1.0, 2.0, 2.0, 4.0, 0.0, 5.0]);
    }
}
