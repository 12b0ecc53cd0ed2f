use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Mat4, Vec3};

/// Pinhole camera. Camera space is x right, y down, z forward; pixel `(i, j)`
/// has its centre at `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub c2w: Mat4,
    pub near: f64,
    pub far: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub pixel: usize,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        geom::mul_add(self.origin, self.dir, t)
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid(format!("focal lengths must be positive, got {} {}", self.fx, self.fy)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invalid(format!("need 0 < near < far, got {} {}", self.near, self.far)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image extents must be positive"));
        }
        let (dev, det) = geom::rigidity(&self.c2w);
        if dev >= 1e-5 || (det - 1.0).abs() >= 1e-5 {
            return Err(Error::invalid(format!("camera rotation is not rigid (|RᵀR−I| = {dev:e}, det = {det})")));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: usize, height: usize, fx: f64, near: f64, far: f64) -> Self {
        let f = geom::normalize(geom::sub(target, eye));
        let mut right = geom::cross(f, up);
        if geom::norm(right) < 1e-9 {
            right = geom::cross(f, [1.0, 0.0, 0.0]);
        }
        let right = geom::normalize(right);
        let down = geom::cross(f, right);
        let mut c2w = [[0.0; 4]; 4];
        for r in 0..3 {
            c2w[r] = [right[r], down[r], f[r], eye[r]];
        }
        c2w[3] = [0.0, 0.0, 0.0, 1.0];
        Camera {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            c2w,
            near,
            far,
        }
    }

    pub fn position(&self) -> Vec3 {
        geom::translation(&self.c2w)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unit world-space direction through a continuous image position.
    pub fn direction_at(&self, u: f64, v: f64) -> Vec3 {
        let d = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        geom::normalize(geom::rotate(&self.c2w, d))
    }

    pub fn ray(&self, pixel: usize) -> Ray {
        let (i, j) = (pixel % self.width, pixel / self.width);
        Ray { origin: self.position(), dir: self.direction_at(i as f64 + 0.5, j as f64 + 0.5), pixel }
    }

    pub fn generate_rays(&self, pixels: &[usize]) -> Result<Vec<Ray>> {
        let n = self.pixel_count();
        if let Some(&p) = pixels.iter().find(|&&p| p >= n) {
            return Err(Error::invalid(format!("pixel {p} outside a {}x{} image", self.width, self.height)));
        }
        Ok(pixels.iter().map(|&p| self.ray(p)).collect())
    }

    pub fn all_rays(&self) -> Vec<Ray> {
        (0..self.pixel_count()).map(|p| self.ray(p)).collect()
    }

    /// Image position and camera-space depth `z` of a world point (`None` behind the camera).
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = geom::rotate_inv(&self.c2w, geom::sub(p, self.position()));
        (c[2] > 1e-12).then(|| (self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy, c[2]))
    }

    /// Same camera with the image scaled by `factor` (intrinsics follow).
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let (sx, sy) = (width as f64 / self.width as f64, height as f64 / self.height as f64);
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 64, 48, 50.0, 1.0, 5.0)
    }

    #[test]
    fn principal_point_is_optical_axis() {
        let c = Camera { cx: 10.5, cy: 20.5, ..cam() };
        let r = c.ray(20 * 64 + 10);
        let axis = [c.c2w[0][2], c.c2w[1][2], c.c2w[2][2]];
        assert!(geom::norm(geom::sub(r.dir, axis)) < 1e-12);
    }

    #[test]
    fn one_focal_length_off_axis_is_45_degrees() {
        let c = cam();
        let d = c.direction_at(c.cx + c.fx, c.cy);
        let axis = [c.c2w[0][2], c.c2w[1][2], c.c2w[2][2]];
        assert!((geom::dot(d, axis) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn project_inverts_rays() {
        let c = cam();
        for p in [0, 77, 64 * 48 - 1] {
            let r = c.ray(p);
            let (u, v, _) = c.project(r.at(2.0)).unwrap();
            assert!((u - ((p % 64) as f64 + 0.5)).abs() < 1e-9);
            assert!((v - ((p / 64) as f64 + 0.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn look_at_is_valid() {
        cam().validate().unwrap();
        let bad = Camera { near: 3.0, far: 2.0, ..cam() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn out_of_range_pixel_rejected() {
        assert!(cam().generate_rays(&[64 * 48]).is_err());
    }
}
