use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ensure_dir, f32t, png, read_json, write_json};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::render::Camera;

pub const CAMERAS_FILE: &str = "cameras.json";
pub const RENDER_INFO_FILE: &str = "render.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderInfo {
    pub frames: usize,
    /// Density voxel edge of the rendered model, when one was used.
    pub voxel_size: Option<f64>,
    pub stylized: bool,
}

/// A rendered camera sequence: `(H, W, 3)` images and optional `(H, W)` ray
/// distances (negative where nothing was hit).
#[derive(Clone, Debug)]
pub struct RenderSet {
    pub info: RenderInfo,
    pub cameras: Vec<Camera>,
    pub images: Vec<Tensor<f32>>,
    pub depths: Vec<Option<Tensor<f32>>>,
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:04}")
}

fn depth_name(i: usize) -> String {
    format!("depth_{i:04}.f32t")
}

impl RenderSet {
    pub fn new(cameras: Vec<Camera>, images: Vec<Tensor<f32>>, depths: Vec<Option<Tensor<f32>>>, voxel_size: Option<f64>, stylized: bool) -> Result<Self> {
        if cameras.len() != images.len() || cameras.len() != depths.len() {
            return Err(Error::invalid("render set needs one image and depth slot per camera"));
        }
        for (i, (c, img)) in cameras.iter().zip(&images).enumerate() {
            if img.shape() != [c.height, c.width, 3] {
                return Err(Error::shape("render set", format!("frame {i}: image {:?} for a {}x{} camera", img.shape(), c.width, c.height)));
            }
        }
        Ok(RenderSet { info: RenderInfo { frames: cameras.len(), voxel_size, stylized }, cameras, images, depths })
    }

    /// Writes PNG and `.f32t` per frame, depths, `cameras.json` and `render.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        ensure_dir(dir)?;
        for (i, img) in self.images.iter().enumerate() {
            png::save_rgb(dir.join(format!("{}.png", frame_name(i))), img)?;
            f32t::save(dir.join(format!("{}.f32t", frame_name(i))), img)?;
            if let Some(d) = &self.depths[i] {
                f32t::save(dir.join(depth_name(i)), d)?;
            }
        }
        write_json(dir.join(CAMERAS_FILE), &self.cameras)?;
        write_json(dir.join(RENDER_INFO_FILE), &self.info)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cameras: Vec<Camera> = read_json(dir.join(CAMERAS_FILE))?;
        let info: RenderInfo = match read_json(dir.join(RENDER_INFO_FILE)) {
            Ok(i) => i,
            Err(_) => RenderInfo { frames: cameras.len(), voxel_size: None, stylized: false },
        };
        let images = (0..cameras.len()).map(|i| f32t::load(dir.join(format!("{}.f32t", frame_name(i))))).collect::<Result<Vec<_>>>()?;
        let depths = (0..cameras.len())
            .map(|i| {
                let p = dir.join(depth_name(i));
                p.exists().then(|| f32t::load(p)).transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut set = Self::new(cameras, images, depths, info.voxel_size, info.stylized)?;
        set.info = info;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cam = Camera::look_at([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 4, 2, 4.0, 0.1, 5.0);
        let img = Tensor::from_fn([2, 4, 3], |i| i as f32 / 24.0);
        let depth = Tensor::from_fn([2, 4], |i| i as f32 - 1.0);
        let set = RenderSet::new(vec![cam.clone(), cam], vec![img.clone(), img], vec![Some(depth), None], Some(0.1), true).unwrap();
        set.save(dir.path()).unwrap();
        let back = RenderSet::load(dir.path()).unwrap();
        assert_eq!(back.info, set.info);
        assert_eq!(back.images[1].data(), set.images[1].data());
        assert_eq!(back.depths[0].as_ref().unwrap().data(), set.depths[0].as_ref().unwrap().data());
        assert!(back.depths[1].is_none());
    }
}
