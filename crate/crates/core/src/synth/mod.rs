//! Synthetic datasets: oracle scenes seen from cameras on a sphere, and style textures.

pub mod oracle;
pub mod styles;

use std::path::Path;

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::io::{self, f32t, png, Frame, SceneDataset, SceneManifest, Split};
use crate::render::Camera;
pub use oracle::{OracleScene, SCENE_NAMES};
pub use styles::{constant_style, synth_styles, texture, Pattern, STYLE_SIZE};

pub const ORACLE_FILE: &str = "oracle.json";
pub const PATH_FILE: &str = "path.json";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub resolution: usize,
    pub distance: f64,
    /// Focal length as a multiple of the image width.
    pub focal: f64,
    /// Every `test_every`-th view (counting from 1) is held out.
    pub test_every: usize,
    pub path_frames: usize,
    pub path_elevation_deg: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { resolution: 128, distance: 3.2, focal: 137.0 / 128.0, test_every: 9, path_frames: 60, path_elevation_deg: 20.0 }
    }
}

impl SynthOptions {
    fn near_far(&self, scene: &OracleScene) -> (f64, f64) {
        let r = geom::norm(scene.bbox.extent()) / 2.0;
        ((self.distance - r).max(1e-3), self.distance + r)
    }

    fn camera_at(&self, scene: &OracleScene, eye: Vec3) -> Camera {
        let (near, far) = self.near_far(scene);
        let n = self.resolution;
        Camera::look_at(eye, scene.bbox.center(), [0.0, 1.0, 0.0], n, n, self.focal * n as f64, near, far)
    }
}

/// Roughly uniform directions on the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), y, r * phi.sin()]
        })
        .collect()
}

/// In-memory synthetic dataset.
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub oracle: OracleScene,
    pub cameras: Vec<Camera>,
    pub splits: Vec<Split>,
    pub images: Vec<Tensor<f32>>,
    pub depths: Vec<Tensor<f32>>,
    /// Orbit used for consistency evaluation.
    pub path: Vec<Camera>,
}

pub fn synth_scene(spec: &str, seed: u64, views: usize, opts: &SynthOptions) -> Result<SynthScene> {
    if views < 2 {
        return Err(Error::invalid(format!("at least 2 views are required, got {views}")));
    }
    let oracle = OracleScene::named(spec, seed)?;
    let cameras: Vec<Camera> =
        fibonacci_sphere(views).into_iter().map(|d| opts.camera_at(&oracle, geom::scale(d, opts.distance))).collect();
    let mut splits: Vec<Split> = (0..views)
        .map(|k| if opts.test_every > 0 && (k + 1) % opts.test_every == 0 { Split::Test } else { Split::Train })
        .collect();
    if splits.iter().filter(|&&s| s == Split::Train).count() < 2 {
        splits.iter_mut().for_each(|s| *s = Split::Train);
    }
    let mut images = Vec::with_capacity(views);
    let mut depths = Vec::with_capacity(views);
    for cam in &cameras {
        let (img, depth) = oracle.render(cam)?;
        images.push(img);
        depths.push(depth);
    }
    let elev = opts.path_elevation_deg.to_radians();
    let path = (0..opts.path_frames)
        .map(|i| {
            let az = std::f64::consts::TAU * i as f64 / opts.path_frames as f64;
            let d = [elev.cos() * az.sin(), elev.sin(), -elev.cos() * az.cos()];
            opts.camera_at(&oracle, geom::scale(d, opts.distance))
        })
        .collect();
    Ok(SynthScene { oracle, cameras, splits, images, depths, path })
}

impl SynthScene {
    pub fn manifest(&self) -> SceneManifest {
        let c = &self.cameras[0];
        SceneManifest {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            near: c.near,
            far: c.far,
            bbox: Some(self.oracle.bbox),
            frames: self
                .cameras
                .iter()
                .zip(&self.splits)
                .enumerate()
                .map(|(i, (cam, &split))| Frame {
                    image: format!("images/{i:03}.f32t"),
                    c2w: cam.c2w,
                    split,
                    depth: Some(format!("depth/{i:03}.f32t")),
                })
                .collect(),
        }
    }

    /// Writes manifest, `.f32t` + PNG images, depth maps, oracle description and orbit path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        io::ensure_dir(dir)?;
        let manifest = self.manifest();
        for (i, frame) in manifest.frames.iter().enumerate() {
            f32t::save(dir.join(&frame.image), &self.images[i])?;
            png::save_rgb(dir.join(frame.image.replace(".f32t", ".png")), &self.images[i])?;
            f32t::save(dir.join(frame.depth.as_ref().unwrap()), &self.depths[i])?;
        }
        manifest.save(dir)?;
        io::write_json(dir.join(ORACLE_FILE), &self.oracle)?;
        io::write_json(dir.join(PATH_FILE), &self.path)
    }

    /// Same data as [`SceneDataset::load`] would return after [`save`](Self::save), without disk.
    pub fn dataset(&self) -> SceneDataset {
        SceneDataset { manifest: self.manifest(), root: Default::default(), images: self.images.clone() }
    }
}

pub fn load_oracle(scene_dir: impl AsRef<Path>) -> Result<OracleScene> {
    io::read_json(scene_dir.as_ref().join(ORACLE_FILE))
}

/// Writes styles as `style_NNN.f32t` plus PNG previews.
pub fn save_styles(dir: impl AsRef<Path>, styles: &[Tensor<f32>]) -> Result<()> {
    let dir = dir.as_ref();
    io::ensure_dir(dir)?;
    for (i, s) in styles.iter().enumerate() {
        f32t::save(dir.join(format!("style_{i:03}.f32t")), s)?;
        png::save_rgb(dir.join(format!("style_{i:03}.png")), s)?;
    }
    Ok(())
}

/// Loads every `.f32t` image of a directory in file-name order.
pub fn load_image_dir(dir: impl AsRef<Path>) -> Result<Vec<Tensor<f32>>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "f32t"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no .f32t images in {}", dir.display())));
    }
    paths.iter().map(f32t::load).collect()
}
