//! Scene manifests: one JSON file with intrinsics, bounds and per-frame poses.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::f32t;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::geom::{self, Aabb, Mat4};
use crate::render::Camera;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Relative path of the `.f32t` image.
    pub image: String,
    pub c2w: Mat4,
    pub split: Split,
    /// Relative path of a `.f32t` ray-distance map (`-1` where the ray misses).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<Aabb>,
    pub frames: Vec<Frame>,
}

impl SceneManifest {
    pub fn camera(&self, frame: usize) -> Camera {
        Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            c2w: self.frames[frame].c2w,
            near: self.near,
            far: self.far,
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.frames.iter().enumerate().filter(|(_, f)| f.split == split).map(|(i, _)| i).collect()
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Manifest("image extents must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Manifest("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Manifest(format!("need 0 < near < far, got {} and {}", self.near, self.far)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            let (dev, det) = geom::rigidity(&f.c2w);
            if dev >= 1e-5 || (det - 1.0).abs() >= 1e-5 {
                return Err(Error::Manifest(format!(
                    "frame {i} ({}): camera matrix is not rigid (|RᵀR−I| = {dev:e}, det = {det})",
                    f.image
                )));
            }
            if f.c2w[3] != [0.0, 0.0, 0.0, 1.0] {
                return Err(Error::Manifest(format!("frame {i} ({}): last matrix row must be 0 0 0 1", f.image)));
            }
        }
        if self.indices(Split::Train).len() < 2 {
            return Err(Error::Manifest("at least 2 train frames are required".into()));
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads and validates a manifest (a scene directory or the JSON file itself),
/// checking every image exists with the declared extents.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(SceneManifest, PathBuf)> {
    let file = manifest_path(path.as_ref());
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let m: SceneManifest = serde_json::from_str(&text)?;
    m.validate()?;
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    for (i, f) in m.frames.iter().enumerate() {
        let shape = f32t::peek_shape(root.join(&f.image))
            .map_err(|e| Error::Manifest(format!("frame {i} ({}): {e}", f.image)))?;
        if shape != [m.height, m.width, 3] {
            return Err(Error::Manifest(format!(
                "frame {i} ({}): extents {shape:?}, manifest declares ({}, {}, 3)",
                f.image, m.height, m.width
            )));
        }
    }
    Ok((m, root))
}

/// Manifest plus decoded images.
#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub manifest: SceneManifest,
    pub root: PathBuf,
    pub images: Vec<Tensor<f32>>,
}

impl SceneDataset {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (manifest, root) = load_manifest(path)?;
        let images = manifest.frames.iter().map(|f| f32t::load(root.join(&f.image))).collect::<Result<_>>()?;
        Ok(SceneDataset { manifest, root, images })
    }

    pub fn camera(&self, frame: usize) -> Camera {
        self.manifest.camera(frame)
    }

    pub fn train(&self) -> Vec<usize> {
        self.manifest.indices(Split::Train)
    }

    pub fn test(&self) -> Vec<usize> {
        self.manifest.indices(Split::Test)
    }

    pub fn depth(&self, frame: usize) -> Result<Option<Tensor<f32>>> {
        self.manifest.frames[frame].depth.as_ref().map(|p| f32t::load(self.root.join(p))).transpose()
    }

    /// Bounding box from the manifest, or one enclosing the near/far shell otherwise.
    pub fn bbox(&self) -> Aabb {
        self.manifest.bbox.unwrap_or_else(|| Aabb::cube(self.manifest.far))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity() -> Mat4 {
        [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -3.0], [0.0, 0.0, 0.0, 1.0]]
    }

    fn manifest(frames: Vec<Frame>) -> SceneManifest {
        SceneManifest { width: 4, height: 2, fx: 4.0, fy: 4.0, cx: 2.0, cy: 1.0, near: 1.0, far: 5.0, bbox: None, frames }
    }

    fn frame(name: &str, c2w: Mat4) -> Frame {
        Frame { image: name.into(), c2w, split: Split::Train, depth: None }
    }

    #[test]
    fn non_rigid_frame_is_named() {
        let mut bad = identity();
        bad[0][0] = 2.0;
        let m = manifest(vec![frame("a.f32t", identity()), frame("b.f32t", bad)]);
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("frame 1 (b.f32t)"), "{err}");
    }

    #[test]
    fn loads_and_checks_extents() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(vec![frame("a.f32t", identity()), frame("b.f32t", identity())]);
        f32t::save(dir.path().join("a.f32t"), &Tensor::<f32>::zeros([2, 4, 3])).unwrap();
        f32t::save(dir.path().join("b.f32t"), &Tensor::<f32>::zeros([2, 4, 3])).unwrap();
        m.save(dir.path()).unwrap();
        let ds = SceneDataset::load(dir.path()).unwrap();
        assert_eq!(ds.train(), vec![0, 1]);

        f32t::save(dir.path().join("b.f32t"), &Tensor::<f32>::zeros([3, 4, 3])).unwrap();
        let err = load_manifest(dir.path()).unwrap_err().to_string();
        assert!(err.contains("frame 1"), "{err}");
    }

    #[test]
    fn single_train_frame_rejected() {
        let m = manifest(vec![frame("a.f32t", identity())]);
        assert!(m.validate().is_err());
    }
}
