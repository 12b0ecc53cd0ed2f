//! File formats: `.f32t` tensors, PNG export, scene manifests, camera paths.

pub mod f32t;
pub mod manifest;
pub mod png;
pub mod renders;
pub mod resample;

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};
use crate::render::Camera;

pub use manifest::{load_manifest, Frame, SceneDataset, SceneManifest, Split};
pub use renders::{RenderInfo, RenderSet};
pub use resample::resize_rgb;

pub fn write_json<V: Serialize>(path: impl AsRef<Path>, value: &V) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

/// Writes serializable rows as CSV with a header; `note` lines go first as `# ` comments.
pub fn write_csv<R: Serialize>(path: impl AsRef<Path>, note: &[&str], rows: &[R]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for line in note {
        std::io::Write::write_all(&mut file, format!("# {line}\n").as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<V: DeserializeOwned>(path: impl AsRef<Path>) -> Result<V> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// A camera path is a JSON list of cameras, rendered in order.
pub fn load_camera_path(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let cams: Vec<Camera> = read_json(path)?;
    if cams.is_empty() {
        return Err(Error::invalid("camera path is empty"));
    }
    for (i, c) in cams.iter().enumerate() {
        c.validate().map_err(|e| Error::invalid(format!("camera {i}: {e}")))?;
    }
    Ok(cams)
}

pub fn ensure_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
