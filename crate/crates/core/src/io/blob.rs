//! Raw little-endian f32 image blobs with a JSON sidecar describing the
//! shape. Used where 8-bit quantization would destroy precision (latent
//! frames, ground-truth test views).

use super::io_error;
use crate::error::{Error, Result};
use crate::image::Image;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
struct BlobMeta {
    width: usize,
    height: usize,
    channels: usize,
    dtype: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes `img` as packed f32 values plus a `<path>.json` sidecar.
pub fn write_f32_blob(path: &Path, img: &Image) -> Result<()> {
    let meta = BlobMeta {
        width: img.width(),
        height: img.height(),
        channels: img.channels(),
        dtype: "f32le".to_string(),
    };
    let side = sidecar_path(path);
    let meta_text = serde_json::to_string(&meta)
        .map_err(|e| Error::format(format!("sidecar serialization failed: {e}")))?;
    fs::write(&side, meta_text).map_err(|e| io_error(&side, e))?;
    let mut bytes = Vec::with_capacity(img.data().len() * 4);
    for &v in img.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// Reads a blob written by [`write_f32_blob`], using its sidecar for shape.
pub fn read_f32_blob(path: &Path) -> Result<Image> {
    let side = sidecar_path(path);
    let meta_text = fs::read_to_string(&side).map_err(|e| io_error(&side, e))?;
    let meta: BlobMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::format(format!("{}: bad sidecar: {e}", side.display())))?;
    if meta.dtype != "f32le" {
        return Err(Error::format(format!(
            "{}: unsupported dtype {:?}",
            side.display(),
            meta.dtype
        )));
    }
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let expected = meta.width * meta.height * meta.channels * 4;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "{}: expected {expected} bytes for {}x{}x{}, found {}",
            path.display(),
            meta.width,
            meta.height,
            meta.channels,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Image::from_vec(meta.width, meta.height, meta.channels, data)
}
