//! Gaussian scene serialization, format "GSC1": a little-endian binary blob
//! (magic `GSC1`, u32 count, then 14 f32 values per Gaussian: mean xyz,
//! log-scale xyz, quaternion wxyz, opacity logit, color rgb) plus a JSON
//! manifest sidecar at `<path>.json` recording the count and scene bounds.

use super::io_error;
use crate::error::{Error, Result};
use crate::gsplat::{Gaussian3D, GaussianScene};
use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"GSC1";
const FLOATS_PER_GAUSSIAN: usize = 14;

#[derive(Debug, Serialize, Deserialize)]
struct SceneManifest {
    schema: String,
    count: usize,
    bounds: Option<SceneBounds>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneBounds {
    min: [f64; 3],
    max: [f64; 3],
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes `scene` as a GSC1 blob plus its `<path>.json` manifest.
pub fn write_scene(path: &Path, scene: &GaussianScene) -> Result<()> {
    let manifest = SceneManifest {
        schema: "gsc/1".to_string(),
        count: scene.len(),
        bounds: scene.bounds().map(|(lo, hi)| SceneBounds {
            min: [lo.x, lo.y, lo.z],
            max: [hi.x, hi.y, hi.z],
        }),
    };
    let side = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::format(format!("scene manifest serialization failed: {e}")))?;
    fs::write(&side, text).map_err(|e| io_error(&side, e))?;

    let count = u32::try_from(scene.len())
        .map_err(|_| Error::argument(format!("{} Gaussians exceed u32 count field", scene.len())))?;
    let mut bytes = Vec::with_capacity(8 + scene.len() * FLOATS_PER_GAUSSIAN * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&count.to_le_bytes());
    for g in &scene.gaussians {
        let fields = [
            g.mean.x,
            g.mean.y,
            g.mean.z,
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            g.rotation.w,
            g.rotation.i,
            g.rotation.j,
            g.rotation.k,
            g.opacity_logit,
            g.color.x,
            g.color.y,
            g.color.z,
        ];
        for v in fields {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// Reads a GSC1 blob. The manifest sidecar, when present, must agree on the
/// Gaussian count.
pub fn read_scene(path: &Path) -> Result<GaussianScene> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let name = path.display();
    if bytes.len() < 8 {
        return Err(Error::format(format!(
            "{name}: header truncated at byte offset {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(format!(
            "{name}: bad magic at byte offset 0, expected \"GSC1\", found {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + count * FLOATS_PER_GAUSSIAN * 4;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "{name}: {count} Gaussians need {expected} bytes, file ends at byte offset {}",
            bytes.len()
        )));
    }
    let mut gaussians = Vec::with_capacity(count);
    for i in 0..count {
        let base = 8 + i * FLOATS_PER_GAUSSIAN * 4;
        let f = |j: usize| {
            let o = base + j * 4;
            f64::from(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()))
        };
        gaussians.push(Gaussian3D {
            mean: Vector3::new(f(0), f(1), f(2)),
            log_scale: Vector3::new(f(3), f(4), f(5)),
            rotation: Quaternion::new(f(6), f(7), f(8), f(9)),
            opacity_logit: f(10),
            color: Vector3::new(f(11), f(12), f(13)),
        });
    }
    let side = manifest_path(path);
    if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| io_error(&side, e))?;
        let manifest: SceneManifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: bad manifest: {e}", side.display())))?;
        if manifest.count != count {
            return Err(Error::format(format!(
                "{name}: blob holds {count} Gaussians but manifest says {}",
                manifest.count
            )));
        }
    }
    Ok(GaussianScene::new(gaussians))
}
