//! On-disk formats: netpbm images, raw f32 blobs, event streams, Gaussian
//! scenes, camera pose files, and optimizer state.
//!
//! All binary formats are little-endian. JSON files are written with
//! `serde_json`, whose maps have sorted keys, so every writer here is
//! byte-deterministic for identical inputs.

mod blob;
mod events_file;
mod image_files;
mod pose_file;
mod scene_file;
mod state;

pub use blob::{read_f32_blob, write_f32_blob};
pub use events_file::{read_events_csv, read_evt1, write_events_csv, write_evt1};
pub use image_files::{read_pgm, read_ppm, write_pgm, write_ppm};
pub use pose_file::{read_pose_file, write_pose_file, FramePoses};
pub use scene_file::{read_scene, write_scene};
pub use state::{
    append_jsonl, read_jsonl, read_optimizer_state, write_optimizer_state, OptimizerState,
};

use crate::error::Error;
use std::path::Path;

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::io(path.display().to_string(), source)
}
