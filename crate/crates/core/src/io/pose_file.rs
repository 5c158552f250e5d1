//! Camera pose files: a JSON array of per-frame records, each holding the
//! frame id, sample timestamps, and one 4x4 row-major world-to-camera matrix
//! per timestamp. Checkpoints extend a record with the learned se(3) offsets
//! so a trajectory round-trips exactly.

use super::io_error;
use crate::error::{Error, Result};
use crate::se3::{Tangent, SE3};
use crate::trajectory::CameraTrajectory;
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FramePoses {
    pub frame_id: u32,
    pub timestamps: Vec<f64>,
    /// One 16-element row-major 4x4 matrix per timestamp.
    pub poses: Vec<[f64; 16]>,
    /// Learned pose corrections, `[rotation xyz, translation xyz]` per
    /// sample. Absent in plain pose files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<[f64; 6]>>,
}

fn pose_to_row_major(pose: &SE3) -> [f64; 16] {
    let m = pose.to_matrix();
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
    out
}

impl FramePoses {
    /// Captures a trajectory's base poses (and offsets when requested).
    pub fn from_trajectory(frame_id: u32, traj: &CameraTrajectory, with_offsets: bool) -> Self {
        FramePoses {
            frame_id,
            timestamps: traj.timestamps().to_vec(),
            poses: traj.base_poses().iter().map(pose_to_row_major).collect(),
            offsets: with_offsets.then(|| {
                traj.offsets()
                    .iter()
                    .map(|d| [d[0], d[1], d[2], d[3], d[4], d[5]])
                    .collect()
            }),
        }
    }

    pub fn to_trajectory(&self) -> Result<CameraTrajectory> {
        if self.poses.len() != self.timestamps.len() {
            return Err(Error::format(format!(
                "frame {}: {} poses but {} timestamps",
                self.frame_id,
                self.poses.len(),
                self.timestamps.len()
            )));
        }
        let poses = self
            .poses
            .iter()
            .map(|p| SE3::from_matrix(&Matrix4::from_row_slice(p)))
            .collect::<Result<Vec<_>>>()?;
        let mut traj = CameraTrajectory::new(poses, self.timestamps.clone())?;
        if let Some(offsets) = &self.offsets {
            if offsets.len() != traj.len() {
                return Err(Error::format(format!(
                    "frame {}: {} offsets for {} poses",
                    self.frame_id,
                    offsets.len(),
                    traj.len()
                )));
            }
            for (slot, o) in traj.offsets_mut().iter_mut().zip(offsets) {
                *slot = Tangent::from_row_slice(o);
            }
        }
        Ok(traj)
    }
}

/// Writes the frames as a pretty-printed JSON array.
pub fn write_pose_file(path: &Path, frames: &[FramePoses]) -> Result<()> {
    let text = serde_json::to_string_pretty(frames)
        .map_err(|e| Error::format(format!("pose serialization failed: {e}")))?;
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn read_pose_file(path: &Path) -> Result<Vec<FramePoses>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: bad pose file: {e}", path.display())))
}
