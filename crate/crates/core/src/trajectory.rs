//! Per-frame camera trajectories over the exposure interval: base poses with
//! learnable se(3) offsets, discrete blur synthesis as the mean of renders
//! along the trajectory, continuous pose interpolation between frames, and
//! absolute trajectory error.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gsplat::{render, Camera, GaussianScene};
use crate::image::Image;
use crate::rngutil::standard_normal;
use crate::se3::{Tangent, SE3};

/// Camera poses sampled across one blurry frame's exposure. Base poses are
/// fixed; each sample carries a learnable left-composed se(3) offset.
#[derive(Debug, Clone)]
pub struct CameraTrajectory {
    base_poses: Vec<SE3>,
    offsets: Vec<Tangent>,
    timestamps: Vec<f64>,
}

impl CameraTrajectory {
    /// Offsets start at zero. `n` must be odd so the exposure midpoint is an
    /// explicit sample; timestamps must be finite and strictly increasing.
    pub fn new(base_poses: Vec<SE3>, timestamps: Vec<f64>) -> Result<Self> {
        if base_poses.is_empty() || base_poses.len() != timestamps.len() {
            return Err(Error::argument(format!(
                "need equally many poses and timestamps (non-zero), got {} and {}",
                base_poses.len(),
                timestamps.len()
            )));
        }
        if base_poses.len() % 2 == 0 {
            return Err(Error::argument(format!(
                "trajectory length must be odd, got {}",
                base_poses.len()
            )));
        }
        if timestamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::argument("timestamps must be finite".to_string()));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::argument("timestamps must be strictly increasing".to_string()));
        }
        let n = base_poses.len();
        Ok(CameraTrajectory {
            base_poses,
            offsets: vec![Tangent::zeros(); n],
            timestamps,
        })
    }

    pub fn len(&self) -> usize {
        self.base_poses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn base_poses(&self) -> &[SE3] {
        &self.base_poses
    }

    pub fn offsets(&self) -> &[Tangent] {
        &self.offsets
    }

    /// Mutable access keeps the offset count fixed.
    pub fn offsets_mut(&mut self) -> &mut [Tangent] {
        &mut self.offsets
    }

    pub fn t_start(&self) -> f64 {
        self.timestamps[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.timestamps.last().unwrap()
    }

    /// Midpoint sample index (the length is odd by construction).
    pub fn mid_index(&self) -> usize {
        self.len() / 2
    }

    /// Pose of sample `i` with its learned offset applied by left
    /// composition. A zero offset returns the base pose bit-for-bit.
    pub fn effective_pose(&self, i: usize) -> Result<SE3> {
        if i >= self.len() {
            return Err(Error::argument(format!(
                "pose index {i} out of range for trajectory of length {}",
                self.len()
            )));
        }
        let d = &self.offsets[i];
        if d.iter().all(|v| *v == 0.0) {
            return Ok(self.base_poses[i].clone());
        }
        Ok(SE3::exp(d).compose(&self.base_poses[i]))
    }

    pub fn effective_poses(&self) -> Result<Vec<SE3>> {
        (0..self.len()).map(|i| self.effective_pose(i)).collect()
    }
}

/// Discrete blur formation: the pixel-wise mean of renders at every
/// trajectory sample's effective pose. `cam` supplies intrinsics; its own
/// pose is ignored.
pub fn synthesize_blur(
    scene: &GaussianScene,
    traj: &CameraTrajectory,
    cam: &Camera,
    background: &Vector3<f64>,
) -> Result<Image> {
    let n = traj.len();
    let mut sum = Image::zeros(cam.width, cam.height, 3);
    for i in 0..n {
        let mut cam_i = *cam;
        cam_i.pose = traj.effective_pose(i)?;
        let out = render(scene, &cam_i, background)?;
        for (acc, v) in sum.data_mut().iter_mut().zip(out.color.data()) {
            *acc += v;
        }
    }
    if n > 1 {
        let inv = 1.0 / n as f64;
        for v in sum.data_mut() {
            *v *= inv;
        }
    }
    Ok(sum)
}

/// Pose at a time in the gap between two adjacent frames' exposures:
/// quaternion slerp plus linear translation between the last effective pose
/// of `traj_a` and the first of `traj_b`.
pub fn interpolate_pose(traj_a: &CameraTrajectory, traj_b: &CameraTrajectory, t: f64) -> Result<SE3> {
    let ta = traj_a.t_end();
    let tb = traj_b.t_start();
    if !(tb > ta) {
        return Err(Error::argument(format!(
            "second trajectory must start after the first ends ({ta} vs {tb})"
        )));
    }
    if !(ta..=tb).contains(&t) {
        return Err(Error::argument(format!(
            "time {t} outside the inter-frame gap [{ta}, {tb}]"
        )));
    }
    let pose_a = traj_a.effective_pose(traj_a.len() - 1)?;
    if t == ta {
        return Ok(pose_a);
    }
    let pose_b = traj_b.effective_pose(0)?;
    if t == tb {
        return Ok(pose_b);
    }
    let u = (t - ta) / (tb - ta);
    Ok(pose_a.interp(&pose_b, u))
}

/// Perturbed copies of ground-truth trajectories, standing in for poses from
/// structure-from-motion. `sigma_trans` is the standard deviation of the
/// total translation displacement (per-axis sigma_trans / sqrt(3)); likewise
/// `sigma_rot` for the total rotation angle in radians. Rotation noise
/// multiplies on the left, translation noise adds directly, offsets start at
/// zero.
pub fn init_trajectories(
    ground_truth: &[CameraTrajectory],
    sigma_rot: f64,
    sigma_trans: f64,
    seed: u64,
) -> Result<Vec<CameraTrajectory>> {
    for (name, s) in [("sigma_rot", sigma_rot), ("sigma_trans", sigma_trans)] {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::argument(format!("{name} must be non-negative, got {s}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis_rot = sigma_rot / 3f64.sqrt();
    let axis_trans = sigma_trans / 3f64.sqrt();
    let mut out = Vec::with_capacity(ground_truth.len());
    for traj in ground_truth {
        let mut poses = Vec::with_capacity(traj.len());
        for base in traj.base_poses() {
            let mut pose = base.clone();
            if sigma_rot > 0.0 {
                let w = Vector3::new(
                    axis_rot * standard_normal(&mut rng),
                    axis_rot * standard_normal(&mut rng),
                    axis_rot * standard_normal(&mut rng),
                );
                pose.rotation =
                    nalgebra::UnitQuaternion::from_scaled_axis(w) * pose.rotation;
            }
            if sigma_trans > 0.0 {
                pose.translation += Vector3::new(
                    axis_trans * standard_normal(&mut rng),
                    axis_trans * standard_normal(&mut rng),
                    axis_trans * standard_normal(&mut rng),
                );
            }
            poses.push(pose);
        }
        out.push(CameraTrajectory::new(poses, traj.timestamps().to_vec())?);
    }
    Ok(out)
}

/// Absolute trajectory error: RMS distance between camera centers after a
/// least-squares similarity alignment (Umeyama) of the estimated trajectory
/// onto the reference.
pub fn ate(estimated: &[SE3], reference: &[SE3]) -> Result<f64> {
    if estimated.len() != reference.len() {
        return Err(Error::argument(format!(
            "trajectory lengths differ: {} vs {}",
            estimated.len(),
            reference.len()
        )));
    }
    if estimated.len() < 3 {
        return Err(Error::argument(format!(
            "need at least 3 poses for alignment, got {}",
            estimated.len()
        )));
    }
    let xs: Vec<Vector3<f64>> = estimated.iter().map(|p| p.camera_center()).collect();
    let ys: Vec<Vector3<f64>> = reference.iter().map(|p| p.camera_center()).collect();
    let (s, r, t) = umeyama(&xs, &ys);
    let mut acc = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let res = y - (r * x * s + t);
        acc += res.norm_squared();
    }
    Ok((acc / xs.len() as f64).sqrt())
}

/// Similarity (scale, rotation, translation) minimizing
/// sum |s R x_i + t - y_i|^2.
fn umeyama(xs: &[Vector3<f64>], ys: &[Vector3<f64>]) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let n = xs.len() as f64;
    let mu_x: Vector3<f64> = xs.iter().sum::<Vector3<f64>>() / n;
    let mu_y: Vector3<f64> = ys.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let xc = x - mu_x;
        let yc = y - mu_y;
        h += yc * xc.transpose();
        var_x += xc.norm_squared();
    }
    h /= n;
    var_x /= n;
    if var_x < 1e-30 {
        return (1.0, Matrix3::identity(), mu_y - mu_x);
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let s_mat = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = u * s_mat * v_t;
    let sv = svd.singular_values;
    let scale = (sv[0] + sv[1] + d * sv[2]) / var_x;
    let t = mu_y - r * mu_x * scale;
    (scale, r, t)
}

/// Matrix form helper for pose serialization tests.
pub fn pose_to_matrix(p: &SE3) -> Matrix4<f64> {
    p.to_matrix()
}
