//! Self-contained synthetic dataset generation: procedural Gaussian scenes,
//! an orbiting camera with per-frame exposure sweeps, exposure-averaged
//! blurry frames, a simulated event stream, held-out sharp test views, and
//! noisy initialization data (poses and a sparse point cloud).
//!
//! The ground-truth scene is itself a Gaussian scene, so the rasterizer that
//! training uses is also the data generator's renderer; there is no model
//! mismatch between the two.
//!
//! Camera path model: blur-frame midpoints sit on an analytic orbit around
//! the scene center. Within each exposure the camera center sweeps along the
//! orbit tangent at constant velocity (matching linear interpolation between
//! exposure endpoints), which makes per-frame travel distance exactly
//! proportional to the speed scale. The camera always faces the scene
//! center. Event simulation runs on a denser time grid that subdivides the
//! exposure samples and bridges inter-frame gaps; each frame's segment is
//! simulated with a fresh reference image at its exposure start so that
//! events over one exposure quantize exactly the change since that frame's
//! first latent.

use crate::error::{Error, Result};
use crate::event::{simulate_events, Event, EventStream, Thresholds};
use crate::gsplat::{render, Camera, Gaussian3D, GaussianScene};
use crate::image::{rgb_to_gray, Image};
use crate::io::{
    read_evt1, read_f32_blob, read_pose_file, read_scene, write_evt1, write_f32_blob,
    write_pose_file, write_ppm, write_scene, FramePoses,
};
use crate::rngutil::standard_normal;
use crate::se3::{look_at, SE3};
use crate::trajectory::{init_trajectories, interpolate_pose, CameraTrajectory};
use nalgebra::{Matrix4, Quaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

/// Orbit radius as a multiple of the scene extent.
const ORBIT_RADIUS_FACTOR: f64 = 1.7;
/// Orbit height above the scene center as a multiple of the extent.
const ORBIT_HEIGHT_FACTOR: f64 = 0.35;
/// Total orbit angle swept across the whole capture.
const ORBIT_SWEEP: f64 = 0.3 * PI;
/// Fraction of each frame period covered by the exposure; the rest is the
/// inter-frame gap, which is therefore always positive.
const EXPOSURE_DUTY: f64 = 0.6;
/// Frame period in seconds.
const FRAME_PERIOD: f64 = 1.0;
/// Test views span a wider arc than the training sweep.
const TEST_SWEEP_FACTOR: f64 = 1.5;
/// Test views sit higher above the scene than the training orbit.
const TEST_HEIGHT_FACTOR: f64 = 1.3;

const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// Camera speed presets for dataset difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurLevel {
    Mild,
    Medium,
    Strong,
}

impl BlurLevel {
    /// Speed multiplier relative to the medium preset.
    pub fn speed(self) -> f64 {
        match self {
            BlurLevel::Mild => 0.5,
            BlurLevel::Medium => 1.0,
            BlurLevel::Strong => 2.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlurLevel::Mild => "mild",
            BlurLevel::Medium => "medium",
            BlurLevel::Strong => "strong",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mild" => Ok(BlurLevel::Mild),
            "medium" => Ok(BlurLevel::Medium),
            "strong" => Ok(BlurLevel::Strong),
            other => Err(Error::argument(format!(
                "unknown blur level {other:?}, expected mild, medium, or strong"
            ))),
        }
    }
}

/// Generates a seeded scene with clustered colors so rendered images have
/// strong edges. Deterministic per seed.
pub fn make_scene(seed: u64, n_gaussians: usize, extent: f64) -> Result<GaussianScene> {
    if n_gaussians < 1 {
        return Err(Error::argument("scene needs at least one Gaussian".to_string()));
    }
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::argument(format!("extent must be positive, got {extent}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_clusters = n_gaussians.min(6);
    let clusters: Vec<(Vector3<f64>, Vector3<f64>)> = (0..n_clusters)
        .map(|_| {
            let center = Vector3::from_fn(|_, _| rng.gen_range(-0.35..0.35) * extent);
            let color = Vector3::from_fn(|_, _| rng.gen_range(0.15..0.85));
            (center, color)
        })
        .collect();
    let gaussians = (0..n_gaussians)
        .map(|i| {
            let (center, base_color) = clusters[i % n_clusters];
            let mean = center + 0.1 * extent * Vector3::from_fn(|_, _| standard_normal(&mut rng));
            let log_scale = Vector3::from_fn(|_, _| (extent * rng.gen_range(0.025..0.065)).ln());
            let q = Quaternion::new(
                standard_normal(&mut rng),
                standard_normal(&mut rng),
                standard_normal(&mut rng),
                standard_normal(&mut rng),
            );
            let rotation = if q.norm() > 1e-9 { q / q.norm() } else { Quaternion::identity() };
            let opacity_logit = rng.gen_range(0.5..2.5);
            let color = Vector3::from_fn(|r, _| {
                (base_color[r] + 0.03 * standard_normal(&mut rng)).clamp(0.02, 0.98)
            });
            Gaussian3D {
                mean,
                log_scale,
                rotation,
                opacity_logit,
                color,
            }
        })
        .collect();
    Ok(GaussianScene::new(gaussians))
}

fn orbit_eye(extent: f64, theta: f64) -> Vector3<f64> {
    let r = ORBIT_RADIUS_FACTOR * extent;
    Vector3::new(r * theta.sin(), ORBIT_HEIGHT_FACTOR * extent, r * theta.cos())
}

/// The view used for scene sanity checks and as the orbit's mid-sweep pose.
pub fn canonical_camera(extent: f64, width: usize, height: usize) -> Result<Camera> {
    let pose = look_at(&orbit_eye(extent, 0.0), &Vector3::zeros(), &WORLD_UP);
    Camera::new(
        1.2 * width as f64,
        1.2 * width as f64,
        width as f64 / 2.0,
        height as f64 / 2.0,
        width,
        height,
        pose,
        0.05 * extent,
    )
}

/// Evenly spaced poses on a full circle of the canonical orbit, all facing
/// the scene center.
pub fn orbit_poses(extent: f64, n: usize) -> Vec<SE3> {
    (0..n)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / n.max(1) as f64;
            look_at(&orbit_eye(extent, theta), &Vector3::zeros(), &WORLD_UP)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectoryParams {
    pub n_frames: usize,
    /// Poses per exposure; odd so the midpoint is an explicit sample.
    pub n_poses: usize,
    /// Per-axis Gaussian jitter, in scene units, applied to each frame's
    /// exposure-midpoint position.
    pub jitter: f64,
    pub extent: f64,
    /// Camera speed multiplier; scales only the within-exposure sweep.
    pub speed_scale: f64,
}

/// Ground-truth trajectories, one per blur frame. Frame `f` occupies the
/// exposure interval centered on `(f + 0.5) * FRAME_PERIOD`; consecutive
/// exposures are separated by positive gaps.
pub fn make_trajectory(seed: u64, p: &TrajectoryParams) -> Result<Vec<CameraTrajectory>> {
    if p.n_frames < 2 {
        return Err(Error::argument(format!(
            "need at least 2 frames, got {}",
            p.n_frames
        )));
    }
    if p.n_poses < 3 || p.n_poses % 2 == 0 {
        return Err(Error::argument(format!(
            "poses per exposure must be odd and at least 3, got {}",
            p.n_poses
        )));
    }
    if !(p.jitter >= 0.0) || !(p.speed_scale >= 0.0) || !(p.extent > 0.0) {
        return Err(Error::argument(format!(
            "jitter ({}), speed ({}) must be non-negative and extent ({}) positive",
            p.jitter, p.speed_scale, p.extent
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame_angle = ORBIT_SWEEP / p.n_frames as f64;
    let tau = EXPOSURE_DUTY * FRAME_PERIOD;
    // Arc length the exposure would cover at this speed; the sweep follows
    // the orbit tangent so travel distance is exactly linear in the speed.
    let half_travel = 0.5 * p.speed_scale * frame_angle * EXPOSURE_DUTY * ORBIT_RADIUS_FACTOR
        * p.extent;
    let center = Vector3::zeros();
    let mut out = Vec::with_capacity(p.n_frames);
    for f in 0..p.n_frames {
        let theta_mid = -ORBIT_SWEEP / 2.0 + frame_angle * (f as f64 + 0.5);
        // Drawn unconditionally so the pose layout is seed-stable across
        // jitter settings.
        let jit = Vector3::from_fn(|_, _| standard_normal(&mut rng)) * p.jitter;
        let mid = orbit_eye(p.extent, theta_mid) + jit;
        let tangent = Vector3::new(theta_mid.cos(), 0.0, -theta_mid.sin());
        let t0 = f as f64 * FRAME_PERIOD + (FRAME_PERIOD - tau) / 2.0;
        let mut poses = Vec::with_capacity(p.n_poses);
        let mut times = Vec::with_capacity(p.n_poses);
        for i in 0..p.n_poses {
            let u = -1.0 + 2.0 * i as f64 / (p.n_poses - 1) as f64;
            let eye = mid + u * half_travel * tangent;
            poses.push(look_at(&eye, &center, &WORLD_UP));
            times.push(t0 + tau * i as f64 / (p.n_poses - 1) as f64);
        }
        out.push(CameraTrajectory::new(poses, times)?);
    }
    Ok(out)
}

/// All knobs of [`generate_dataset`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_gaussians: usize,
    pub extent: f64,
    pub n_frames: usize,
    pub n_poses: usize,
    pub width: usize,
    pub height: usize,
    pub blur_level: BlurLevel,
    /// Overrides the blur level's speed multiplier when set (used for the
    /// static-camera degenerate case).
    pub speed_override: Option<f64>,
    pub jitter: f64,
    /// Event-simulation time steps per exposure pose interval.
    pub oversample: usize,
    pub n_test_views: usize,
    /// Noise on the initial (training input) poses.
    pub pose_sigma_rot: f64,
    pub pose_sigma_trans: f64,
    /// Symmetric event threshold.
    pub threshold: f64,
    pub background: [f64; 3],
}

impl GenConfig {
    pub fn new(seed: u64) -> Self {
        GenConfig {
            seed,
            n_gaussians: 200,
            extent: 2.0,
            n_frames: 8,
            n_poses: 9,
            width: 64,
            height: 64,
            blur_level: BlurLevel::Medium,
            speed_override: None,
            jitter: 0.04,
            oversample: 4,
            n_test_views: 16,
            pose_sigma_rot: 0.01,
            pose_sigma_trans: 0.1,
            threshold: 0.25,
            background: [0.05, 0.06, 0.08],
        }
    }

    pub fn speed(&self) -> f64 {
        self.speed_override.unwrap_or_else(|| self.blur_level.speed())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::argument(format!("need at least 2 frames, got {}", self.n_frames)));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::argument(format!(
                "resolution {}x{} is too small",
                self.width, self.height
            )));
        }
        if self.oversample < 1 {
            return Err(Error::argument("oversample must be at least 1".to_string()));
        }
        if self.n_test_views < 1 {
            return Err(Error::argument("need at least one test view".to_string()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::argument(format!(
                "event threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.background.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::argument("background must lie in [0, 1]".to_string()));
        }
        Ok(())
    }
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig::new(0)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub c_pos: f64,
    pub c_neg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlurFrameEntry {
    pub index: usize,
    pub image: String,
    pub image_f32: String,
    pub t_start: f64,
    pub t_mid: f64,
    pub t_end: f64,
    /// Exact-precision ground-truth latent frames at the exposure's pose
    /// sample times, in time order.
    pub latents_f32: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestViewEntry {
    pub index: usize,
    pub image: String,
    pub image_f32: String,
    pub t: f64,
    /// Row-major world-to-camera matrix.
    pub pose: [f64; 16],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub extent: f64,
    pub background: [f64; 3],
    pub intrinsics: Intrinsics,
    pub thresholds: ThresholdSpec,
    pub blur_level: String,
    pub n_poses: usize,
    pub scene: String,
    pub events: String,
    pub gt_exposure_poses: String,
    pub init_poses: String,
    pub init_points: String,
    pub blur_frames: Vec<BlurFrameEntry>,
    pub test_views: Vec<TestViewEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct InitPointsFile {
    points: Vec<InitPoint>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("serialization failed: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
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

/// Writes a complete dataset under `out_dir` and returns its manifest.
/// Deterministic: the same config writes byte-identical files.
pub fn generate_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    create_dir(out_dir)?;
    for sub in ["blur", "latents", "test", "poses"] {
        create_dir(&out_dir.join(sub))?;
    }

    // The written scene is f32-quantized; render from the round-tripped copy
    // so every consumer of the files sees exactly the images written here.
    let scene_path = out_dir.join("gt_scene.gsc1");
    write_scene(&scene_path, &make_scene(cfg.seed, cfg.n_gaussians, cfg.extent)?)?;
    let scene = read_scene(&scene_path)?;

    let params = TrajectoryParams {
        n_frames: cfg.n_frames,
        n_poses: cfg.n_poses,
        jitter: cfg.jitter,
        extent: cfg.extent,
        speed_scale: cfg.speed(),
    };
    let trajs = make_trajectory(cfg.seed + 1, &params)?;

    let cam0 = canonical_camera(cfg.extent, cfg.width, cfg.height)?;
    let bg = Vector3::new(cfg.background[0], cfg.background[1], cfg.background[2]);
    let render_at = |pose: &SE3| -> Result<Image> {
        let mut cam = cam0;
        cam.pose = *pose;
        Ok(render(&scene, &cam, &bg)?.color)
    };

    // Ground-truth latent renders for every exposure sample.
    let mut latent_rgb: Vec<Vec<Image>> = Vec::with_capacity(cfg.n_frames);
    for traj in &trajs {
        let mut frames = Vec::with_capacity(cfg.n_poses);
        for pose in traj.base_poses() {
            frames.push(render_at(pose)?);
        }
        latent_rgb.push(frames);
    }

    let mut blur_frames = Vec::with_capacity(cfg.n_frames);
    for (f, traj) in trajs.iter().enumerate() {
        let mut latent_refs = Vec::with_capacity(cfg.n_poses);
        // The blur image is the mean of the latents as stored, i.e. of the
        // f32-quantized values, so the written files satisfy the mean
        // identity exactly.
        let mut blur = Image::zeros(cfg.width, cfg.height, 3);
        for (i, img) in latent_rgb[f].iter().enumerate() {
            let rel = format!("latents/f{f:03}_p{i:02}.f32");
            write_f32_blob(&out_dir.join(&rel), img)?;
            let quantized = img.map(|v| v as f32 as f64);
            for (acc, v) in blur.data_mut().iter_mut().zip(quantized.data()) {
                *acc += v;
            }
            latent_refs.push(rel);
        }
        let blur = blur.map(|v| v / cfg.n_poses as f64);
        let image_f32 = format!("blur/frame_{f:03}.f32");
        let image = format!("blur/frame_{f:03}.ppm");
        write_f32_blob(&out_dir.join(&image_f32), &blur)?;
        write_ppm(&out_dir.join(&image), &blur)?;
        blur_frames.push(BlurFrameEntry {
            index: f,
            image,
            image_f32,
            t_start: traj.t_start(),
            t_mid: traj.timestamps()[traj.mid_index()],
            t_end: traj.t_end(),
            latents_f32: latent_refs,
        });
    }

    // Event simulation on the dense grid. Each frame's segment runs from its
    // exposure start through the following gap up to the next exposure
    // start, with a fresh reference at the segment head.
    let thresholds = Thresholds::symmetric(cfg.threshold)?;
    let mut all_events: Vec<Event> = Vec::new();
    let n_dense = cfg.oversample * (cfg.n_poses - 1) + 1;
    for (f, traj) in trajs.iter().enumerate() {
        let ts = traj.timestamps();
        let mut times = Vec::new();
        let mut grays = Vec::new();
        for k in 0..n_dense {
            let i = k / cfg.oversample;
            let rem = k % cfg.oversample;
            if rem == 0 {
                times.push(ts[i]);
                grays.push(rgb_to_gray(&latent_rgb[f][i])?);
            } else {
                let frac = rem as f64 / cfg.oversample as f64;
                times.push(ts[i] + frac * (ts[i + 1] - ts[i]));
                let pose = traj.base_poses()[i].interp(&traj.base_poses()[i + 1], frac);
                grays.push(rgb_to_gray(&render_at(&pose)?)?);
            }
        }
        if f + 1 < cfg.n_frames {
            let next = &trajs[f + 1];
            let (ga, gb) = (traj.t_end(), next.t_start());
            let dense_dt = (traj.t_end() - traj.t_start()) / (n_dense - 1) as f64;
            let n_gap = (((gb - ga) / dense_dt).round() as usize).max(1);
            for j in 1..=n_gap {
                if j == n_gap {
                    times.push(gb);
                    grays.push(rgb_to_gray(&latent_rgb[f + 1][0])?);
                } else {
                    let t = ga + (gb - ga) * j as f64 / n_gap as f64;
                    times.push(t);
                    grays.push(rgb_to_gray(&render_at(&interpolate_pose(traj, next, t)?)?)?);
                }
            }
        }
        let segment = simulate_events(&grays, &times, &thresholds)?;
        all_events.extend_from_slice(segment.events());
    }
    let stream = EventStream::new(cfg.width as u32, cfg.height as u32, thresholds, all_events)?;
    let events_rel = "events.evt1".to_string();
    write_evt1(&out_dir.join(&events_rel), &stream)?;

    // Held-out sharp test views on a wider, higher arc.
    let mut test_views = Vec::with_capacity(cfg.n_test_views);
    let test_sweep = ORBIT_SWEEP * TEST_SWEEP_FACTOR;
    let total_time = cfg.n_frames as f64 * FRAME_PERIOD;
    for j in 0..cfg.n_test_views {
        let theta = -test_sweep / 2.0 + test_sweep * (j as f64 + 0.5) / cfg.n_test_views as f64;
        let mut eye = orbit_eye(cfg.extent, theta);
        eye.y *= TEST_HEIGHT_FACTOR;
        let pose = look_at(&eye, &Vector3::zeros(), &WORLD_UP);
        let img = render_at(&pose)?;
        let image_f32 = format!("test/view_{j:03}.f32");
        let image = format!("test/view_{j:03}.ppm");
        write_f32_blob(&out_dir.join(&image_f32), &img)?;
        write_ppm(&out_dir.join(&image), &img)?;
        test_views.push(TestViewEntry {
            index: j,
            image,
            image_f32,
            t: total_time * (j as f64 + 0.5) / cfg.n_test_views as f64,
            pose: pose_to_row_major(&pose),
        });
    }

    // Initialization data: noisy poses and a subsampled noisy point cloud.
    let init_trajs = init_trajectories(&trajs, cfg.pose_sigma_rot, cfg.pose_sigma_trans, cfg.seed + 2)?;
    let gt_frames: Vec<FramePoses> = trajs
        .iter()
        .enumerate()
        .map(|(f, t)| FramePoses::from_trajectory(f as u32, t, false))
        .collect();
    let init_frames: Vec<FramePoses> = init_trajs
        .iter()
        .enumerate()
        .map(|(f, t)| FramePoses::from_trajectory(f as u32, t, false))
        .collect();
    let gt_poses_rel = "poses/gt_exposure.json".to_string();
    let init_poses_rel = "poses/init.json".to_string();
    write_pose_file(&out_dir.join(&gt_poses_rel), &gt_frames)?;
    write_pose_file(&out_dir.join(&init_poses_rel), &init_frames)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 3);
    let mut indices: Vec<usize> = (0..scene.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(scene.len().div_ceil(2));
    indices.sort_unstable();
    let sigma = 0.02 * cfg.extent;
    let points = indices
        .iter()
        .map(|&i| {
            let g = &scene.gaussians[i];
            let pos = g.mean + sigma * Vector3::from_fn(|_, _| standard_normal(&mut rng));
            InitPoint {
                position: [pos.x, pos.y, pos.z],
                color: [g.color.x, g.color.y, g.color.z],
            }
        })
        .collect();
    let init_points_rel = "init_points.json".to_string();
    write_json(&out_dir.join(&init_points_rel), &InitPointsFile { points })?;

    let manifest = DatasetManifest {
        schema: "evads/1".to_string(),
        seed: cfg.seed,
        width: cfg.width,
        height: cfg.height,
        extent: cfg.extent,
        background: cfg.background,
        intrinsics: Intrinsics {
            fx: cam0.fx,
            fy: cam0.fy,
            cx: cam0.cx,
            cy: cam0.cy,
            near: cam0.near,
        },
        thresholds: ThresholdSpec {
            c_pos: thresholds.c_pos,
            c_neg: thresholds.c_neg,
        },
        blur_level: cfg.blur_level.as_str().to_string(),
        n_poses: cfg.n_poses,
        scene: "gt_scene.gsc1".to_string(),
        events: events_rel,
        gt_exposure_poses: gt_poses_rel,
        init_poses: init_poses_rel,
        init_points: init_points_rel,
        blur_frames,
        test_views,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// A dataset directory opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Opens `dir/manifest.json` and validates the schema, that every
    /// referenced file exists, and that exposure intervals are increasing
    /// and non-overlapping.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: {e}", manifest_path.display())))?;
        if manifest.schema != "evads/1" {
            return Err(Error::format(format!(
                "unsupported dataset schema {:?}, expected \"evads/1\"",
                manifest.schema
            )));
        }
        let mut refs: Vec<&str> = vec![
            &manifest.scene,
            &manifest.events,
            &manifest.gt_exposure_poses,
            &manifest.init_poses,
            &manifest.init_points,
        ];
        for bf in &manifest.blur_frames {
            refs.push(&bf.image);
            refs.push(&bf.image_f32);
            refs.extend(bf.latents_f32.iter().map(String::as_str));
        }
        for tv in &manifest.test_views {
            refs.push(&tv.image);
            refs.push(&tv.image_f32);
        }
        for rel in refs {
            if !dir.join(rel).exists() {
                return Err(Error::format(format!("dataset is missing referenced file {rel:?}")));
            }
        }
        for w in manifest.blur_frames.windows(2) {
            if !(w[0].t_end < w[1].t_start) {
                return Err(Error::format(format!(
                    "exposure intervals overlap: frame {} ends at {} but frame {} starts at {}",
                    w[0].index, w[0].t_end, w[1].index, w[1].t_start
                )));
            }
        }
        for bf in &manifest.blur_frames {
            if !(bf.t_start < bf.t_end) {
                return Err(Error::format(format!(
                    "frame {} has an empty exposure interval",
                    bf.index
                )));
            }
        }
        Ok(Dataset {
            root: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::new(self.manifest.thresholds.c_pos, self.manifest.thresholds.c_neg)
    }

    pub fn background(&self) -> Vector3<f64> {
        Vector3::new(
            self.manifest.background[0],
            self.manifest.background[1],
            self.manifest.background[2],
        )
    }

    /// Camera with the dataset intrinsics and the given pose.
    pub fn camera(&self, pose: SE3) -> Result<Camera> {
        let i = &self.manifest.intrinsics;
        Camera::new(
            i.fx,
            i.fy,
            i.cx,
            i.cy,
            self.manifest.width,
            self.manifest.height,
            pose,
            i.near,
        )
    }

    pub fn scene(&self) -> Result<GaussianScene> {
        read_scene(&self.path(&self.manifest.scene))
    }

    pub fn events(&self) -> Result<EventStream> {
        read_evt1(&self.path(&self.manifest.events), self.thresholds()?)
    }

    /// Exact-precision blurry frame `i`.
    pub fn blur_image(&self, i: usize) -> Result<Image> {
        let entry = self.blur_entry(i)?;
        read_f32_blob(&self.path(&entry.image_f32))
    }

    pub fn blur_entry(&self, i: usize) -> Result<&BlurFrameEntry> {
        self.manifest.blur_frames.get(i).ok_or_else(|| {
            Error::argument(format!(
                "blur frame {i} out of range, dataset has {}",
                self.manifest.blur_frames.len()
            ))
        })
    }

    /// Ground-truth latent frames of blur frame `i`, in time order.
    pub fn latents(&self, i: usize) -> Result<Vec<Image>> {
        self.blur_entry(i)?
            .latents_f32
            .iter()
            .map(|rel| read_f32_blob(&self.path(rel)))
            .collect()
    }

    pub fn test_view_image(&self, i: usize) -> Result<Image> {
        let entry = self.manifest.test_views.get(i).ok_or_else(|| {
            Error::argument(format!(
                "test view {i} out of range, dataset has {}",
                self.manifest.test_views.len()
            ))
        })?;
        read_f32_blob(&self.path(&entry.image_f32))
    }

    pub fn test_view_pose(&self, i: usize) -> Result<SE3> {
        let entry = self.manifest.test_views.get(i).ok_or_else(|| {
            Error::argument(format!(
                "test view {i} out of range, dataset has {}",
                self.manifest.test_views.len()
            ))
        })?;
        SE3::from_matrix(&Matrix4::from_row_slice(&entry.pose))
    }

    pub fn gt_trajectories(&self) -> Result<Vec<CameraTrajectory>> {
        read_pose_file(&self.path(&self.manifest.gt_exposure_poses))?
            .iter()
            .map(FramePoses::to_trajectory)
            .collect()
    }

    pub fn init_trajectories(&self) -> Result<Vec<CameraTrajectory>> {
        read_pose_file(&self.path(&self.manifest.init_poses))?
            .iter()
            .map(FramePoses::to_trajectory)
            .collect()
    }

    pub fn init_points(&self) -> Result<Vec<InitPoint>> {
        let path = self.path(&self.manifest.init_points);
        let text =
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: InitPointsFile = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        Ok(file.points)
    }
}
