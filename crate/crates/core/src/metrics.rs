//! Full-reference image metrics (PSNR, SSIM) and end-to-end evaluation of a
//! trained scene against a dataset's held-out test views.

use crate::error::{Error, Result};
use crate::gsplat::{render, GaussianScene};
use crate::image::Image;
use crate::synthdata::Dataset;
use crate::trajectory::{ate, CameraTrajectory};
use serde::{Deserialize, Serialize};

/// Upper bound reported for identical (or nearly identical) images, keeping
/// reports finite and sortable.
pub const PSNR_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio in dB for images on [0, 1]:
/// `10 * log10(1 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b, "peak signal-to-noise ratio")?;
    let mse = a.mse(b);
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

/// Mean structural similarity over valid 11x11 windows; shares its core
/// with the training DSSIM loss, so `dssim = (1 - ssim) / 2` holds exactly.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    crate::losses::ssim(a, b)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Condensed view of a training metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossCurveSummary {
    pub records: usize,
    pub first_iteration: u64,
    pub last_iteration: u64,
    pub first_total: f64,
    pub last_total: f64,
}

/// Evaluation report, serialized as schema "evarep/1". The optional fields
/// hold metrics this crate does not compute (e.g. learned perceptual
/// scores) so reports stay schema-compatible with richer tooling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ate_initial: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ate_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_summary: Option<LossCurveSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("report serialization failed: {e}")))
    }
}

fn flatten_effective(trajs: &[CameraTrajectory]) -> Result<Vec<crate::se3::SE3>> {
    let mut out = Vec::new();
    for t in trajs {
        out.extend(t.effective_poses()?);
    }
    Ok(out)
}

/// Renders every test view of `dataset` with `scene`, scores it against the
/// stored ground truth, and reports trajectory error before (dataset's
/// initial poses) and after (the supplied `trajectories`) training. Pass an
/// empty trajectory slice to skip the final-ATE column.
pub fn evaluate(
    scene: &GaussianScene,
    trajectories: &[CameraTrajectory],
    dataset: &Dataset,
) -> Result<EvalReport> {
    let bg = dataset.background();
    let mut views = Vec::with_capacity(dataset.manifest.test_views.len());
    for i in 0..dataset.manifest.test_views.len() {
        let gt = dataset.test_view_image(i)?;
        let cam = dataset.camera(dataset.test_view_pose(i)?)?;
        let rendered = render(scene, &cam, &bg)?.color;
        views.push(ViewMetrics {
            index: i,
            psnr: psnr(&rendered, &gt)?,
            ssim: ssim(&rendered, &gt)?,
        });
    }
    if views.is_empty() {
        return Err(Error::argument("dataset has no test views".to_string()));
    }
    let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / views.len() as f64;
    let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / views.len() as f64;

    let gt_poses = flatten_effective(&dataset.gt_trajectories()?)?;
    let init_poses = flatten_effective(&dataset.init_trajectories()?)?;
    let ate_initial = Some(ate(&init_poses, &gt_poses)?);
    let ate_final = if trajectories.is_empty() {
        None
    } else {
        Some(ate(&flatten_effective(trajectories)?, &gt_poses)?)
    };

    Ok(EvalReport {
        schema: "evarep/1".to_string(),
        views,
        mean_psnr,
        mean_ssim,
        ate_initial,
        ate_final,
        loss_summary: None,
        lpips: None,
    })
}

/// Extracts a loss-curve summary from metrics-log records (objects with
/// numeric "iteration" and "total" fields). Returns `None` when no usable
/// records exist.
pub fn summarize_loss_log(records: &[serde_json::Value]) -> Option<LossCurveSummary> {
    let parse = |r: &serde_json::Value| -> Option<(u64, f64)> {
        Some((r.get("iteration")?.as_u64()?, r.get("total")?.as_f64()?))
    };
    let usable: Vec<(u64, f64)> = records.iter().filter_map(parse).collect();
    let (first, last) = (usable.first()?, usable.last()?);
    Some(LossCurveSummary {
        records: usable.len(),
        first_iteration: first.0,
        last_iteration: last.0,
        first_total: first.1,
        last_total: last.1,
    })
}
