//! Command-line driver wiring dataset generation, deblurring, training,
//! rendering, and evaluation into reproducible pipelines.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error. Every
//! command that produces an output directory drops a `run_config.json` with
//! the fully resolved configuration next to its outputs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use evsplat_core::edi::{edi_latents, BlurFrame};
use evsplat_core::event::{EventStream, Thresholds};
use evsplat_core::gsplat::{render, GaussianScene};
use evsplat_core::image::Image;
use evsplat_core::io::{
    read_evt1, read_jsonl, read_pose_file, read_ppm, read_scene, write_pgm, write_ppm,
};
use evsplat_core::metrics::{evaluate, summarize_loss_log};
use evsplat_core::se3::SE3;
use evsplat_core::synthdata::{
    canonical_camera, generate_dataset, orbit_poses, BlurLevel, Dataset, GenConfig,
};
use evsplat_core::trainer::{train_with_output, TrainConfig};
use nalgebra::Vector3;

/// Error class that maps to exit code 2 instead of 1.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "evsplat",
    about = "Event-assisted deblurring Gaussian splatting pipelines",
    long_about = "Subcommands cover the full loop: synthesize a dataset, recover \
                  sharp frames from blur plus events, train a scene, render novel \
                  views, and score results. The engine runs single-threaded; the \
                  EVA_THREADS environment variable (0 = auto) caps the worker \
                  count and is validated but cannot raise it above one."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic blur + event dataset.
    Gen(GenArgs),
    /// Recover sharp latent frames from one blurry image and its events.
    Edi(EdiArgs),
    /// Optimize a Gaussian scene and camera trajectories on a dataset.
    Train(TrainArgs),
    /// Render a scene at given poses or on the canonical orbit.
    Render(RenderArgs),
    /// Score a scene against a dataset's test views.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BlurArg {
    Mild,
    Medium,
    Strong,
}

impl From<BlurArg> for BlurLevel {
    fn from(b: BlurArg) -> BlurLevel {
        match b {
            BlurArg::Mild => BlurLevel::Mild,
            BlurArg::Medium => BlurLevel::Medium,
            BlurArg::Strong => BlurLevel::Strong,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = BlurArg::Medium)]
    blur_level: BlurArg,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Square image resolution in pixels.
    #[arg(long, default_value_t = 64)]
    res: usize,
    /// Ground-truth Gaussian count.
    #[arg(long, default_value_t = 200)]
    gaussians: usize,
}

#[derive(Args)]
struct EdiArgs {
    /// Blurry input image (PPM).
    #[arg(long)]
    blur: PathBuf,
    /// Event records covering the exposure (EVT1).
    #[arg(long)]
    events: PathBuf,
    /// Exposure start and end times in seconds.
    #[arg(long, num_args = 2, value_names = ["T0", "T1"])]
    exposure: Vec<f64>,
    /// Number of latent frames to reconstruct.
    #[arg(long, default_value_t = 9)]
    n: usize,
    /// Contrast threshold for both polarities.
    #[arg(long, default_value_t = 0.25)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory or its manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// JSON config file with flat dotted keys, e.g. {"lr.means": 2e-4}.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override the total iteration count.
    #[arg(long)]
    iters: Option<u64>,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_event_loss: bool,
    #[arg(long)]
    no_int_loss: bool,
    #[arg(long)]
    no_depth_loss: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Scene file (GSC1).
    #[arg(long)]
    scene: PathBuf,
    /// Pose file (JSON); renders every pose of every frame entry.
    #[arg(long, conflicts_with = "orbit", required_unless_present = "orbit")]
    poses: Option<PathBuf>,
    /// Render this many evenly spaced poses on the canonical orbit.
    #[arg(long)]
    orbit: Option<usize>,
    /// Dataset directory or manifest supplying camera intrinsics and
    /// background; without it a canonical camera is derived from the scene.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Square resolution used when --data is absent.
    #[arg(long, default_value_t = 64)]
    res: usize,
    /// Also write a depth map per frame (PGM, normalized by its maximum).
    #[arg(long)]
    depth: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Scene file (GSC1).
    #[arg(long)]
    scene: PathBuf,
    /// Dataset directory or its manifest.json.
    #[arg(long)]
    data: PathBuf,
    /// Trained pose file; enables the final trajectory-error entry.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// Training metrics log (JSONL); adds a loss-curve summary.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    check_worker_cap()?;
    match cli.cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Edi(args) => cmd_edi(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Render(args) => cmd_render(args),
        Cmd::Eval(args) => cmd_eval(args),
    }
}

// The engine is single-threaded, so the cap can only be validated, never
// exceeded; a malformed value is still a usage error.
fn check_worker_cap() -> Result<()> {
    if let Ok(s) = std::env::var("EVA_THREADS") {
        s.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("EVA_THREADS must be a non-negative integer, got {s:?}")))?;
    }
    Ok(())
}

/// Print a line to stdout. A broken pipe means the reader has gone away
/// (e.g. piped into `head`); exit quietly instead of panicking. All file
/// outputs are written before anything is printed, so nothing is lost.
fn emit(line: impl std::fmt::Display) -> Result<()> {
    use std::io::Write;
    if let Err(e) = writeln!(std::io::stdout(), "{line}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        return Err(anyhow::Error::new(e).context("writing to stdout"));
    }
    Ok(())
}

fn write_run_config(dir: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("run_config.json");
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Accepts either the dataset directory or its manifest.json.
fn dataset_dir(path: &Path) -> PathBuf {
    if path.file_name().is_some_and(|n| n == "manifest.json") {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        path.to_path_buf()
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let cfg = GenConfig {
        n_gaussians: args.gaussians,
        n_frames: args.frames,
        width: args.res,
        height: args.res,
        blur_level: args.blur_level.into(),
        ..GenConfig::new(args.seed)
    };
    let run = serde_json::json!({
        "command": "gen",
        "out": args.out.display().to_string(),
        "config": cfg,
    });
    write_run_config(&args.out, &run)?;
    generate_dataset(&cfg, &args.out)?;
    emit(args.out.join("manifest.json").display())?;
    Ok(())
}

fn cmd_edi(args: EdiArgs) -> Result<()> {
    let [t0, t1] = args.exposure[..] else {
        return Err(usage("--exposure takes exactly two values".to_string()));
    };
    if !(t1 > t0) {
        return Err(usage(format!("exposure end {t1} must exceed start {t0}")));
    }
    let thresholds = Thresholds::symmetric(args.threshold)?;
    let blur = read_ppm(&args.blur)?;
    let stream = read_evt1(&args.events, thresholds)?;
    if stream.width as usize != blur.width() || stream.height as usize != blur.height() {
        return Err(usage(format!(
            "event stream is {}x{} but the blur image is {}x{}",
            stream.width,
            stream.height,
            blur.width(),
            blur.height()
        )));
    }
    // Keep only the exposure's events, endpoints included.
    let events: Vec<_> = stream
        .events()
        .iter()
        .filter(|e| e.t >= t0 && e.t <= t1)
        .copied()
        .collect();
    let slice = EventStream::new(stream.width, stream.height, thresholds, events)?;
    let frame = BlurFrame::new(blur, (t0 + t1) / 2.0, t1 - t0, slice)?;
    let (latents, times) = edi_latents(&frame, &thresholds, args.n)?;

    let run = serde_json::json!({
        "command": "edi",
        "blur": args.blur.display().to_string(),
        "events": args.events.display().to_string(),
        "exposure": [t0, t1],
        "n": args.n,
        "threshold": args.threshold,
        "times": times,
    });
    write_run_config(&args.out, &run)?;
    for (i, latent) in latents.iter().enumerate() {
        write_ppm(&args.out.join(format!("latent_{i:02}.ppm")), latent)?;
    }
    write_ppm(&args.out.join("sharp.ppm"), &latents[latents.len() / 2])?;
    emit(args.out.display())?;
    Ok(())
}

// Applies one flat dotted-key JSON object on top of the defaults.
fn apply_config_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    let Some(map) = value.as_object() else {
        return Err(usage(format!("{} must hold a JSON object", path.display())));
    };
    for (key, v) in map {
        apply_config_key(cfg, key, v)
            .map_err(|e| usage(format!("{}: key {key:?}: {e}", path.display())))?;
    }
    Ok(())
}

fn apply_config_key(cfg: &mut TrainConfig, key: &str, v: &serde_json::Value) -> Result<()> {
    let as_u64 = || v.as_u64().ok_or_else(|| anyhow::anyhow!("expected a non-negative integer"));
    let as_f64 = || v.as_f64().ok_or_else(|| anyhow::anyhow!("expected a number"));
    let as_bool = || v.as_bool().ok_or_else(|| anyhow::anyhow!("expected a boolean"));
    match key {
        "total_iters" => cfg.total_iters = as_u64()?,
        "warmup_iters" => cfg.warmup_iters = as_u64()?,
        "coarse_fraction" => cfg.coarse_fraction = as_f64()?,
        "coarse_scale" => cfg.coarse_scale = as_f64()?,
        "n_poses" => cfg.n_poses = as_u64()? as usize,
        "seed" => cfg.seed = as_u64()?,
        "aux_interval" => cfg.aux_interval = as_u64()?,
        "log_interval" => cfg.log_interval = as_u64()?,
        "checkpoint_interval" => cfg.checkpoint_interval = as_u64()?,
        "use_event_loss" => cfg.use_event_loss = as_bool()?,
        "use_int_loss" => cfg.use_int_loss = as_bool()?,
        "use_depth_loss" => cfg.use_depth_loss = as_bool()?,
        "lr.means" => cfg.lr.means = as_f64()?,
        "lr.means_decay" => cfg.lr.means_decay = as_f64()?,
        "lr.opacities" => cfg.lr.opacities = as_f64()?,
        "lr.scales" => cfg.lr.scales = as_f64()?,
        "lr.rotations" => cfg.lr.rotations = as_f64()?,
        "lr.colors" => cfg.lr.colors = as_f64()?,
        "lr.pose" => cfg.lr.pose = as_f64()?,
        "lr.pose_decay" => cfg.lr.pose_decay = as_f64()?,
        "weights.lambda1" => cfg.weights.lambda1 = as_f64()?,
        "weights.lambda2" => cfg.weights.lambda2 = as_f64()?,
        "weights.w_blur" => cfg.weights.w_blur = as_f64()?,
        "weights.w_event" => cfg.weights.w_event = as_f64()?,
        "weights.w_int" => cfg.weights.w_int = as_f64()?,
        "weights.w_depth" => cfg.weights.w_depth = as_f64()?,
        "weights.beta" => cfg.weights.beta = as_f64()?,
        other => anyhow::bail!("unknown configuration key {other:?}"),
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let dir = dataset_dir(&args.data);
    let dataset = Dataset::load(&dir)?;
    let mut cfg = TrainConfig {
        n_poses: dataset.manifest.n_poses,
        ..TrainConfig::default()
    };
    if let Some(path) = &args.config {
        apply_config_file(&mut cfg, path)?;
    }
    if let Some(iters) = args.iters {
        cfg.total_iters = iters;
        if cfg.warmup_iters >= iters {
            cfg.warmup_iters = iters / 2;
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_event_loss {
        cfg.use_event_loss = false;
    }
    if args.no_int_loss {
        cfg.use_int_loss = false;
    }
    if args.no_depth_loss {
        cfg.use_depth_loss = false;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let run = serde_json::json!({
        "command": "train",
        "data": dir.display().to_string(),
        "out": args.out.display().to_string(),
        "config": cfg,
    });
    write_run_config(&args.out, &run)?;
    let result = train_with_output(&dataset, &cfg, &args.out)?;
    emit(format!(
        "trained {} iterations, {} gaussians -> {}",
        cfg.total_iters,
        result.scene.len(),
        args.out.display()
    ))?;
    Ok(())
}

// Flattens a pose file into render poses, applying stored offsets.
fn poses_from_file(path: &Path) -> Result<Vec<SE3>> {
    let frames = read_pose_file(path)?;
    let mut poses = Vec::new();
    for fp in &frames {
        for (k, mat) in fp.poses.iter().enumerate() {
            let base = SE3::from_matrix(&nalgebra::Matrix4::from_row_slice(mat))?;
            let pose = match &fp.offsets {
                Some(offs) => {
                    let off = offs.get(k).ok_or_else(|| {
                        anyhow::anyhow!(
                            "frame {} lists {} offsets for {} poses",
                            fp.frame_id,
                            offs.len(),
                            fp.poses.len()
                        )
                    })?;
                    SE3::exp(&nalgebra::Vector6::from_column_slice(off)).compose(&base)
                }
                None => base,
            };
            poses.push(pose);
        }
    }
    if poses.is_empty() {
        anyhow::bail!("pose file {} holds no poses", path.display());
    }
    Ok(poses)
}

fn normalized_depth(depth: &Image) -> Image {
    let max = depth.data().iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        depth.map(|v| v / max)
    } else {
        depth.clone()
    }
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let scene: GaussianScene = read_scene(&args.scene)?;
    let dataset = match &args.data {
        Some(p) => Some(Dataset::load(&dataset_dir(p))?),
        None => None,
    };

    let poses = match (&args.poses, args.orbit) {
        (Some(path), None) => poses_from_file(path)?,
        (None, Some(n)) => {
            if n == 0 {
                return Err(usage("--orbit must be at least 1".to_string()));
            }
            let extent = match &dataset {
                Some(ds) => ds.manifest.extent,
                None => scene_extent(&scene),
            };
            orbit_poses(extent, n)
        }
        _ => return Err(usage("pass exactly one of --poses or --orbit".to_string())),
    };

    let background = match &dataset {
        Some(ds) => ds.background(),
        None => Vector3::new(0.05, 0.06, 0.08),
    };

    let run = serde_json::json!({
        "command": "render",
        "scene": args.scene.display().to_string(),
        "poses": args.poses.as_ref().map(|p| p.display().to_string()),
        "orbit": args.orbit,
        "data": args.data.as_ref().map(|p| p.display().to_string()),
        "res": args.res,
        "depth": args.depth,
        "frames": poses.len(),
    });
    write_run_config(&args.out, &run)?;

    for (i, pose) in poses.iter().enumerate() {
        let cam = match &dataset {
            Some(ds) => ds.camera(*pose)?,
            None => {
                let mut c = canonical_camera(scene_extent(&scene), args.res, args.res)?;
                c.pose = *pose;
                c
            }
        };
        let out = render(&scene, &cam, &background)?;
        write_ppm(&args.out.join(format!("frame_{i:03}.ppm")), &out.color)?;
        if args.depth {
            write_pgm(
                &args.out.join(format!("frame_{i:03}_depth.pgm")),
                &normalized_depth(&out.depth),
            )?;
        }
    }
    emit(format!("{} frames -> {}", poses.len(), args.out.display()))?;
    Ok(())
}

// Half-diagonal of the scene's bounding box, with a floor for tiny scenes.
fn scene_extent(scene: &GaussianScene) -> f64 {
    match scene.bounds() {
        Some((lo, hi)) => ((hi - lo).norm() / 2.0).max(1e-3),
        None => 1.0,
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let dataset = Dataset::load(&dataset_dir(&args.data))?;
    let scene = read_scene(&args.scene)?;
    let trajectories = match &args.poses {
        Some(path) => read_pose_file(path)?
            .iter()
            .map(|fp| fp.to_trajectory())
            .collect::<evsplat_core::Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let mut report = evaluate(&scene, &trajectories, &dataset)?;
    if let Some(path) = &args.metrics {
        let records = read_jsonl(path)?;
        report.loss_summary = summarize_loss_log(&records);
    }
    let json = report.to_json()?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, json + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => emit(&json)?,
    }
    Ok(())
}
