//! Differentiable 3D Gaussian splat rasterizer on CPU.
//!
//! Perspective projection linearizes each Gaussian's covariance through the
//! camera Jacobian (cov2d = J W Σ Wᵀ Jᵀ + 0.3 I), pixels composite splats
//! front to back with per-splat alpha, and the backward pass produces
//! analytic gradients for every Gaussian parameter plus an se(3) tangent for
//! the camera pose. Color is plain RGB (no spherical harmonics), the depth
//! output is alpha-weighted expected depth, and there is no densification.
//!
//! Splats are composited in a globally fixed order (depth ascending, index
//! tie-break) with no early termination, so identical inputs produce
//! bit-identical images and gradients.

use nalgebra::{Matrix2, Matrix3, Quaternion, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::se3::SE3;

/// Dilation added to both diagonal entries of every projected covariance, in
/// pixel² units; keeps footprints at least a fraction of a pixel wide.
pub const COV2D_DILATION: f64 = 0.3;

/// Per-splat alpha ceiling; compositing never lets one splat fully occlude.
pub const ALPHA_CLIP: f64 = 0.99;

const BBOX_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// Stored unnormalized (w, i, j, k); the forward pass normalizes.
    pub rotation: Quaternion<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Default)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian3D>,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Self {
        GaussianScene { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Axis-aligned bounds of the means; `None` for an empty scene.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.gaussians.first()?;
        let mut lo = first.mean;
        let mut hi = first.mean;
        for g in &self.gaussians {
            for i in 0..3 {
                lo[i] = lo[i].min(g.mean[i]);
                hi[i] = hi[i].max(g.mean[i]);
            }
        }
        Some((lo, hi))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: SE3,
    pub near: f64,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        pose: SE3,
        near: f64,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose,
            near,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0) || !(self.fy > 0.0) {
            return Err(Error::argument(format!(
                "focal lengths must be positive, got fx={}, fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.near > 0.0) {
            return Err(Error::argument(format!(
                "near plane must be positive, got {}",
                self.near
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::argument(format!(
                "image dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Camera with the same intrinsics scaled to a new resolution.
    pub fn scaled_to(&self, width: usize, height: usize) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..*self
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Image,
    pub depth: Image,
    pub alpha: Image,
}

/// Upstream gradients w.r.t. the three render outputs.
#[derive(Debug, Clone)]
pub struct UpstreamGrad {
    pub color: Image,
    pub depth: Image,
    pub alpha: Image,
}

impl UpstreamGrad {
    pub fn zeros(width: usize, height: usize) -> Self {
        UpstreamGrad {
            color: Image::zeros(width, height, 3),
            depth: Image::zeros(width, height, 1),
            alpha: Image::zeros(width, height, 1),
        }
    }
}

/// Gradients for every Gaussian parameter and the camera pose tangent.
///
/// Rotation gradients are ambient (w, i, j, k) components, including the
/// normalization Jacobian. The pose tangent is the derivative of the loss
/// under a left perturbation `exp(xi) ∘ pose`, rotation part first.
#[derive(Debug, Clone)]
pub struct SceneGrads {
    pub mean: Vec<[f64; 3]>,
    pub log_scale: Vec<[f64; 3]>,
    pub rotation: Vec<[f64; 4]>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub pose: [f64; 6],
}

impl SceneGrads {
    pub fn zeros(n: usize) -> Self {
        SceneGrads {
            mean: vec![[0.0; 3]; n],
            log_scale: vec![[0.0; 3]; n],
            rotation: vec![[0.0; 4]; n],
            opacity_logit: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            pose: [0.0; 6],
        }
    }

    pub fn add(&mut self, other: &SceneGrads) {
        for (a, b) in self.mean.iter_mut().zip(&other.mean) {
            for i in 0..3 {
                a[i] += b[i];
            }
        }
        for (a, b) in self.log_scale.iter_mut().zip(&other.log_scale) {
            for i in 0..3 {
                a[i] += b[i];
            }
        }
        for (a, b) in self.rotation.iter_mut().zip(&other.rotation) {
            for i in 0..4 {
                a[i] += b[i];
            }
        }
        for (a, b) in self.opacity_logit.iter_mut().zip(&other.opacity_logit) {
            *a += b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            for i in 0..3 {
                a[i] += b[i];
            }
        }
        for i in 0..6 {
            self.pose[i] += other.pose[i];
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a quaternion assumed unit, Hamilton convention.
fn quat_to_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of `quat_to_matrix` w.r.t. each unit-quaternion
/// component, in (w, x, y, z) order.
fn quat_matrix_partials(q: &Quaternion<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

/// Everything per-Gaussian the pixel loops need, cached by `preprocess`.
struct Splat {
    idx: usize,
    mean2d: Vector2<f64>,
    conic: Matrix2<f64>,
    z: f64,
    opacity: f64,
    color: Vector3<f64>,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    p_cam: Vector3<f64>,
}

pub struct Projection {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

/// EWA projection of one Gaussian. `None` when the center is closer than the
/// camera's near plane.
pub fn project(g: &Gaussian3D, cam: &Camera) -> Option<Projection> {
    let w_mat = cam.pose.rotation_matrix();
    let p_cam = cam.pose.transform(&g.mean);
    if p_cam.z < cam.near {
        return None;
    }
    let (mean2d, cov2d) = project_at(g, cam, &w_mat, &p_cam);
    Some(Projection {
        mean2d,
        cov2d,
        depth: p_cam.z,
    })
}

fn projection_jacobian(cam: &Camera, p: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
    let z = p.z;
    nalgebra::Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * p.x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * p.y / (z * z),
    )
}

fn project_at(
    g: &Gaussian3D,
    cam: &Camera,
    w_mat: &Matrix3<f64>,
    p_cam: &Vector3<f64>,
) -> (Vector2<f64>, Matrix2<f64>) {
    let mean2d = Vector2::new(
        cam.fx * p_cam.x / p_cam.z + cam.cx,
        cam.fy * p_cam.y / p_cam.z + cam.cy,
    );
    let q = g.rotation.normalize();
    let r = quat_to_matrix(&q);
    let d = Vector3::new(
        (2.0 * g.log_scale.x).exp(),
        (2.0 * g.log_scale.y).exp(),
        (2.0 * g.log_scale.z).exp(),
    );
    let sigma3 = r * Matrix3::from_diagonal(&d) * r.transpose();
    let j = projection_jacobian(cam, p_cam);
    let p = j * w_mat;
    let mut cov2d = p * sigma3 * p.transpose();
    cov2d[(0, 0)] += COV2D_DILATION;
    cov2d[(1, 1)] += COV2D_DILATION;
    (mean2d, cov2d)
}

fn preprocess(scene: &GaussianScene, cam: &Camera) -> Result<Vec<Splat>> {
    let w_mat = cam.pose.rotation_matrix();
    let mut splats = Vec::with_capacity(scene.len());
    for (idx, g) in scene.gaussians.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::non_finite(format!("Gaussian {idx} has non-finite parameters")));
        }
        let p_cam = cam.pose.transform(&g.mean);
        if p_cam.z < cam.near {
            continue;
        }
        let (mean2d, cov2d) = project_at(g, cam, &w_mat, &p_cam);
        let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
        if det <= 0.0 || !det.is_finite() {
            continue;
        }
        let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
        let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        let radius = BBOX_SIGMA * lambda_max.sqrt();
        // Pixel (x, y) samples at center (x + 0.5, y + 0.5).
        let x0 = (mean2d.x - radius - 0.5).ceil().max(0.0);
        let x1 = (mean2d.x + radius - 0.5).floor().min(cam.width as f64 - 1.0);
        let y0 = (mean2d.y - radius - 0.5).ceil().max(0.0);
        let y1 = (mean2d.y + radius - 0.5).floor().min(cam.height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        splats.push(Splat {
            idx,
            mean2d,
            conic,
            z: p_cam.z,
            opacity: g.opacity(),
            color: g.color,
            x0: x0 as usize,
            x1: x1 as usize,
            y0: y0 as usize,
            y1: y1 as usize,
            p_cam,
        });
    }
    splats.sort_by(|a, b| a.z.partial_cmp(&b.z).unwrap().then(a.idx.cmp(&b.idx)));
    Ok(splats)
}

/// Per-pixel lists of splat positions (indices into the depth-sorted splat
/// array), themselves in depth order. CSR layout: `offsets[p]..offsets[p+1]`
/// indexes into `entries`.
fn build_pixel_lists(splats: &[Splat], width: usize, height: usize) -> (Vec<u32>, Vec<u32>) {
    let n_px = width * height;
    let mut counts = vec![0u32; n_px + 1];
    for s in splats {
        for y in s.y0..=s.y1 {
            let row = y * width;
            for x in s.x0..=s.x1 {
                counts[row + x + 1] += 1;
            }
        }
    }
    for i in 0..n_px {
        counts[i + 1] += counts[i];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut entries = vec![0u32; offsets[n_px] as usize];
    for (pos, s) in splats.iter().enumerate() {
        for y in s.y0..=s.y1 {
            let row = y * width;
            for x in s.x0..=s.x1 {
                let c = &mut cursor[row + x];
                entries[*c as usize] = pos as u32;
                *c += 1;
            }
        }
    }
    (offsets, entries)
}

fn check_background(background: &Vector3<f64>) -> Result<()> {
    if background.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("background color".to_string()));
    }
    Ok(())
}

/// Front-to-back alpha compositing of the scene into color, expected depth,
/// and accumulated alpha.
pub fn render(scene: &GaussianScene, cam: &Camera, background: &Vector3<f64>) -> Result<RenderOutput> {
    cam.validate()?;
    check_background(background)?;
    let splats = preprocess(scene, cam)?;
    let (offsets, entries) = build_pixel_lists(&splats, cam.width, cam.height);

    let mut color = Image::zeros(cam.width, cam.height, 3);
    let mut depth = Image::zeros(cam.width, cam.height, 1);
    let mut alpha = Image::zeros(cam.width, cam.height, 1);

    for y in 0..cam.height {
        for x in 0..cam.width {
            let px = y * cam.width + x;
            let center = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c_acc = Vector3::zeros();
            let mut d_acc = 0.0;
            for &e in &entries[offsets[px] as usize..offsets[px + 1] as usize] {
                let s = &splats[e as usize];
                let d = center - s.mean2d;
                let power = -0.5 * (s.conic * d).dot(&d);
                let a = (s.opacity * power.exp()).min(ALPHA_CLIP);
                let w = a * t;
                c_acc += s.color * w;
                d_acc += s.z * w;
                t *= 1.0 - a;
            }
            let a_out = 1.0 - t;
            let final_color = c_acc + background * t;
            for ch in 0..3 {
                color.set(x, y, ch, final_color[ch]);
            }
            alpha.set(x, y, 0, a_out);
            depth.set(x, y, 0, d_acc / a_out.max(1e-6));
        }
    }
    Ok(RenderOutput {
        color,
        depth,
        alpha,
    })
}

/// Per-splat accumulators gathered over the pixel loop, pushed into parameter
/// space once per splat afterwards.
#[derive(Clone, Copy, Default)]
struct SplatAccum {
    g_mean2d: Vector2<f64>,
    /// Symmetric gradient w.r.t. the conic, (m00, m01, m11).
    g_conic: [f64; 3],
    g_z: f64,
    g_opacity_logit: f64,
    g_color: Vector3<f64>,
}

/// Renders and backpropagates `upstream` through the compositing, projection,
/// and covariance chain. Returns the forward output alongside gradients for
/// every Gaussian and the camera pose tangent.
pub fn render_with_grad(
    scene: &GaussianScene,
    cam: &Camera,
    background: &Vector3<f64>,
    upstream: &UpstreamGrad,
) -> Result<(RenderOutput, SceneGrads)> {
    cam.validate()?;
    check_background(background)?;
    let dims_ok = |img: &Image, ch: usize| {
        img.width() == cam.width && img.height() == cam.height && img.channels() == ch
    };
    if !dims_ok(&upstream.color, 3) || !dims_ok(&upstream.depth, 1) || !dims_ok(&upstream.alpha, 1) {
        return Err(Error::dimension(format!(
            "upstream gradient dimensions do not match the {}x{} camera",
            cam.width, cam.height
        )));
    }
    let splats = preprocess(scene, cam)?;
    let (offsets, entries) = build_pixel_lists(&splats, cam.width, cam.height);

    let mut color = Image::zeros(cam.width, cam.height, 3);
    let mut depth = Image::zeros(cam.width, cam.height, 1);
    let mut alpha = Image::zeros(cam.width, cam.height, 1);
    let mut accum = vec![SplatAccum::default(); splats.len()];
    // (alpha, transmittance before the splat), reused across pixels.
    let mut chain: Vec<(f64, f64)> = Vec::new();

    for y in 0..cam.height {
        for x in 0..cam.width {
            let px = y * cam.width + x;
            let list = &entries[offsets[px] as usize..offsets[px + 1] as usize];
            let center = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);

            chain.clear();
            let mut t = 1.0;
            let mut c_acc = Vector3::zeros();
            let mut d_acc = 0.0;
            for &e in list {
                let s = &splats[e as usize];
                let d = center - s.mean2d;
                let power = -0.5 * (s.conic * d).dot(&d);
                let a = (s.opacity * power.exp()).min(ALPHA_CLIP);
                chain.push((a, t));
                c_acc += s.color * (a * t);
                d_acc += s.z * (a * t);
                t *= 1.0 - a;
            }
            let t_final = t;
            let a_out = 1.0 - t_final;
            let final_color = c_acc + background * t_final;
            for ch in 0..3 {
                color.set(x, y, ch, final_color[ch]);
            }
            alpha.set(x, y, 0, a_out);
            let denom = a_out.max(1e-6);
            depth.set(x, y, 0, d_acc / denom);

            let g_color_up = Vector3::new(
                upstream.color.get(x, y, 0),
                upstream.color.get(x, y, 1),
                upstream.color.get(x, y, 2),
            );
            let g_depth_up = upstream.depth.get(x, y, 0);
            let g_alpha_up = upstream.alpha.get(x, y, 0);
            if g_color_up == Vector3::zeros() && g_depth_up == 0.0 && g_alpha_up == 0.0 {
                continue;
            }

            let g_draw = g_depth_up / denom;
            let mut g_alpha_total = g_alpha_up;
            if a_out > 1e-6 {
                g_alpha_total -= g_depth_up * d_acc / (denom * denom);
            }

            // Reverse sweep with suffix sums of everything composited after
            // the current splat.
            let mut suffix_c = background * t_final;
            let mut suffix_d = 0.0;
            for (k, &e) in list.iter().enumerate().rev() {
                let s = &splats[e as usize];
                let (a, t_before) = chain[k];
                let one_minus = 1.0 - a;
                let w = a * t_before;

                let acc = &mut accum[e as usize];
                acc.g_color += g_color_up * w;
                acc.g_z += g_draw * w;

                let g_a = g_color_up.dot(&(s.color * t_before - suffix_c / one_minus))
                    + g_draw * (s.z * t_before - suffix_d / one_minus)
                    + g_alpha_total * t_final / one_minus;

                suffix_c += s.color * w;
                suffix_d += s.z * w;

                let d = center - s.mean2d;
                let power = -0.5 * (s.conic * d).dot(&d);
                let g_val = power.exp();
                if s.opacity * g_val >= ALPHA_CLIP {
                    // Clipped alpha is locally constant.
                    continue;
                }
                let g_g = g_a * s.opacity;
                let g_opa = g_a * g_val;
                acc.g_opacity_logit += g_opa * s.opacity * (1.0 - s.opacity);
                let md = s.conic * d;
                // dG/d(mean2d) = +G * conic * d; dG/d(conic) = -G/2 * d dᵀ.
                acc.g_mean2d += md * (g_g * g_val);
                let half = -0.5 * g_g * g_val;
                acc.g_conic[0] += half * d.x * d.x;
                acc.g_conic[1] += half * 2.0 * d.x * d.y;
                acc.g_conic[2] += half * d.y * d.y;
            }
        }
    }

    let mut grads = SceneGrads::zeros(scene.len());
    let w_mat = cam.pose.rotation_matrix();
    for (pos, s) in splats.iter().enumerate() {
        let acc = &accum[pos];
        let g = &scene.gaussians[s.idx];

        // Conic -> cov2d: dL/dΣ = -M (dL/dM) M for M = Σ⁻¹, both symmetric.
        let g_conic = Matrix2::new(
            acc.g_conic[0],
            acc.g_conic[1] * 0.5,
            acc.g_conic[1] * 0.5,
            acc.g_conic[2],
        );
        let g_cov2d = -(s.conic * g_conic * s.conic);

        let j = projection_jacobian(cam, &s.p_cam);
        let p = j * w_mat;
        let q = g.rotation.normalize();
        let r = quat_to_matrix(&q);
        let d_diag = Vector3::new(
            (2.0 * g.log_scale.x).exp(),
            (2.0 * g.log_scale.y).exp(),
            (2.0 * g.log_scale.z).exp(),
        );
        let sigma3 = r * Matrix3::from_diagonal(&d_diag) * r.transpose();

        // cov2d = P Σ3 Pᵀ + dilation: both factors of the symmetric product.
        let g_sigma3 = p.transpose() * g_cov2d * p;
        let g_p = (g_cov2d + g_cov2d.transpose()) * p * sigma3;

        // Σ3 = R D Rᵀ.
        let g_r = (g_sigma3 + g_sigma3.transpose()) * r * Matrix3::from_diagonal(&d_diag);
        let rt_gs_r = r.transpose() * g_sigma3 * r;
        for i in 0..3 {
            grads.log_scale[s.idx][i] += rt_gs_r[(i, i)] * 2.0 * d_diag[i];
        }

        // R(q̂) with q̂ = q/|q|: ambient gradient through the normalization.
        let partials = quat_matrix_partials(&q);
        let mut g_qhat = [0.0f64; 4];
        for (i, dr) in partials.iter().enumerate() {
            g_qhat[i] = g_r.component_mul(dr).sum();
        }
        let norm = g.rotation.norm();
        let qhat = [q.w, q.i, q.j, q.k];
        let dot: f64 = (0..4).map(|i| qhat[i] * g_qhat[i]).sum();
        for i in 0..4 {
            grads.rotation[s.idx][i] += (g_qhat[i] - qhat[i] * dot) / norm;
        }

        // P = J W: gradients to J (then p_cam) and to W (then pose rotation).
        let g_j = g_p * w_mat.transpose();
        let g_w_cov = j.transpose() * g_p;

        let z = s.p_cam.z;
        let z2 = z * z;
        let z3 = z2 * z;
        let mut g_p_cam = j.transpose() * acc.g_mean2d;
        g_p_cam.z += acc.g_z;
        g_p_cam.x += g_j[(0, 2)] * (-cam.fx / z2);
        g_p_cam.y += g_j[(1, 2)] * (-cam.fy / z2);
        g_p_cam.z += g_j[(0, 0)] * (-cam.fx / z2)
            + g_j[(0, 2)] * (2.0 * cam.fx * s.p_cam.x / z3)
            + g_j[(1, 1)] * (-cam.fy / z2)
            + g_j[(1, 2)] * (2.0 * cam.fy * s.p_cam.y / z3);

        let g_mean = w_mat.transpose() * g_p_cam;
        for i in 0..3 {
            grads.mean[s.idx][i] += g_mean[i];
            grads.color[s.idx][i] += acc.g_color[i];
        }
        grads.opacity_logit[s.idx] += acc.g_opacity_logit;

        // Left pose perturbation exp(xi)∘pose: the point path contributes
        // (p_cam × g_p_cam, g_p_cam); the covariance path perturbs W by
        // [δω]× W.
        let torque = s.p_cam.cross(&g_p_cam);
        let b = g_w_cov * w_mat.transpose();
        grads.pose[0] += torque.x + (b[(2, 1)] - b[(1, 2)]);
        grads.pose[1] += torque.y + (b[(0, 2)] - b[(2, 0)]);
        grads.pose[2] += torque.z + (b[(1, 0)] - b[(0, 1)]);
        grads.pose[3] += g_p_cam.x;
        grads.pose[4] += g_p_cam.y;
        grads.pose[5] += g_p_cam.z;
    }

    Ok((
        RenderOutput {
            color,
            depth,
            alpha,
        },
        grads,
    ))
}
