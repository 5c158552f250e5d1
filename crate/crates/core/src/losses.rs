//! Training losses: photometric blur loss, event-map loss, intensity loss,
//! and edge-aware depth regularization, plus their weighted total.
//!
//! Every loss has a companion `_grad` function returning the analytic
//! gradient with respect to the simulated/rendered argument; the reference
//! argument is always treated as constant.

use crate::error::{Error, Result};
use crate::image::Image;

/// Side length of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mixing weights for the total training loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    /// D-SSIM fraction in the blur loss.
    pub lambda1: f64,
    /// D-SSIM fraction in the intensity loss.
    pub lambda2: f64,
    pub w_blur: f64,
    pub w_event: f64,
    pub w_int: f64,
    pub w_depth: f64,
    /// Depth-regularizer edge sharpness.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.2,
            lambda2: 0.2,
            w_blur: 1.0,
            w_event: 5e-3,
            w_int: 1e-3,
            w_depth: 1e-2,
            beta: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda1) || !(0.0..=1.0).contains(&self.lambda2) {
            return Err(Error::argument(format!(
                "lambda1/lambda2 must lie in [0, 1], got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        for (name, w) in [
            ("w_blur", self.w_blur),
            ("w_event", self.w_event),
            ("w_int", self.w_int),
            ("w_depth", self.w_depth),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::argument(format!("{name} must be non-negative, got {w}")));
            }
        }
        if !(self.beta > 0.0) {
            return Err(Error::argument(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Unweighted values of the four loss terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossComponents {
    pub blur: f64,
    pub event: f64,
    pub intensity: f64,
    pub depth: f64,
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode blur of a single-channel plane; output is
/// (w-10) x (h-10).
fn valid_blur(data: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, g) in kernel.iter().enumerate() {
                acc += g * data[y * w + x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, g) in kernel.iter().enumerate() {
                acc += g * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn check_ssim_dims(a: &Image, b: &Image) -> Result<()> {
    a.check_same_dims(b, "structural similarity")?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::dimension(format!(
            "image {}x{} is smaller than the {}x{} structural similarity window",
            a.width(),
            a.height(),
            SSIM_WINDOW,
            SSIM_WINDOW
        )));
    }
    Ok(())
}

fn channel_plane(img: &Image, ch: usize) -> Vec<f64> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut plane = vec![0.0; w * h];
    for i in 0..w * h {
        plane[i] = img.data()[i * c + ch];
    }
    plane
}

/// Mean structural similarity over all fully interior windows, averaged over
/// channels. Inputs are expected in [0, 1].
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_ssim_dims(a, b)?;
    let kernel = gaussian_kernel();
    let (w, h) = (a.width(), a.height());
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let x = channel_plane(a, ch);
        let y = channel_plane(b, ch);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = valid_blur(&x, w, h, &kernel);
        let my = valid_blur(&y, w, h, &kernel);
        let mxx = valid_blur(&xx, w, h, &kernel);
        let myy = valid_blur(&yy, w, h, &kernel);
        let mxy = valid_blur(&xy, w, h, &kernel);
        let mut acc = 0.0;
        for i in 0..ow * oh {
            let (mux, muy) = (mx[i], my[i]);
            let sx = mxx[i] - mux * mux;
            let sy = myy[i] - muy * muy;
            let sxy = mxy[i] - mux * muy;
            let a1 = 2.0 * mux * muy + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = mux * mux + muy * muy + SSIM_C1;
            let b2 = sx + sy + SSIM_C2;
            acc += (a1 * a2) / (b1 * b2);
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / a.channels() as f64)
}

/// Structural dissimilarity, (1 - ssim) / 2.
pub fn dssim(a: &Image, b: &Image) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

/// D-SSIM and its gradient with respect to `b`.
pub fn dssim_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    check_ssim_dims(a, b)?;
    let kernel = gaussian_kernel();
    let (w, h) = (a.width(), a.height());
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    let n_windows = (ow * oh * a.channels()) as f64;
    let mut grad = Image::zeros(w, h, a.channels());
    let mut ssim_total = 0.0;
    for ch in 0..a.channels() {
        let x = channel_plane(a, ch);
        let y = channel_plane(b, ch);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = valid_blur(&x, w, h, &kernel);
        let my = valid_blur(&y, w, h, &kernel);
        let mxx = valid_blur(&xx, w, h, &kernel);
        let myy = valid_blur(&yy, w, h, &kernel);
        let mxy = valid_blur(&xy, w, h, &kernel);
        // d(dssim)/dy = -1/2 * d(ssim)/dy, distributed from every window
        // containing the pixel.
        let scale = -0.5 / n_windows;
        for cy in 0..oh {
            for cx in 0..ow {
                let i = cy * ow + cx;
                let (mux, muy) = (mx[i], my[i]);
                let sx = mxx[i] - mux * mux;
                let sy = myy[i] - muy * muy;
                let sxy = mxy[i] - mux * muy;
                let a1 = 2.0 * mux * muy + SSIM_C1;
                let a2 = 2.0 * sxy + SSIM_C2;
                let b1 = mux * mux + muy * muy + SSIM_C1;
                let b2 = sx + sy + SSIM_C2;
                let s = (a1 * a2) / (b1 * b2);
                ssim_total += s;
                for (v, gv) in kernel.iter().enumerate() {
                    for (u, gu) in kernel.iter().enumerate() {
                        let px = cx + u;
                        let py = cy + v;
                        let k = py * w + px;
                        let gk = gu * gv;
                        let term = (2.0 * mux * a2 + a1 * 2.0 * (x[k] - mux)) / (b1 * b2)
                            - s * (2.0 * muy / b1 + 2.0 * (y[k] - muy) / b2);
                        let cur = grad.get(px, cy + v, ch);
                        grad.set(px, py, ch, cur + scale * gk * term);
                    }
                }
            }
        }
    }
    let value = (1.0 - ssim_total / n_windows) / 2.0;
    Ok((value, grad))
}

/// Mean absolute difference over all pixels and channels.
pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b, "mean absolute difference")?;
    Ok(a.mean_abs_diff(b))
}

fn l1_grad_into(a: &Image, b: &Image, weight: f64, grad: &mut Image) {
    let n = b.data().len() as f64;
    for (i, (&bv, &av)) in b.data().iter().zip(a.data()).enumerate() {
        let s = (bv - av).signum() * ((bv != av) as i32 as f64);
        grad.data_mut()[i] += weight * s / n;
    }
}

fn check_lambda(lambda: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::argument(format!("{name} must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// Photometric loss between an observed and a simulated blurry image:
/// (1 - lambda1) L1 + lambda1 D-SSIM.
pub fn blur_loss(b_obs: &Image, b_sim: &Image, lambda1: f64) -> Result<f64> {
    check_lambda(lambda1, "lambda1")?;
    Ok((1.0 - lambda1) * l1(b_obs, b_sim)? + lambda1 * dssim(b_obs, b_sim)?)
}

/// Blur loss and its gradient with respect to the simulated image.
pub fn blur_loss_grad(b_obs: &Image, b_sim: &Image, lambda1: f64) -> Result<(f64, Image)> {
    check_lambda(lambda1, "lambda1")?;
    let (ds, ds_grad) = dssim_grad(b_obs, b_sim)?;
    let l = l1(b_obs, b_sim)?;
    let mut grad = ds_grad.map(|v| v * lambda1);
    l1_grad_into(b_obs, b_sim, 1.0 - lambda1, &mut grad);
    Ok(((1.0 - lambda1) * l + lambda1 * ds, grad))
}

fn check_map_lists(gt: &[Image], sim: &[Image]) -> Result<()> {
    if gt.len() != sim.len() || gt.is_empty() {
        return Err(Error::dimension(format!(
            "event map lists must have equal non-zero length, got {} and {}",
            gt.len(),
            sim.len()
        )));
    }
    for (g, s) in gt.iter().zip(sim) {
        g.check_same_dims(s, "event map pair")?;
    }
    Ok(())
}

/// Mean L1 discrepancy between ground-truth and simulated event maps,
/// averaged over the interval list. Both sides must be in the same
/// (threshold-scaled log-intensity) units.
pub fn event_loss(gt_maps: &[Image], sim_maps: &[Image]) -> Result<f64> {
    check_map_lists(gt_maps, sim_maps)?;
    let mut total = 0.0;
    for (g, s) in gt_maps.iter().zip(sim_maps) {
        total += g.mean_abs_diff(s);
    }
    Ok(total / gt_maps.len() as f64)
}

/// Event loss and per-map gradients with respect to the simulated maps.
pub fn event_loss_grad(gt_maps: &[Image], sim_maps: &[Image]) -> Result<(f64, Vec<Image>)> {
    check_map_lists(gt_maps, sim_maps)?;
    let m = gt_maps.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(gt_maps.len());
    for (g, s) in gt_maps.iter().zip(sim_maps) {
        total += g.mean_abs_diff(s);
        let mut grad = Image::zeros(s.width(), s.height(), s.channels());
        l1_grad_into(g, s, 1.0 / m, &mut grad);
        grads.push(grad);
    }
    Ok((total / m, grads))
}

/// Grayscale photometric loss: (1 - lambda2) L1 + lambda2 D-SSIM.
pub fn intensity_loss(g_obs: &Image, g_sim: &Image, lambda2: f64) -> Result<f64> {
    check_gray(g_obs)?;
    check_gray(g_sim)?;
    check_lambda(lambda2, "lambda2")?;
    Ok((1.0 - lambda2) * l1(g_obs, g_sim)? + lambda2 * dssim(g_obs, g_sim)?)
}

/// Intensity loss and its gradient with respect to the simulated image.
pub fn intensity_loss_grad(g_obs: &Image, g_sim: &Image, lambda2: f64) -> Result<(f64, Image)> {
    check_gray(g_obs)?;
    check_gray(g_sim)?;
    check_lambda(lambda2, "lambda2")?;
    let (ds, ds_grad) = dssim_grad(g_obs, g_sim)?;
    let l = l1(g_obs, g_sim)?;
    let mut grad = ds_grad.map(|v| v * lambda2);
    l1_grad_into(g_obs, g_sim, 1.0 - lambda2, &mut grad);
    Ok(((1.0 - lambda2) * l + lambda2 * ds, grad))
}

fn check_gray(img: &Image) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::dimension(format!(
            "expected a single-channel image, got {} channels",
            img.channels()
        )));
    }
    Ok(())
}

const SOBEL_SMOOTH: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
const SOBEL_DERIV: [f64; 5] = [-1.0, -2.0, 0.0, 2.0, 1.0];
/// Normalizer equal to the sum of the positive kernel taps, giving a unit
/// response on a unit step edge.
const SOBEL_NORM: f64 = 48.0;

#[inline]
fn clamp_idx(v: i64, max: usize) -> usize {
    v.clamp(0, max as i64 - 1) as usize
}

/// 5x5 Sobel derivative along x (replicate padding at borders).
pub fn sobel_x(img: &Image) -> Result<Image> {
    sobel(img, false)
}

/// 5x5 Sobel derivative along y (replicate padding at borders).
pub fn sobel_y(img: &Image) -> Result<Image> {
    sobel(img, true)
}

fn sobel(img: &Image, vertical: bool) -> Result<Image> {
    check_gray(img)?;
    let (w, h) = (img.width(), img.height());
    let mut out = Image::zeros(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            // Accumulate taps relative to the center value. The kernel weights
            // sum to zero, so this changes nothing algebraically, but it makes
            // the response exactly 0.0 on constant input instead of leaving a
            // rounding residue; the depth regularizer relies on that.
            let center = img.get(x, y, 0);
            let mut acc = 0.0;
            for (vi, dv) in (-2i64..=2).enumerate() {
                for (ui, du) in (-2i64..=2).enumerate() {
                    let kw = if vertical {
                        SOBEL_DERIV[vi] * SOBEL_SMOOTH[ui]
                    } else {
                        SOBEL_SMOOTH[vi] * SOBEL_DERIV[ui]
                    };
                    let sx = clamp_idx(x as i64 + du, w);
                    let sy = clamp_idx(y as i64 + dv, h);
                    acc += kw * (img.get(sx, sy, 0) - center);
                }
            }
            out.set(x, y, 0, acc / SOBEL_NORM);
        }
    }
    Ok(out)
}

/// Adjoint of `sobel_x`/`sobel_y` under the replicate-padded forward:
/// scatters upstream values through the same clamped taps.
fn sobel_adjoint(upstream: &Image, vertical: bool) -> Image {
    let (w, h) = (upstream.width(), upstream.height());
    let mut out = Image::zeros(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let up = upstream.get(x, y, 0);
            if up == 0.0 {
                continue;
            }
            for (vi, dv) in (-2i64..=2).enumerate() {
                for (ui, du) in (-2i64..=2).enumerate() {
                    let kw = if vertical {
                        SOBEL_DERIV[vi] * SOBEL_SMOOTH[ui]
                    } else {
                        SOBEL_SMOOTH[vi] * SOBEL_DERIV[ui]
                    };
                    let sx = clamp_idx(x as i64 + du, w);
                    let sy = clamp_idx(y as i64 + dv, h);
                    let cur = out.get(sx, sy, 0);
                    out.set(sx, sy, 0, cur + kw * up / SOBEL_NORM);
                }
            }
        }
    }
    out
}

/// Per-pixel contributions of the depth regularizer:
/// |dx D| e^(-beta |dx G|) + |dy D| e^(-beta |dy G|).
pub fn depth_reg_map(depth: &Image, gray: &Image, beta: f64) -> Result<Image> {
    depth.check_same_dims(gray, "depth regularizer")?;
    check_gray(depth)?;
    let dx_d = sobel_x(depth)?;
    let dy_d = sobel_y(depth)?;
    let dx_g = sobel_x(gray)?;
    let dy_g = sobel_y(gray)?;
    let (w, h) = (depth.width(), depth.height());
    let mut out = Image::zeros(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let v = dx_d.get(x, y, 0).abs() * (-beta * dx_g.get(x, y, 0).abs()).exp()
                + dy_d.get(x, y, 0).abs() * (-beta * dy_g.get(x, y, 0).abs()).exp();
            out.set(x, y, 0, v);
        }
    }
    Ok(out)
}

/// Edge-aware depth smoothness: mean over pixels of `depth_reg_map`. The
/// intensity image only shapes the edge weights and receives no gradient.
pub fn depth_reg_loss(depth: &Image, gray: &Image, beta: f64) -> Result<f64> {
    let map = depth_reg_map(depth, gray, beta)?;
    Ok(map.data().iter().sum::<f64>() / map.data().len() as f64)
}

/// Depth regularizer and its gradient with respect to depth.
pub fn depth_reg_loss_grad(depth: &Image, gray: &Image, beta: f64) -> Result<(f64, Image)> {
    depth.check_same_dims(gray, "depth regularizer")?;
    check_gray(depth)?;
    let dx_d = sobel_x(depth)?;
    let dy_d = sobel_y(depth)?;
    let dx_g = sobel_x(gray)?;
    let dy_g = sobel_y(gray)?;
    let (w, h) = (depth.width(), depth.height());
    let n = (w * h) as f64;
    let mut loss = 0.0;
    let mut up_x = Image::zeros(w, h, 1);
    let mut up_y = Image::zeros(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let wx = (-beta * dx_g.get(x, y, 0).abs()).exp();
            let wy = (-beta * dy_g.get(x, y, 0).abs()).exp();
            let gx = dx_d.get(x, y, 0);
            let gy = dy_d.get(x, y, 0);
            loss += gx.abs() * wx + gy.abs() * wy;
            let sgn = |v: f64| if v == 0.0 { 0.0 } else { v.signum() };
            up_x.set(x, y, 0, sgn(gx) * wx / n);
            up_y.set(x, y, 0, sgn(gy) * wy / n);
        }
    }
    let ax = sobel_adjoint(&up_x, false);
    let ay = sobel_adjoint(&up_y, true);
    let mut grad = ax;
    for (g, a) in grad.data_mut().iter_mut().zip(ay.data()) {
        *g += a;
    }
    Ok((loss / n, grad))
}

/// Weighted sum of the four loss components. Any non-finite component is a
/// numerical error naming the offending term.
pub fn total_loss(components: &LossComponents, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    for (name, v) in [
        ("blur", components.blur),
        ("event", components.event),
        ("intensity", components.intensity),
        ("depth", components.depth),
    ] {
        if !v.is_finite() {
            return Err(Error::non_finite(format!("{name} loss component ({v})")));
        }
    }
    Ok(weights.w_blur * components.blur
        + weights.w_event * components.event
        + weights.w_int * components.intensity
        + weights.w_depth * components.depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, c, |_, _, _| rng.gen())
    }

    #[test]
    fn gaussian_kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel();
        assert_relative_eq!(k.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        for i in 0..SSIM_WINDOW / 2 {
            assert_eq!(k[i], k[SSIM_WINDOW - 1 - i]);
        }
        assert!(k[5] > k[4] && k[4] > k[3]);
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let img = random_image(16, 16, 3, 1);
        assert_eq!(ssim(&img, &img).unwrap(), 1.0);
        assert_eq!(dssim(&img, &img).unwrap(), 0.0);
    }

    #[test]
    fn dssim_of_constant_black_and_white_is_half() {
        let a = Image::zeros(16, 16, 1);
        let b = Image::constant(16, 16, 1, 1.0);
        // All moments vanish, so S = C1 / (1 + C1) per window.
        let expected_ssim = SSIM_C1 / (1.0 + SSIM_C1);
        let s = ssim(&a, &b).unwrap();
        assert_relative_eq!(s, expected_ssim, max_relative = 1e-10);
        let d = dssim(&a, &b).unwrap();
        assert!((d - 0.5).abs() < 1e-3);
    }

    #[test]
    fn dssim_is_exactly_symmetric() {
        let a = random_image(20, 14, 3, 2);
        let b = random_image(20, 14, 3, 3);
        assert_eq!(dssim(&a, &b).unwrap(), dssim(&b, &a).unwrap());
    }

    #[test]
    fn ssim_matches_brute_force_windows() {
        let a = random_image(16, 16, 1, 4);
        let b = random_image(16, 16, 1, 5);
        // Independent direct evaluation: explicit per-window double loop.
        let k = gaussian_kernel();
        let mut acc = 0.0;
        let mut count = 0;
        for cy in 0..=16 - SSIM_WINDOW {
            for cx in 0..=16 - SSIM_WINDOW {
                let (mut mx, mut my) = (0.0, 0.0);
                for v in 0..SSIM_WINDOW {
                    for u in 0..SSIM_WINDOW {
                        let g = k[u] * k[v];
                        mx += g * a.get(cx + u, cy + v, 0);
                        my += g * b.get(cx + u, cy + v, 0);
                    }
                }
                let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
                for v in 0..SSIM_WINDOW {
                    for u in 0..SSIM_WINDOW {
                        let g = k[u] * k[v];
                        let dx = a.get(cx + u, cy + v, 0) - mx;
                        let dy = b.get(cx + u, cy + v, 0) - my;
                        sx += g * dx * dx;
                        sy += g * dy * dy;
                        sxy += g * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (sx + sy + SSIM_C2));
                count += 1;
            }
        }
        let oracle = acc / count as f64;
        assert_relative_eq!(ssim(&a, &b).unwrap(), oracle, epsilon = 1e-10);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::zeros(10, 16, 1);
        assert!(ssim(&a, &a).is_err());
        let b = Image::zeros(16, 10, 1);
        assert!(ssim(&b, &b).is_err());
        let ok = Image::zeros(11, 11, 1);
        assert_eq!(ssim(&ok, &ok).unwrap(), 1.0);
    }

    #[test]
    fn dssim_gradient_matches_finite_differences() {
        let a = random_image(14, 13, 3, 6);
        let b = random_image(14, 13, 3, 7);
        let (_, grad) = dssim_grad(&a, &b).unwrap();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..60 {
            let x = rng.gen_range(0..14);
            let y = rng.gen_range(0..13);
            let ch = rng.gen_range(0..3);
            let mut bp = b.clone();
            bp.set(x, y, ch, b.get(x, y, ch) + h);
            let mut bm = b.clone();
            bm.set(x, y, ch, b.get(x, y, ch) - h);
            let fd = (dssim(&a, &bp).unwrap() - dssim(&a, &bm).unwrap()) / (2.0 * h);
            let g = grad.get(x, y, ch);
            assert!(
                (g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()) + 1e-9,
                "pixel ({x},{y},{ch}): analytic {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn blur_loss_mixes_l1_and_dssim() {
        let a = random_image(16, 16, 3, 9);
        let b = random_image(16, 16, 3, 10);
        let l = l1(&a, &b).unwrap();
        let d = dssim(&a, &b).unwrap();
        let lambda = 0.2;
        assert_relative_eq!(
            blur_loss(&a, &b, lambda).unwrap(),
            0.8 * l + 0.2 * d,
            epsilon = 1e-12
        );
        assert_eq!(blur_loss(&a, &b, 0.0).unwrap(), l);
        assert_eq!(blur_loss(&a, &a, lambda).unwrap(), 0.0);
        assert!(blur_loss(&a, &b, 1.5).is_err());
        // 0.8 * 0.1 + 0.2 * 0.3 composition arithmetic.
        assert_relative_eq!(0.8 * 0.1 + 0.2 * 0.3, 0.14, epsilon = 1e-12);
    }

    #[test]
    fn blur_loss_gradient_matches_finite_differences() {
        let a = random_image(13, 12, 3, 11);
        let b = random_image(13, 12, 3, 12);
        let (_, grad) = blur_loss_grad(&a, &b, 0.2).unwrap();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..40 {
            let x = rng.gen_range(0..13);
            let y = rng.gen_range(0..12);
            let ch = rng.gen_range(0..3);
            let mut bp = b.clone();
            bp.set(x, y, ch, b.get(x, y, ch) + h);
            let mut bm = b.clone();
            bm.set(x, y, ch, b.get(x, y, ch) - h);
            let fd = (blur_loss(&a, &bp, 0.2).unwrap() - blur_loss(&a, &bm, 0.2).unwrap()) / (2.0 * h);
            let g = grad.get(x, y, ch);
            assert!(
                (g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()) + 1e-9,
                "pixel ({x},{y},{ch}): analytic {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn event_loss_averages_interval_l1() {
        let g0 = Image::constant(1, 1, 1, 0.0);
        let s0 = Image::constant(1, 1, 1, 0.2);
        let g1 = Image::constant(1, 1, 1, 0.1);
        let s1 = Image::constant(1, 1, 1, -0.3);
        let loss = event_loss(&[g0.clone(), g1.clone()], &[s0.clone(), s1.clone()]).unwrap();
        assert_relative_eq!(loss, (0.2 + 0.4) / 2.0, epsilon = 1e-12);
        assert_eq!(event_loss(&[g0.clone()], &[g0.clone()]).unwrap(), 0.0);
        assert!(event_loss(&[g0.clone()], &[s0, s1]).is_err());
        assert!(event_loss(&[], &[]).is_err());
        let wrong = Image::zeros(2, 2, 1);
        assert!(event_loss(&[g0], &[wrong]).is_err());
    }

    #[test]
    fn event_loss_gradient_matches_finite_differences() {
        let gt = vec![random_image(6, 5, 1, 14), random_image(6, 5, 1, 15)];
        let sim = vec![random_image(6, 5, 1, 16), random_image(6, 5, 1, 17)];
        let (_, grads) = event_loss_grad(&gt, &sim).unwrap();
        let h = 1e-6;
        for mi in 0..2 {
            for y in 0..5 {
                for x in 0..6 {
                    let mut sp = sim.clone();
                    sp[mi].set(x, y, 0, sim[mi].get(x, y, 0) + h);
                    let mut sm = sim.clone();
                    sm[mi].set(x, y, 0, sim[mi].get(x, y, 0) - h);
                    let fd = (event_loss(&gt, &sp).unwrap() - event_loss(&gt, &sm).unwrap()) / (2.0 * h);
                    assert_relative_eq!(grads[mi].get(x, y, 0), fd, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn intensity_loss_requires_grayscale() {
        let rgb = random_image(16, 16, 3, 18);
        assert!(intensity_loss(&rgb, &rgb, 0.2).is_err());
        let a = random_image(16, 16, 1, 19);
        let b = random_image(16, 16, 1, 20);
        let expected = 0.8 * l1(&a, &b).unwrap() + 0.2 * dssim(&a, &b).unwrap();
        assert_relative_eq!(intensity_loss(&a, &b, 0.2).unwrap(), expected, epsilon = 1e-12);
        assert_eq!(intensity_loss(&a, &a, 0.2).unwrap(), 0.0);
        // Pure D-SSIM at lambda2 = 1.
        assert_relative_eq!(
            intensity_loss(&a, &b, 1.0).unwrap(),
            dssim(&a, &b).unwrap(),
            epsilon = 1e-12
        );
        // 0.8 * 0.05 + 0.2 * 0.1 composition arithmetic.
        assert_relative_eq!(0.8 * 0.05 + 0.2 * 0.1, 0.06, epsilon = 1e-12);
    }

    #[test]
    fn intensity_loss_gradient_matches_finite_differences() {
        let a = random_image(12, 12, 1, 21);
        let b = random_image(12, 12, 1, 22);
        let (_, grad) = intensity_loss_grad(&a, &b, 0.2).unwrap();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let x = rng.gen_range(0..12);
            let y = rng.gen_range(0..12);
            let mut bp = b.clone();
            bp.set(x, y, 0, b.get(x, y, 0) + h);
            let mut bm = b.clone();
            bm.set(x, y, 0, b.get(x, y, 0) - h);
            let fd =
                (intensity_loss(&a, &bp, 0.2).unwrap() - intensity_loss(&a, &bm, 0.2).unwrap()) / (2.0 * h);
            let g = grad.get(x, y, 0);
            assert!(
                (g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()) + 1e-9,
                "pixel ({x},{y}): analytic {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn sobel_kernels_are_the_separable_pair() {
        // The x kernel must be smooth(y) x deriv(x) / 48; probe with unit
        // impulses away from borders.
        let mut img = Image::zeros(9, 9, 1);
        img.set(4, 4, 0, 1.0);
        let gx = sobel_x(&img).unwrap();
        let gy = sobel_y(&img).unwrap();
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let expected_x =
                    SOBEL_SMOOTH[(dy + 2) as usize] * SOBEL_DERIV[(dx + 2) as usize] / 48.0;
                let expected_y =
                    SOBEL_DERIV[(dy + 2) as usize] * SOBEL_SMOOTH[(dx + 2) as usize] / 48.0;
                // The response at pixel p to an impulse at c is the kernel tap
                // at the mirrored offset.
                let px = (4 - dx) as usize;
                let py = (4 - dy) as usize;
                assert_relative_eq!(gx.get(px, py, 0), expected_x, epsilon = 1e-12);
                assert_relative_eq!(gy.get(px, py, 0), expected_y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sobel_step_response_is_unit() {
        // Columns >= 8 are 1: a unit step. Normalization by 48 makes the
        // response exactly 1 on the two columns straddling the edge.
        let img = Image::from_fn(16, 16, 1, |x, _, _| if x >= 8 { 1.0 } else { 0.0 });
        let gx = sobel_x(&img).unwrap();
        for y in 2..14 {
            assert_relative_eq!(gx.get(7, y, 0), 1.0, epsilon = 1e-12);
            assert_relative_eq!(gx.get(8, y, 0), 1.0, epsilon = 1e-12);
            assert_relative_eq!(gx.get(6, y, 0), 1.0 / 3.0, epsilon = 1e-12);
            assert_relative_eq!(gx.get(9, y, 0), 1.0 / 3.0, epsilon = 1e-12);
            assert_relative_eq!(gx.get(4, y, 0), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sobel_matches_separable_oracle_with_replicate_padding() {
        let img = random_image(10, 8, 1, 24);
        // Oracle: replicate-pad, smooth vertically, differentiate
        // horizontally, as two explicit passes.
        let (w, h) = (10i64, 8i64);
        let at = |x: i64, y: i64| {
            img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize, 0)
        };
        let gx = sobel_x(&img).unwrap();
        for y in 0..8i64 {
            for x in 0..10i64 {
                let mut acc = 0.0;
                for (vi, dv) in (-2i64..=2).enumerate() {
                    let mut row = 0.0;
                    for (ui, du) in (-2i64..=2).enumerate() {
                        row += SOBEL_DERIV[ui] * at(x + du, y + dv);
                    }
                    acc += SOBEL_SMOOTH[vi] * row;
                }
                assert_relative_eq!(gx.get(x as usize, y as usize, 0), acc / 48.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sobel_adjoint_satisfies_inner_product_identity() {
        let img = random_image(9, 11, 1, 25);
        let weights = random_image(9, 11, 1, 26);
        for vertical in [false, true] {
            let fwd = sobel(&img, vertical).unwrap();
            let adj = sobel_adjoint(&weights, vertical);
            let lhs: f64 = fwd.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = img.data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn depth_reg_zero_for_constant_depth() {
        // 0.7 and 3.2 are not exactly representable; the loss must still be
        // exactly zero, not merely tiny.
        let gray = random_image(16, 16, 1, 27);
        for c in [0.0, 0.7, 3.2, 3.5] {
            let depth = Image::constant(16, 16, 1, c);
            assert_eq!(depth_reg_loss(&depth, &gray, 2.0).unwrap(), 0.0, "constant {c}");
        }
    }

    #[test]
    fn depth_reg_on_ramp_matches_convolution_oracle() {
        let depth = Image::from_fn(16, 16, 1, |x, _, _| x as f64 * 0.1);
        let gray = Image::constant(16, 16, 1, 0.5);
        // Constant intensity: both edge weights are exactly 1, so the loss is
        // the mean |Sobel_x| + |Sobel_y| of the ramp.
        let gx = sobel_x(&depth).unwrap();
        let gy = sobel_y(&depth).unwrap();
        let expected = gx
            .data()
            .iter()
            .zip(gy.data())
            .map(|(a, b)| a.abs() + b.abs())
            .sum::<f64>()
            / 256.0;
        assert_relative_eq!(depth_reg_loss(&depth, &gray, 2.0).unwrap(), expected, epsilon = 1e-12);
        // Interior x-gradient of the 0.1-per-pixel ramp is 0.1 * 8/3.
        assert_relative_eq!(gx.get(8, 8, 0), 0.1 * 8.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn depth_edge_on_intensity_edge_is_cheaper() {
        let depth = Image::from_fn(16, 16, 1, |x, _, _| if x >= 8 { 1.0 } else { 0.0 });
        let flat = Image::constant(16, 16, 1, 0.5);
        let edge = Image::from_fn(16, 16, 1, |x, _, _| if x >= 8 { 0.9 } else { 0.1 });
        let on_flat = depth_reg_loss(&depth, &flat, 2.0).unwrap();
        let on_edge = depth_reg_loss(&depth, &edge, 2.0).unwrap();
        assert!(on_edge < on_flat, "{on_edge} vs {on_flat}");
    }

    #[test]
    fn depth_reg_interior_is_translation_equivariant() {
        let d0 = random_image(24, 24, 1, 28);
        let g0 = random_image(24, 24, 1, 29);
        let shift = 3usize;
        let d1 = Image::from_fn(24, 24, 1, |x, y, _| {
            d0.get(x.saturating_sub(shift).min(23 - shift), y, 0)
        });
        let g1 = Image::from_fn(24, 24, 1, |x, y, _| {
            g0.get(x.saturating_sub(shift).min(23 - shift), y, 0)
        });
        let m0 = depth_reg_map(&d0, &g0, 2.0).unwrap();
        let m1 = depth_reg_map(&d1, &g1, 2.0).unwrap();
        // Compare pixels whose full 5x5 support is interior in both frames.
        for y in 2..22 {
            for x in 2..(22 - shift) {
                assert_eq!(m0.get(x, y, 0), m1.get(x + shift, y, 0), "at ({x},{y})");
            }
        }
    }

    #[test]
    fn depth_reg_gradient_matches_finite_differences() {
        let depth = random_image(12, 10, 1, 30);
        let gray = random_image(12, 10, 1, 31);
        let (_, grad) = depth_reg_loss_grad(&depth, &gray, 2.0).unwrap();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..40 {
            let x = rng.gen_range(0..12);
            let y = rng.gen_range(0..10);
            let mut dp = depth.clone();
            dp.set(x, y, 0, depth.get(x, y, 0) + h);
            let mut dm = depth.clone();
            dm.set(x, y, 0, depth.get(x, y, 0) - h);
            let fd =
                (depth_reg_loss(&dp, &gray, 2.0).unwrap() - depth_reg_loss(&dm, &gray, 2.0).unwrap())
                    / (2.0 * h);
            let g = grad.get(x, y, 0);
            assert!(
                (g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()) + 1e-9,
                "pixel ({x},{y}): analytic {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn total_loss_applies_default_weights() {
        let components = LossComponents {
            blur: 0.14,
            event: 0.3,
            intensity: 0.06,
            depth: 0.5,
        };
        let total = total_loss(&components, &LossWeights::default()).unwrap();
        assert_relative_eq!(total, 0.14656, epsilon = 1e-12);
        assert_eq!(
            total_loss(&LossComponents::default(), &LossWeights::default()).unwrap(),
            0.0
        );
        let only_blur = LossWeights {
            w_event: 0.0,
            w_int: 0.0,
            w_depth: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(total_loss(&components, &only_blur).unwrap(), 0.14);
    }

    #[test]
    fn total_loss_rejects_non_finite_components_by_name() {
        let mut components = LossComponents::default();
        components.event = f64::NAN;
        let err = total_loss(&components, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("event"), "{err}");
        components.event = 0.0;
        components.depth = f64::INFINITY;
        let err = total_loss(&components, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("depth"), "{err}");
    }

    #[test]
    fn loss_weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { lambda1: -0.1, ..Default::default() }.validate().is_err());
        assert!(LossWeights { w_event: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { beta: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn losses_are_positive_on_differing_inputs() {
        let a = random_image(16, 16, 1, 33);
        let b = random_image(16, 16, 1, 34);
        assert!(blur_loss(&a, &b, 0.2).unwrap() > 0.0);
        assert!(intensity_loss(&a, &b, 0.2).unwrap() > 0.0);
        assert!(event_loss(&[a.clone()], &[b.clone()]).unwrap() > 0.0);
    }
}
