//! Double-integral deblurring: recover the sharp latent image at the exposure
//! midpoint, and latent images across the exposure, from one blurry frame plus
//! its event slice.
//!
//! The blur model averages latent images over the exposure; each latent is the
//! midpoint image warped by integrated events. Inverting it divides the blurry
//! image by the quadrature average of the per-sample warp factors.

use crate::error::{Error, Result};
use crate::event::{EventStream, Thresholds, INTENSITY_EPS};
use crate::image::Image;

/// One motion-blurred frame: the image, its exposure midpoint `t_mid` and
/// duration `tau`, and the event stream restricted to the exposure interval.
#[derive(Debug, Clone)]
pub struct BlurFrame {
    pub image: Image,
    pub t_mid: f64,
    pub tau: f64,
    pub event_slice: EventStream,
}

impl BlurFrame {
    pub fn new(image: Image, t_mid: f64, tau: f64, event_slice: EventStream) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::argument(format!(
                "empty exposure interval: tau = {tau}"
            )));
        }
        let (t0, t1) = (t_mid - tau / 2.0, t_mid + tau / 2.0);
        let slack = 1e-9 * tau;
        for e in event_slice.events() {
            if e.t < t0 - slack || e.t > t1 + slack {
                return Err(Error::argument(format!(
                    "event at t={} outside exposure [{t0}, {t1}]",
                    e.t
                )));
            }
        }
        Ok(BlurFrame {
            image,
            t_mid,
            tau,
            event_slice,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_mid - self.tau / 2.0
    }

    pub fn t_end(&self) -> f64 {
        self.t_mid + self.tau / 2.0
    }
}

/// Signed event counts relative to the midpoint at each of `q` uniform sample
/// times across the exposure. An event's effect begins at its own timestamp:
/// for samples at or after the midpoint it counts when `t_mid <= e.t <= t_k`,
/// for samples before the midpoint it counts negatively when `t_k <= e.t <
/// t_mid`.
fn sample_counts(frame: &BlurFrame, q: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let times: Vec<f64> = (0..q)
        .map(|k| frame.t_start() + frame.tau * k as f64 / (q - 1) as f64)
        .collect();
    let n_px = frame.image.width() * frame.image.height();
    let mut maps = vec![vec![0.0f64; n_px]; q];
    let s = frame.t_mid;
    let w = frame.image.width();
    for e in frame.event_slice.events() {
        let idx = usize::from(e.y) * w + usize::from(e.x);
        let p = f64::from(e.p);
        if e.t >= s {
            for (k, &tk) in times.iter().enumerate() {
                if tk >= e.t {
                    maps[k][idx] += p;
                }
            }
        } else {
            for (k, &tk) in times.iter().enumerate() {
                if tk <= e.t {
                    maps[k][idx] -= p;
                }
            }
        }
    }
    (maps, times)
}

/// Per-sample multiplicative warp factors `exp(c * E_k)` and their mean (the
/// blur denominator of the double-integral model).
fn warp_factors(frame: &BlurFrame, th: &Thresholds, q: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (counts, times) = sample_counts(frame, q);
    let factors: Vec<Vec<f64>> = counts
        .iter()
        .map(|m| m.iter().map(|&n| (th.for_sign(n) * n).exp()).collect())
        .collect();
    let n_px = frame.image.width() * frame.image.height();
    let mut denom = vec![0.0f64; n_px];
    for f in &factors {
        for (d, &v) in denom.iter_mut().zip(f) {
            *d += v;
        }
    }
    for d in denom.iter_mut() {
        *d /= q as f64;
    }
    (factors, denom, times)
}

fn check_q(q: usize) -> Result<()> {
    if q < 3 || q % 2 == 0 {
        return Err(Error::argument(format!(
            "quadrature count must be odd and at least 3, got {q}"
        )));
    }
    Ok(())
}

/// Sharp latent image at the exposure midpoint: the blurry image divided
/// per channel by the quadrature average of the event warp factors, then
/// clamped to `[eps, 1]`.
pub fn edi_sharp(frame: &BlurFrame, th: &Thresholds, q: usize) -> Result<Image> {
    check_q(q)?;
    let (_, denom, _) = warp_factors(frame, th, q);
    let mut out = frame.image.clone();
    let channels = out.channels();
    let w = out.width();
    for y in 0..out.height() {
        for x in 0..w {
            let d = denom[y * w + x];
            for c in 0..channels {
                let v = (frame.image.get(x, y, c) / d).clamp(INTENSITY_EPS, 1.0);
                out.set(x, y, c, v);
            }
        }
    }
    Ok(out)
}

/// Latent images at `n` uniform timestamps across the exposure:
/// `I(t_k) = clamp(B * w_k / denom, eps, 1)` with the shared grayscale event
/// warp factor applied to every channel. For odd `n` the middle latent is the
/// `edi_sharp` output.
pub fn edi_latents(frame: &BlurFrame, th: &Thresholds, n: usize) -> Result<(Vec<Image>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::argument(format!(
            "latent count must be at least 2, got {n}"
        )));
    }
    let (factors, denom, times) = warp_factors(frame, th, n);
    let channels = frame.image.channels();
    let w = frame.image.width();
    let mut latents = Vec::with_capacity(n);
    for k in 0..n {
        let mut img = frame.image.clone();
        for y in 0..img.height() {
            for x in 0..w {
                let i = y * w + x;
                for c in 0..channels {
                    // (B * w) / denom keeps the middle latent (w = 1) bit
                    // identical to the sharp image B / denom.
                    let v = (frame.image.get(x, y, c) * factors[k][i] / denom[i])
                        .clamp(INTENSITY_EPS, 1.0);
                    img.set(x, y, c, v);
                }
            }
        }
        latents.push(img);
    }
    Ok((latents, times))
}
