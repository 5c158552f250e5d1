use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Floor applied to intensities before any logarithm, and the lower clamp of
/// warped intensities.
pub const INTENSITY_EPS: f64 = 1e-6;

/// Single polarity event: log-intensity at pixel `(x, y)` crossed one
/// threshold step at time `t` in direction `p` (+1 or -1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    pub p: i8,
}

/// Contrast thresholds in log-intensity units, both strictly positive.
/// `c_pos` gates brightening events, `c_neg` darkening events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub c_pos: f64,
    pub c_neg: f64,
}

impl Thresholds {
    pub fn new(c_pos: f64, c_neg: f64) -> Result<Self> {
        if !(c_pos > 0.0) || !(c_neg > 0.0) {
            return Err(Error::argument(format!(
                "thresholds must be positive, got c_pos={c_pos}, c_neg={c_neg}"
            )));
        }
        Ok(Thresholds { c_pos, c_neg })
    }

    pub fn symmetric(c: f64) -> Result<Self> {
        Thresholds::new(c, c)
    }

    /// Threshold applied to a signed count or log difference: `c_pos` for
    /// positive values, `c_neg` for negative, `c_pos` at zero (no effect).
    #[inline]
    pub fn for_sign(&self, value: f64) -> f64 {
        if value < 0.0 {
            self.c_neg
        } else {
            self.c_pos
        }
    }
}

/// Time-ordered event sequence over a fixed sensor resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub width: u32,
    pub height: u32,
    pub thresholds: Thresholds,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, sorting by `(t, y, x, p)` and validating bounds.
    pub fn new(
        width: u32,
        height: u32,
        thresholds: Thresholds,
        mut events: Vec<Event>,
    ) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if !e.t.is_finite() {
                return Err(Error::non_finite(format!("event {i} timestamp is {}", e.t)));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::format(format!(
                    "event {i} polarity {} is not +1 or -1",
                    e.p
                )));
            }
            if u32::from(e.x) >= width || u32::from(e.y) >= height {
                return Err(Error::format(format!(
                    "event {i} at ({}, {}) outside {width}x{height}",
                    e.x, e.y
                )));
            }
        }
        events.sort_by(|a, b| {
            a.t.partial_cmp(&b.t)
                .unwrap()
                .then(a.y.cmp(&b.y))
                .then(a.x.cmp(&b.x))
                .then(a.p.cmp(&b.p))
        });
        Ok(EventStream {
            width,
            height,
            thresholds,
            events,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t0 <= t < t1`, located by binary search.
    pub fn slice(&self, t0: f64, t1: f64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t < t1);
        &self.events[lo..hi]
    }
}

/// Per-pixel signed event tally (or soft estimate) over a time interval.
#[derive(Debug, Clone, PartialEq)]
pub struct EventMap {
    pub width: u32,
    pub height: u32,
    pub t_start: f64,
    pub t_end: f64,
    counts: Vec<f64>,
}

impl EventMap {
    pub fn zeros(width: u32, height: u32, t_start: f64, t_end: f64) -> Self {
        EventMap {
            width,
            height,
            t_start,
            t_end,
            counts: vec![0.0; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.counts[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        self.counts[(y * self.width + x) as usize] = value;
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn counts_mut(&mut self) -> &mut [f64] {
        &mut self.counts
    }

    /// Rescales each value by its sign's threshold, converting counts to
    /// log-intensity change (or a soft map back to log units).
    pub fn to_log_units(&self, thresholds: &Thresholds) -> EventMap {
        let mut out = self.clone();
        for v in out.counts.iter_mut() {
            *v *= thresholds.for_sign(*v);
        }
        out
    }
}

/// Signed per-pixel event count over `[t0, t1)`.
pub fn integrate_events(stream: &EventStream, t0: f64, t1: f64) -> Result<EventMap> {
    if !(t0 <= t1) {
        return Err(Error::argument(format!(
            "integration interval start {t0} exceeds end {t1}"
        )));
    }
    let mut map = EventMap::zeros(stream.width, stream.height, t0, t1);
    for e in stream.slice(t0, t1) {
        let i = (u32::from(e.y) * stream.width + u32::from(e.x)) as usize;
        map.counts_mut()[i] += f64::from(e.p);
    }
    Ok(map)
}

/// Warps a grayscale image by an event map:
/// `out = clamp(max(base, eps) * exp(c * count), eps, 1)` with the
/// sign-matched threshold per pixel. A zero count leaves a pixel untouched.
pub fn warp_intensity(base: &Image, map: &EventMap, thresholds: &Thresholds) -> Result<Image> {
    if base.channels() != 1 {
        return Err(Error::argument(format!(
            "intensity warp expects a grayscale image, got {} channels",
            base.channels()
        )));
    }
    if base.width() != map.width as usize || base.height() != map.height as usize {
        return Err(Error::dimension(format!(
            "image {}x{} vs event map {}x{}",
            base.width(),
            base.height(),
            map.width,
            map.height
        )));
    }
    let mut out = base.clone();
    for (v, &n) in out.data_mut().iter_mut().zip(map.counts()) {
        let c = thresholds.for_sign(n);
        *v = (v.max(INTENSITY_EPS) * (c * n).exp()).clamp(INTENSITY_EPS, 1.0);
    }
    Ok(out)
}

/// Hard event simulation over a sequence of grayscale frames at the given
/// times. Each pixel tracks a reference log intensity; whenever the
/// log-linearly interpolated signal crosses a whole threshold step, an event
/// is emitted at the interpolated crossing time and the reference advances by
/// exactly one step.
pub fn simulate_events(
    frames: &[Image],
    times: &[f64],
    thresholds: &Thresholds,
) -> Result<EventStream> {
    if frames.len() != times.len() {
        return Err(Error::argument(format!(
            "{} frames but {} timestamps",
            frames.len(),
            times.len()
        )));
    }
    if frames.len() < 2 {
        return Err(Error::argument(
            "event simulation needs at least two frames".to_string(),
        ));
    }
    for w in times.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::argument(format!(
                "timestamps must strictly increase, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    let first = &frames[0];
    if first.channels() != 1 {
        return Err(Error::argument(
            "event simulation expects grayscale frames".to_string(),
        ));
    }
    for f in frames {
        f.check_same_dims(first, "event simulation frames")?;
    }

    let width = first.width();
    let height = first.height();
    let mut events = Vec::new();
    let log_at = |img: &Image, x: usize, y: usize| img.get(x, y, 0).max(INTENSITY_EPS).ln();

    for y in 0..height {
        for x in 0..width {
            let mut l_ref = log_at(first, x, y);
            for k in 1..frames.len() {
                let l_prev = log_at(&frames[k - 1], x, y);
                let l_cur = log_at(&frames[k], x, y);
                let dt = times[k] - times[k - 1];
                let dl = l_cur - l_prev;
                let cross_time = |level: f64| {
                    if dl.abs() < 1e-300 {
                        times[k]
                    } else {
                        times[k - 1] + dt * ((level - l_prev) / dl).clamp(0.0, 1.0)
                    }
                };
                while l_cur - l_ref >= thresholds.c_pos {
                    l_ref += thresholds.c_pos;
                    events.push(Event {
                        t: cross_time(l_ref),
                        x: x as u16,
                        y: y as u16,
                        p: 1,
                    });
                }
                while l_ref - l_cur >= thresholds.c_neg {
                    l_ref -= thresholds.c_neg;
                    events.push(Event {
                        t: cross_time(l_ref),
                        x: x as u16,
                        y: y as u16,
                        p: -1,
                    });
                }
            }
        }
    }
    EventStream::new(width as u32, height as u32, *thresholds, events)
}

/// Differentiable event-count estimate between two grayscale images:
/// `(ln(b + eps) - ln(a + eps)) / c` with the sign-matched threshold.
pub fn soft_event_map(img_a: &Image, img_b: &Image, thresholds: &Thresholds) -> Result<EventMap> {
    img_a.check_same_dims(img_b, "soft event map inputs")?;
    if img_a.channels() != 1 {
        return Err(Error::argument(
            "soft event map expects grayscale images".to_string(),
        ));
    }
    let mut map = EventMap::zeros(img_a.width() as u32, img_a.height() as u32, 0.0, 0.0);
    for (out, (&a, &b)) in map
        .counts_mut()
        .iter_mut()
        .zip(img_a.data().iter().zip(img_b.data()))
    {
        let dl = (b + INTENSITY_EPS).ln() - (a + INTENSITY_EPS).ln();
        *out = dl / thresholds.for_sign(dl);
    }
    Ok(map)
}

/// Gradients of `soft_event_map` values w.r.t. both input images, contracted
/// with an upstream gradient per pixel.
pub fn soft_event_map_grad(
    img_a: &Image,
    img_b: &Image,
    thresholds: &Thresholds,
    upstream: &EventMap,
) -> Result<(Image, Image)> {
    img_a.check_same_dims(img_b, "soft event map inputs")?;
    let mut grad_a = Image::zeros(img_a.width(), img_a.height(), 1);
    let mut grad_b = grad_a.clone();
    for i in 0..img_a.data().len() {
        let a = img_a.data()[i];
        let b = img_b.data()[i];
        let dl = (b + INTENSITY_EPS).ln() - (a + INTENSITY_EPS).ln();
        let c = thresholds.for_sign(dl);
        let u = upstream.counts()[i];
        grad_a.data_mut()[i] = -u / (c * (a + INTENSITY_EPS));
        grad_b.data_mut()[i] = u / (c * (b + INTENSITY_EPS));
    }
    Ok((grad_a, grad_b))
}
