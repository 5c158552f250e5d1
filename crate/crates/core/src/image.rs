use crate::error::{Error, Result};

/// Row-major interleaved image with `f64` samples, normally in `[0, 1]`.
///
/// One channel for grayscale, depth, or alpha planes; three for RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

/// BT.601 luma weights for RGB to grayscale conversion.
pub const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::dimension(format!(
                "image buffer holds {} samples, {}x{}x{} needs {}",
                data.len(),
                width,
                height,
                channels,
                width * height * channels
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Image::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.set(x, y, c, f(x, y, c));
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_dims(&self, other: &Image, context: &str) -> Result<()> {
        if !self.same_dims(other) {
            return Err(Error::dimension(format!(
                "{context}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        debug_assert!(self.same_dims(other));
        let n = self.data.len().max(1);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n as f64
    }

    pub fn mse(&self, other: &Image) -> f64 {
        debug_assert!(self.same_dims(other));
        let n = self.data.len().max(1);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Area-weighted resize: each target pixel averages the source region it
    /// covers, with fractional rows and columns weighted by overlap.
    pub fn resize_area(&self, new_width: usize, new_height: usize) -> Image {
        assert!(new_width > 0 && new_height > 0);
        if new_width == self.width && new_height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        let mut out = Image::zeros(new_width, new_height, self.channels);
        for ty in 0..new_height {
            let y0 = ty as f64 * sy;
            let y1 = (ty + 1) as f64 * sy;
            for tx in 0..new_width {
                let x0 = tx as f64 * sx;
                let x1 = (tx + 1) as f64 * sx;
                let mut acc = vec![0.0; self.channels];
                let mut area = 0.0;
                let mut sy_i = y0.floor() as usize;
                while (sy_i as f64) < y1 && sy_i < self.height {
                    let wy = (y1.min((sy_i + 1) as f64) - y0.max(sy_i as f64)).max(0.0);
                    let mut sx_i = x0.floor() as usize;
                    while (sx_i as f64) < x1 && sx_i < self.width {
                        let wx = (x1.min((sx_i + 1) as f64) - x0.max(sx_i as f64)).max(0.0);
                        let w = wx * wy;
                        let p = self.pixel(sx_i, sy_i);
                        for c in 0..self.channels {
                            acc[c] += w * p[c];
                        }
                        area += w;
                        sx_i += 1;
                    }
                    sy_i += 1;
                }
                for c in 0..self.channels {
                    out.set(tx, ty, c, acc[c] / area);
                }
            }
        }
        out
    }
}

/// BT.601 grayscale conversion. Single-channel inputs pass through unchanged.
pub fn rgb_to_gray(img: &Image) -> Result<Image> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => {
            let mut out = Image::zeros(img.width(), img.height(), 1);
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let p = img.pixel(x, y);
                    let g = GRAY_WEIGHTS[0] * p[0] + GRAY_WEIGHTS[1] * p[1] + GRAY_WEIGHTS[2] * p[2];
                    out.set(x, y, 0, g);
                }
            }
            Ok(out)
        }
        c => Err(Error::argument(format!(
            "grayscale conversion needs 1 or 3 channels, got {c}"
        ))),
    }
}
