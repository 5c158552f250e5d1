//! Binary netpbm readers and writers: P6 (RGB) and P5 (grayscale), maxval
//! 255. Values map linearly between [0, 1] and [0, 255] with rounding.

use super::io_error;
use crate::error::{Error, Result};
use crate::image::Image;
use std::fs;
use std::path::Path;

/// Writes `img` (3 channels) as a binary P6 file.
pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::argument(format!(
            "P6 output needs 3 channels, image has {}",
            img.channels()
        )));
    }
    write_netpbm(path, img, b"P6")
}

/// Writes `img` (1 channel) as a binary P5 file.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::argument(format!(
            "P5 output needs 1 channel, image has {}",
            img.channels()
        )));
    }
    write_netpbm(path, img, b"P5")
}

fn write_netpbm(path: &Path, img: &Image, magic: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(32 + img.data().len());
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(format!("\n{} {}\n255\n", img.width(), img.height()).as_bytes());
    for &v in img.data() {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// Reads a binary P6 file into a 3-channel image with values in [0, 1].
pub fn read_ppm(path: &Path) -> Result<Image> {
    read_netpbm(path, b"P6", 3)
}

/// Reads a binary P5 file into a 1-channel image with values in [0, 1].
pub fn read_pgm(path: &Path) -> Result<Image> {
    read_netpbm(path, b"P5", 1)
}

fn read_netpbm(path: &Path, magic: &[u8], channels: usize) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let name = path.display();
    if bytes.len() < 2 || &bytes[0..2] != magic {
        return Err(Error::format(format!(
            "{name}: bad magic at byte offset 0, expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = parse_header_int(&bytes, &mut pos, &name.to_string())?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::format(format!(
            "{name}: unsupported maxval {maxval}, only 255 is handled"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(format!(
            "{name}: missing whitespace after header at byte offset {pos}"
        )));
    }
    pos += 1;
    let expected = width * height * channels;
    if bytes.len() - pos < expected {
        return Err(Error::format(format!(
            "{name}: raster truncated at byte offset {}, need {expected} bytes",
            bytes.len()
        )));
    }
    let data = bytes[pos..pos + expected]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Image::from_vec(width, height, channels, data)
}

/// Parses one decimal header field, skipping whitespace and `#` comments.
fn parse_header_int(bytes: &[u8], pos: &mut usize, name: &str) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::format(format!(
            "{name}: expected header integer at byte offset {start}"
        )));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(format!("{name}: bad header integer at byte offset {start}")))
}
