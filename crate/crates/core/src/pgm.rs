//! Binary portable graymap (P5) export.

use std::fs;
use std::path::Path;

use crate::error::{dim_err, IleError, Result};

/// Maps `[0, 1]` intensities to `0..=255`, rounding to nearest.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(height: usize, width: usize, pixels: &[f64]) -> Result<Vec<u8>> {
    if pixels.len() != height * width {
        return Err(dim_err("encode_pgm", format!("{} pixels for {height}x{width}", pixels.len())));
    }
    if pixels.iter().any(|v| !v.is_finite()) {
        return Err(IleError::Numeric("encode_pgm".into()));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, height: usize, width: usize, pixels: &[f64]) -> Result<()> {
    fs::write(path, encode_pgm(height, width, pixels)?)?;
    Ok(())
}

/// Reads back a P5 file written by [`write_pgm`]: `(height, width, bytes)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let bad = || IleError::Format("not a P5 graymap with maxval 255".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    let body = bytes.get(pos..).ok_or_else(bad)?;
    if body.len() != width * height {
        return Err(bad());
    }
    Ok((height, width, body.to_vec()))
}
