//! Binary PGM (P5) grayscale images and tiled mosaics.
//!
//! Pixel values are held as `f64` in `[0, 1]`; encoding quantizes to 8 bits with
//! `round(v * 255)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Separator width between mosaic tiles, in pixels.
pub const MOSAIC_SEPARATOR: usize = 2;

/// Value painted into mosaic separators and empty cells.
pub const MOSAIC_BACKGROUND: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    /// Row-major, each in `[0, 1]`.
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!("{width}x{height} image needs {} values, got {}", width * height, values.len())));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!("pixel {i} = {} outside [0, 1]", values[i])));
        }
        Ok(Self { width, height, values })
    }

    /// Clamps each value into `[0, 1]`; non-finite values become 0.
    pub fn from_clamped(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let clamped = values.iter().map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 }).collect();
        Self::new(width, height, clamped)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_pgm())?;
        Ok(())
    }

    /// Parses a binary PGM. `maxval` up to 255 uses one byte per pixel, up to
    /// 65535 two big-endian bytes; values are divided by `maxval`.
    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(Error::Format { offset: 0, detail: "missing P5 magic".into() });
        }
        pos += 2;
        let mut header = [0usize; 3];
        for (slot, what) in header.iter_mut().zip(["width", "height", "maxval"]) {
            *slot = header_number(bytes, &mut pos, what)?;
        }
        let [width, height, maxval] = header;
        if !(1..=65535).contains(&maxval) {
            return Err(Error::Format { offset: pos as u64, detail: format!("maxval {maxval} outside 1..=65535") });
        }
        // Exactly one whitespace byte separates the header from the raster.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Format { offset: pos as u64, detail: "expected whitespace after maxval".into() });
        }
        pos += 1;
        let depth = if maxval < 256 { 1 } else { 2 };
        let need = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(depth))
            .ok_or_else(|| Error::Format { offset: pos as u64, detail: "image dimensions overflow".into() })?;
        if bytes.len() - pos < need {
            return Err(Error::Format { offset: bytes.len() as u64, detail: format!("raster truncated: need {need} bytes") });
        }
        let raster = &bytes[pos..pos + need];
        let scale = maxval as f64;
        let values = if depth == 1 {
            raster.iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
        } else {
            raster.chunks_exact(2).map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / scale).min(1.0)).collect()
        };
        Self::new(width, height, values)
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        Self::decode_pgm(&fs::read(path)?)
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format { offset: start as u64, detail: format!("expected {what}") });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("ascii digits")
        .parse()
        .map_err(|_| Error::Format { offset: start as u64, detail: format!("{what} out of range") })
}

/// Lays `tiles` (each `tile_h x tile_w`, row-major) out row by row on a
/// `rows x cols` grid with [`MOSAIC_SEPARATOR`]-pixel gutters and border.
///
/// Values are clamped into `[0, 1]`; unused cells stay at [`MOSAIC_BACKGROUND`].
pub fn mosaic(tiles: &[&[f64]], tile_h: usize, tile_w: usize, rows: usize, cols: usize) -> Result<GrayImage> {
    if tiles.len() > rows * cols {
        return Err(Error::Argument(format!("{} tiles do not fit a {rows}x{cols} grid", tiles.len())));
    }
    if let Some(t) = tiles.iter().find(|t| t.len() != tile_h * tile_w) {
        return Err(Error::Dimension(format!("tile of {} values, expected {tile_h}x{tile_w}", t.len())));
    }
    let s = MOSAIC_SEPARATOR;
    let width = cols * (tile_w + s) + s;
    let height = rows * (tile_h + s) + s;
    let mut values = vec![MOSAIC_BACKGROUND; width * height];
    for (i, tile) in tiles.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let top = s + r * (tile_h + s);
        let left = s + c * (tile_w + s);
        for y in 0..tile_h {
            for x in 0..tile_w {
                let v = tile[y * tile_w + x];
                values[(top + y) * width + left + x] = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            }
        }
    }
    GrayImage::new(width, height, values)
}
