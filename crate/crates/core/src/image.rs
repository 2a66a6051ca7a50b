//! Square intensity images with an optional participation mask, plus
//! binary PGM (P5) ingestion and emission.
//!
//! Pixel `(row, col)` maps to centred Cartesian coordinates
//! `x = col - c`, `y = c - row` with `c = (M - 1) / 2`, so `y` points up.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{s, Array2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array2<f64>,
    mask: Option<Array2<bool>>,
}

impl Image {
    /// Wraps a square grid of finite values.
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h != w || h == 0 {
            return Err(Error::invalid(format!("image must be square and non-empty, got {h}x{w}")));
        }
        if let Some(bad) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite pixel at flat index {bad}")));
        }
        Ok(Self { pixels, mask: None })
    }

    /// Accepts any rectangular grid and centre-crops it to the largest inscribed square.
    pub fn from_rectangular(pixels: Array2<f64>) -> Result<Self> {
        let (h, w) = pixels.dim();
        let m = h.min(w);
        let r0 = (h - m) / 2;
        let c0 = (w - m) / 2;
        Self::new(pixels.slice(s![r0..r0 + m, c0..c0 + m]).to_owned())
    }

    pub fn zeros(size: usize) -> Self {
        Self { pixels: Array2::zeros((size, size)), mask: None }
    }

    pub fn from_fn(size: usize, f: impl FnMut((usize, usize)) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((size, size), f))
    }

    pub fn with_mask(mut self, mask: Array2<bool>) -> Result<Self> {
        if mask.dim() != self.pixels.dim() {
            return Err(Error::DimensionMismatch(format!(
                "mask {:?} vs image {:?}",
                mask.dim(),
                self.pixels.dim()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    pub fn size(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn mask(&self) -> Option<&Array2<bool>> {
        self.mask.as_ref()
    }

    /// Whether pixel `(row, col)` participates in statistics and projection.
    pub fn is_active(&self, row: usize, col: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[(row, col)])
    }

    pub fn active_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&b| b).count(),
            None => self.pixels.len(),
        }
    }

    /// Pixel values with masked-out entries replaced by zero.
    pub fn masked_pixels(&self) -> Array2<f64> {
        match &self.mask {
            Some(m) => {
                let mut out = self.pixels.clone();
                out.zip_mut_with(m, |v, &keep| {
                    if !keep {
                        *v = 0.0
                    }
                });
                out
            }
            None => self.pixels.clone(),
        }
    }

    /// Mean over active pixels; `None` when nothing is active.
    pub fn active_mean(&self) -> Option<f64> {
        let n = self.active_count();
        if n == 0 {
            return None;
        }
        let sum: f64 = self
            .pixels
            .indexed_iter()
            .filter(|((r, c), _)| self.is_active(*r, *c))
            .map(|(_, v)| *v)
            .sum();
        Some(sum / n as f64)
    }

    /// Population standard deviation over active pixels.
    pub fn active_std(&self) -> Option<f64> {
        let mean = self.active_mean()?;
        let n = self.active_count() as f64;
        let ss: f64 = self
            .pixels
            .indexed_iter()
            .filter(|((r, c), _)| self.is_active(*r, *c))
            .map(|(_, v)| (v - mean) * (v - mean))
            .sum();
        Some((ss / n).sqrt())
    }

    /// Zero-mean, unit-variance copy over active pixels; inactive pixels become 0.
    /// A constant image maps to all zeros.
    pub fn standardized(&self) -> Result<Image> {
        let mean = self
            .active_mean()
            .ok_or_else(|| Error::invalid("mask excludes every pixel"))?;
        let std = self.active_std().unwrap_or(0.0);
        let scale = if std > 0.0 { 1.0 / std } else { 0.0 };
        let mut pixels = self.pixels.mapv(|v| (v - mean) * scale);
        if let Some(m) = &self.mask {
            pixels.zip_mut_with(m, |v, &keep| {
                if !keep {
                    *v = 0.0
                }
            });
        }
        Ok(Image { pixels, mask: self.mask.clone() })
    }

    pub fn scaled(&self, factor: f64) -> Result<Image> {
        let mut out = Image::new(self.pixels.mapv(|v| v * factor))?;
        out.mask = self.mask.clone();
        Ok(out)
    }

    /// Centre of the pixel grid in (row, col) coordinates.
    pub fn center(&self) -> (f64, f64) {
        let c = (self.size() as f64 - 1.0) / 2.0;
        (c, c)
    }

    /// Bilinear sample at fractional `(row, col)`; `None` outside the grid.
    pub fn bilinear(&self, row: f64, col: f64) -> Option<f64> {
        let m = self.size();
        let max = (m - 1) as f64;
        if !(0.0..=max).contains(&row) || !(0.0..=max).contains(&col) {
            return None;
        }
        let r0 = (row.floor() as usize).min(m.saturating_sub(2));
        let c0 = (col.floor() as usize).min(m.saturating_sub(2));
        if m == 1 {
            return Some(self.pixels[(0, 0)]);
        }
        let fr = row - r0 as f64;
        let fc = col - c0 as f64;
        let p = &self.pixels;
        Some(
            p[(r0, c0)] * (1.0 - fr) * (1.0 - fc)
                + p[(r0, c0 + 1)] * (1.0 - fr) * fc
                + p[(r0 + 1, c0)] * fr * (1.0 - fc)
                + p[(r0 + 1, c0 + 1)] * fr * fc,
        )
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
        let file = std::fs::File::open(path)?;
        let grid = read_pgm(BufReader::new(file))?;
        Image::from_rectangular(grid)
    }

    /// Writes the image as a 16-bit P5 PGM, rounding and clamping to `[0, 65535]`.
    pub fn write_pgm16(&self, mut out: impl Write) -> Result<()> {
        let m = self.size();
        write!(out, "P5\n{m} {m}\n65535\n")?;
        let mut buf = Vec::with_capacity(m * m * 2);
        for v in self.pixels.iter() {
            let q = v.round().clamp(0.0, 65535.0) as u16;
            buf.extend_from_slice(&q.to_be_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }
}

/// Writes an 8-bit P5 PGM from a grid of gray levels.
pub fn write_pgm8(grid: &Array2<u8>, mut out: impl Write) -> Result<()> {
    let (h, w) = grid.dim();
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = grid.iter().copied().collect();
    out.write_all(&bytes)?;
    Ok(())
}

fn pgm_token(reader: &mut impl BufRead) -> Result<String> {
    let mut token = String::new();
    loop {
        let buf = reader.fill_buf()?;
        if buf.is_empty() {
            break;
        }
        let byte = buf[0];
        if byte == b'#' && token.is_empty() {
            let mut comment = Vec::new();
            reader.read_until(b'\n', &mut comment)?;
            continue;
        }
        reader.consume(1);
        if byte.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte as char);
    }
    if token.is_empty() {
        return Err(Error::invalid("truncated PGM header"));
    }
    Ok(token)
}

/// Parses a binary P5 PGM (8- or 16-bit) into a `(height, width)` grid.
pub fn read_pgm(mut reader: impl BufRead) -> Result<Array2<f64>> {
    let magic = pgm_token(&mut reader)?;
    if magic != "P5" {
        return Err(Error::invalid(format!("not a binary PGM (magic {magic:?})")));
    }
    let parse = |t: String| t.parse::<usize>().map_err(|_| Error::invalid(format!("bad PGM header field {t:?}")));
    let width = parse(pgm_token(&mut reader)?)?;
    let height = parse(pgm_token(&mut reader)?)?;
    let maxval = parse(pgm_token(&mut reader)?)?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::invalid("PGM dimensions or maxval out of range"));
    }
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let mut data = vec![0u8; width * height * bytes_per];
    reader
        .read_exact(&mut data)
        .map_err(|_| Error::invalid("PGM pixel data truncated"))?;
    let values: Vec<f64> = if bytes_per == 1 {
        data.iter().map(|&b| b as f64).collect()
    } else {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    };
    Array2::from_shape_vec((height, width), values).map_err(|e| Error::invalid(e.to_string()))
}
