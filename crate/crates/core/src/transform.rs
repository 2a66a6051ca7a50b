//! Discrete parallel-beam Radon transform, its exact adjoint (unfiltered
//! back-projection), and filtered back-projection.
//!
//! Projection is pixel-driven: each pixel centre lands at offset
//! `t = x cos θ + y sin θ` and its value is split linearly between the two
//! nearest offset bins. Back-projection gathers with the same weights, which
//! makes it the exact transpose of the projection.
//!
//! Sinogram values are stored `R x T`: rows are signed offset bins
//! `r = b - (R - 1) / 2`, columns are angles `θ_k = k * 180 / T` degrees.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_ANGLE_COUNT: usize = 180;

/// Uniform grid of `T` projection angles covering `[0°, 180°)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngleGrid {
    count: usize,
}

impl AngleGrid {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("angle grid needs at least one angle"));
        }
        Ok(Self { count })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn spacing_deg(&self) -> f64 {
        180.0 / self.count as f64
    }

    pub fn angle_deg(&self, k: usize) -> f64 {
        k as f64 * self.spacing_deg()
    }

    pub fn angles_deg(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.angle_deg(k)).collect()
    }

    /// Index of the grid angle nearest to `theta_deg` (taken modulo 180°).
    pub fn nearest_index(&self, theta_deg: f64) -> usize {
        let k = (theta_deg.rem_euclid(180.0) / self.spacing_deg()).round() as usize;
        k % self.count
    }
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self { count: DEFAULT_ANGLE_COUNT }
    }
}

/// Number of offset bins used for an `M x M` image: `2 * ceil(M * √2 / 2) + 1`.
pub fn offset_count(image_size: usize) -> usize {
    2 * ((image_size as f64 * std::f64::consts::SQRT_2 / 2.0).ceil() as usize) + 1
}

fn min_offset_count(image_size: usize) -> usize {
    (image_size as f64 * std::f64::consts::SQRT_2).ceil() as usize + 1
}

/// A Radon-domain grid `X(r, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    image_size: usize,
    grid: AngleGrid,
    values: Array2<f64>,
}

impl Sinogram {
    pub fn new(image_size: usize, grid: AngleGrid, values: Array2<f64>) -> Result<Self> {
        let (r, t) = values.dim();
        if t != grid.count() {
            return Err(Error::DimensionMismatch(format!("{t} angle columns for a grid of {}", grid.count())));
        }
        if r % 2 == 0 || r < min_offset_count(image_size) {
            return Err(Error::DimensionMismatch(format!(
                "{r} offset bins cannot cover a {image_size}x{image_size} image"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sinogram value"));
        }
        Ok(Self { image_size, grid, values })
    }

    pub fn zeros(image_size: usize, grid: AngleGrid) -> Self {
        Self { image_size, grid, values: Array2::zeros((offset_count(image_size), grid.count())) }
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn grid(&self) -> AngleGrid {
        self.grid
    }

    pub fn offsets(&self) -> usize {
        self.values.nrows()
    }

    /// Signed offset in pixels of bin `b`.
    pub fn offset(&self, b: usize) -> f64 {
        b as f64 - (self.offsets() - 1) as f64 / 2.0
    }

    /// Bin index holding offset `r` (rounded), if inside the grid.
    pub fn bin_of(&self, r: f64) -> Option<usize> {
        let b = (r + (self.offsets() - 1) as f64 / 2.0).round();
        (b >= 0.0 && (b as usize) < self.offsets()).then_some(b as usize)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub(crate) fn with_values(&self, values: Array2<f64>) -> Self {
        debug_assert_eq!(values.dim(), self.values.dim());
        Self { image_size: self.image_size, grid: self.grid, values }
    }

    /// Writes the `.sino` format: magic `SINO`, little-endian `u32` M, R, T,
    /// `f64` angle spacing in degrees, then `R * T` row-major `f64` values.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(b"SINO")?;
        out.write_all(&(self.image_size as u32).to_le_bytes())?;
        out.write_all(&(self.offsets() as u32).to_le_bytes())?;
        out.write_all(&(self.grid.count() as u32).to_le_bytes())?;
        out.write_all(&self.grid.spacing_deg().to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in self.values.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"SINO" {
            return Err(Error::invalid("not a .sino file"));
        }
        let mut u = [0u8; 4];
        let mut read_u32 = |input: &mut dyn Read| -> Result<usize> {
            input.read_exact(&mut u)?;
            Ok(u32::from_le_bytes(u) as usize)
        };
        let m = read_u32(&mut input)?;
        let r = read_u32(&mut input)?;
        let t = read_u32(&mut input)?;
        let mut f = [0u8; 8];
        input.read_exact(&mut f)?;
        let spacing = f64::from_le_bytes(f);
        let grid = AngleGrid::new(t)?;
        if (spacing - grid.spacing_deg()).abs() > 1e-9 {
            return Err(Error::invalid(format!("angle spacing {spacing} inconsistent with {t} angles")));
        }
        let mut data = vec![0u8; r * t * 8];
        input.read_exact(&mut data)?;
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let values = Array2::from_shape_vec((r, t), values).map_err(|e| Error::invalid(e.to_string()))?;
        Sinogram::new(m, grid, values)
    }
}

/// Frequency-domain ramp (Ram-Lak) filter with an optional cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbpFilter {
    /// Fraction of the Nyquist band kept, in `(0, 1]`.
    pub cutoff: f64,
}

impl FbpFilter {
    pub fn ram_lak() -> Self {
        Self { cutoff: 1.0 }
    }

    pub fn with_cutoff(cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff <= 1.0) {
            return Err(Error::invalid(format!("filter cutoff {cutoff} outside (0, 1]")));
        }
        Ok(Self { cutoff })
    }

    /// Filter gain at DFT index `k` of an `n`-point transform.
    pub fn response(&self, k: usize, n: usize) -> f64 {
        let f = k.min(n - k) as f64 / n as f64;
        if f <= 0.5 * self.cutoff + 1e-12 {
            f
        } else {
            0.0
        }
    }
}

impl Default for FbpFilter {
    fn default() -> Self {
        Self::ram_lak()
    }
}

/// Precomputed geometry and FFT plans for one `(M, R, T)` configuration.
pub struct Projector {
    size: usize,
    offsets: usize,
    grid: AngleGrid,
    cos: Vec<f64>,
    sin: Vec<f64>,
    pad: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    line_length: OnceLock<Vec<f64>>,
}

impl std::fmt::Debug for Projector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Projector")
            .field("size", &self.size)
            .field("offsets", &self.offsets)
            .field("angles", &self.grid.count())
            .finish()
    }
}

impl Projector {
    pub fn new(size: usize, grid: AngleGrid) -> Self {
        Self::with_offsets(size, offset_count(size), grid).expect("default offset count is valid")
    }

    pub fn with_offsets(size: usize, offsets: usize, grid: AngleGrid) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if offsets % 2 == 0 || offsets < min_offset_count(size) {
            return Err(Error::invalid(format!("{offsets} offset bins cannot cover size {size}")));
        }
        let (sin, cos) = (0..grid.count())
            .map(|k| grid.angle_deg(k).to_radians().sin_cos())
            .unzip();
        let pad = (2 * offsets).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(pad);
        let ifft = planner.plan_fft_inverse(pad);
        Ok(Self { size, offsets, grid, cos, sin, pad, fft, ifft, line_length: OnceLock::new() })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn offsets(&self) -> usize {
        self.offsets
    }

    pub fn grid(&self) -> AngleGrid {
        self.grid
    }

    /// Length of the flat image buffer.
    pub fn image_len(&self) -> usize {
        self.size * self.size
    }

    /// Length of the flat sinogram buffer.
    pub fn sino_len(&self) -> usize {
        self.offsets * self.grid.count()
    }

    /// Back-projection scale `π / T` that turns the filtered smear into an inverse.
    pub fn angle_measure(&self) -> f64 {
        PI / self.grid.count() as f64
    }

    /// Fractional bin position of pixel column 0 in `row` for angle `k`, and the per-column step.
    #[inline]
    fn row_origin(&self, k: usize, row: usize) -> (f64, f64) {
        let c = (self.size as f64 - 1.0) / 2.0;
        let half = (self.offsets - 1) as f64 / 2.0;
        let y = c - row as f64;
        (-c * self.cos[k] + y * self.sin[k] + half, self.cos[k])
    }

    /// Projects a flat row-major image into a flat `R x T` sinogram (overwrites `out`).
    pub fn project_into(&self, image: &[f64], out: &mut [f64]) {
        assert_eq!(image.len(), self.image_len());
        assert_eq!(out.len(), self.sino_len());
        let t = self.grid.count();
        let mut column = vec![0.0; self.offsets];
        for k in 0..t {
            column.iter_mut().for_each(|v| *v = 0.0);
            for row in 0..self.size {
                let (base, step) = self.row_origin(k, row);
                let pixels = &image[row * self.size..(row + 1) * self.size];
                for (col, &v) in pixels.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    let p = base + col as f64 * step;
                    let b = p as usize;
                    let frac = p - b as f64;
                    column[b] += v * (1.0 - frac);
                    column[b + 1] += v * frac;
                }
            }
            for (b, &v) in column.iter().enumerate() {
                out[b * t + k] = v;
            }
        }
    }

    /// Exact transpose of [`Projector::project_into`] (overwrites `out`).
    pub fn backproject_into(&self, sino: &[f64], out: &mut [f64]) {
        assert_eq!(sino.len(), self.sino_len());
        assert_eq!(out.len(), self.image_len());
        let t = self.grid.count();
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut column = vec![0.0; self.offsets];
        for k in 0..t {
            let mut any = false;
            for (b, c) in column.iter_mut().enumerate() {
                *c = sino[b * t + k];
                any |= *c != 0.0;
            }
            if !any {
                continue;
            }
            for row in 0..self.size {
                let (base, step) = self.row_origin(k, row);
                let pixels = &mut out[row * self.size..(row + 1) * self.size];
                for (col, px) in pixels.iter_mut().enumerate() {
                    let p = base + col as f64 * step;
                    let b = p as usize;
                    let frac = p - b as f64;
                    *px += column[b] * (1.0 - frac) + column[b + 1] * frac;
                }
            }
        }
    }

    /// Applies the ramp filter to every angle column in place.
    pub fn filter_in_place(&self, sino: &mut [f64], filter: &FbpFilter) {
        assert_eq!(sino.len(), self.sino_len());
        let t = self.grid.count();
        let n = self.pad;
        let gains: Vec<f64> = (0..n).map(|k| filter.response(k, n) / n as f64).collect();
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for k in 0..t {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let mut any = false;
            for b in 0..self.offsets {
                let v = sino[b * t + k];
                any |= v != 0.0;
                buf[b].re = v;
            }
            if !any {
                continue;
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (c, g) in buf.iter_mut().zip(&gains) {
                *c *= *g;
            }
            self.ifft.process_with_scratch(&mut buf, &mut scratch);
            for b in 0..self.offsets {
                sino[b * t + k] = buf[b].re;
            }
        }
    }

    /// Filtered back-projection of a flat sinogram into a flat image.
    pub fn fbp_into(&self, sino: &[f64], filter: &FbpFilter, out: &mut [f64]) {
        let mut filtered = sino.to_vec();
        self.filter_in_place(&mut filtered, filter);
        self.backproject_into(&filtered, out);
        let scale = self.angle_measure();
        out.iter_mut().for_each(|v| *v *= scale);
    }

    /// Exact adjoint of [`Projector::fbp_into`]: project, filter, scale by `π / T`.
    pub fn fbp_adjoint_into(&self, image: &[f64], filter: &FbpFilter, out: &mut [f64]) {
        self.project_into(image, out);
        self.filter_in_place(out, filter);
        let scale = self.angle_measure();
        out.iter_mut().for_each(|v| *v *= scale);
    }

    /// Projection of the all-ones image: the interpolated length of every line.
    fn line_length(&self) -> &[f64] {
        self.line_length.get_or_init(|| {
            let ones = vec![1.0; self.image_len()];
            let mut out = vec![0.0; self.sino_len()];
            self.project_into(&ones, &mut out);
            out
        })
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.size() != self.size {
            return Err(Error::DimensionMismatch(format!(
                "image size {} vs projector size {}",
                image.size(),
                self.size
            )));
        }
        Ok(())
    }

    fn check_sinogram(&self, sino: &Sinogram) -> Result<()> {
        if sino.image_size() != self.size || sino.offsets() != self.offsets || sino.grid() != self.grid {
            return Err(Error::DimensionMismatch(format!(
                "sinogram ({}, {}x{}) vs projector ({}, {}x{})",
                sino.image_size(),
                sino.offsets(),
                sino.grid().count(),
                self.size,
                self.offsets,
                self.grid.count()
            )));
        }
        Ok(())
    }

    /// Radon transform. Masked-out pixels contribute nothing; lines that cross the
    /// mask are rescaled by `full length / unmasked length`, capped at 2.
    pub fn radon(&self, image: &Image) -> Result<Sinogram> {
        self.check_image(image)?;
        if image.mask().is_some() && image.active_count() == 0 {
            return Err(Error::invalid("mask excludes every pixel"));
        }
        let pixels = image.masked_pixels();
        let flat = pixels.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.sino_len()];
        self.project_into(flat, &mut out);
        if let Some(mask) = image.mask() {
            let indicator: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let mut unmasked = vec![0.0; self.sino_len()];
            self.project_into(&indicator, &mut unmasked);
            for ((v, &full), &part) in out.iter_mut().zip(self.line_length()).zip(&unmasked) {
                if part > 1e-12 && part < full - 1e-12 {
                    *v *= (full / part).min(2.0);
                }
            }
        }
        let values = Array2::from_shape_vec((self.offsets, self.grid.count()), out).expect("shape");
        Ok(Sinogram { image_size: self.size, grid: self.grid, values })
    }

    /// Unfiltered back-projection; the exact adjoint of the unmasked [`Projector::radon`].
    pub fn back_project(&self, sino: &Sinogram) -> Result<Image> {
        self.check_sinogram(sino)?;
        let mut out = vec![0.0; self.image_len()];
        self.backproject_into(sino.values().as_standard_layout().as_slice().expect("contiguous"), &mut out);
        Image::new(Array2::from_shape_vec((self.size, self.size), out).expect("shape"))
    }

    /// Filtered back-projection: ramp filter per angle, back-project, scale by `π / T`.
    pub fn inverse_radon(&self, sino: &Sinogram, filter: &FbpFilter) -> Result<Image> {
        self.check_sinogram(sino)?;
        let mut out = vec![0.0; self.image_len()];
        self.fbp_into(sino.values().as_standard_layout().as_slice().expect("contiguous"), filter, &mut out);
        Image::new(Array2::from_shape_vec((self.size, self.size), out).expect("shape"))
    }
}

/// Radon transform of `image` over `grid`.
pub fn radon(image: &Image, grid: AngleGrid) -> Result<Sinogram> {
    Projector::new(image.size(), grid).radon(image)
}

/// Unfiltered back-projection of `sino` onto its image grid.
pub fn back_project(sino: &Sinogram) -> Result<Image> {
    Projector::with_offsets(sino.image_size(), sino.offsets(), sino.grid())?.back_project(sino)
}

/// Filtered back-projection (inverse Radon transform) of `sino`.
pub fn inverse_radon(sino: &Sinogram, filter: &FbpFilter) -> Result<Image> {
    Projector::with_offsets(sino.image_size(), sino.offsets(), sino.grid())?.inverse_radon(sino, filter)
}
