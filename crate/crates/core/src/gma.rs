//! Ground-truth gradient targets from 3×3 directional filters.
//!
//! Plain Sobel responses overestimate the per-pixel slope by the filter's
//! magnitude (the sum of its absolute entries) and are expressed per pixel
//! rather than per unit of network input coordinate. Gradient Magnitude
//! Adjustment divides the kernel by its magnitude and rescales it by
//! `W / W_T` (resp. `H / H_T`) before convolving, so the result is in signal
//! units per continuous coordinate unit.

use std::io::Read;

use crate::error::{Error, Result};
use crate::imageio::ImageBuffer;
use crate::linalg::Mat;

/// Default coordinate span per axis: the grid covers `[-1, 1]`.
pub const DEFAULT_COORD_SPAN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalFilter {
    /// `entries[row][col]`, applied as a cross-correlation.
    pub entries: [[f64; 3]; 3],
    pub axis: Axis,
}

impl DirectionalFilter {
    pub fn new(entries: [[f64; 3]; 3], axis: Axis) -> Self {
        DirectionalFilter { entries, axis }
    }

    /// Responds positively to intensity increasing left to right.
    pub fn sobel_x() -> Self {
        DirectionalFilter::new(
            [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]],
            Axis::Horizontal,
        )
    }

    /// Responds positively to intensity increasing top to bottom.
    pub fn sobel_y() -> Self {
        DirectionalFilter::new(
            [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]],
            Axis::Vertical,
        )
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut entries = self.entries;
        for v in entries.iter_mut().flatten() {
            *v *= k;
        }
        DirectionalFilter::new(entries, self.axis)
    }
}

/// Sum of absolute kernel entries.
pub fn filter_magnitude(f: &DirectionalFilter) -> f64 {
    f.entries.iter().flatten().map(|v| v.abs()).sum()
}

/// Per-channel 3×3 cross-correlation with replicate padding; output is
/// `H × W × C` in the image's pixel order.
pub fn convolve2d(image: &ImageBuffer, f: &DirectionalFilter) -> Result<Vec<f64>> {
    if image.is_empty() {
        return Err(Error::Shape("cannot filter an empty image".into()));
    }
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let px = image.pixels();
    let total: f64 = f.entries.iter().flatten().sum();
    let mut out = vec![0.0; px.len()];
    for r in 0..h {
        let rows = [r.saturating_sub(1), r, (r + 1).min(h - 1)];
        for c in 0..w {
            let cols = [c.saturating_sub(1), c, (c + 1).min(w - 1)];
            for k in 0..ch {
                // taps are taken relative to the centre so zero-sum kernels
                // give exact zeros on flat regions
                let centre = px[(r * w + c) * ch + k];
                let mut acc = 0.0;
                for (kr, &rr) in rows.iter().enumerate() {
                    for (kc, &cc) in cols.iter().enumerate() {
                        acc += f.entries[kr][kc] * (px[(rr * w + cc) * ch + k] - centre);
                    }
                }
                out[(r * w + c) * ch + k] = acc + total * centre;
            }
        }
    }
    Ok(out)
}

/// Per-channel `(∂f/∂x, ∂f/∂y)` samples on the pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    channels: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        gx: Vec<f64>,
        gy: Vec<f64>,
    ) -> Result<Self> {
        let n = width * height * channels;
        if gx.len() != n || gy.len() != n {
            return Err(Error::Shape(format!(
                "gradient arrays of length {}/{} for {width}x{height}x{channels}",
                gx.len(),
                gy.len()
            )));
        }
        if !gx.iter().chain(&gy).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gradient field".into()));
        }
        Ok(GradientField {
            width,
            height,
            channels,
            gx,
            gy,
        })
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

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> (f64, f64) {
        let k = (row * self.width + col) * self.channels + ch;
        (self.gx[k], self.gy[k])
    }

    /// `[∂/∂x, ∂/∂y]` as `(H·W) × C` matrices, aligned with the coordinate
    /// grid, for use as Jacobian targets.
    pub fn as_jacobian(&self) -> [Mat; 2] {
        let b = self.width * self.height;
        [
            Mat::from_vec(b, self.channels, self.gx.clone()).expect("length checked"),
            Mat::from_vec(b, self.channels, self.gy.clone()).expect("length checked"),
        ]
    }

    pub fn scaled(&self, k: f64) -> GradientField {
        GradientField {
            gx: self.gx.iter().map(|v| v * k).collect(),
            gy: self.gy.iter().map(|v| v * k).collect(),
            ..*self
        }
    }

    /// `λ·a + (1−λ)·b`; the endpoints return the selected field unchanged.
    pub fn blend(a: &GradientField, b: &GradientField, lambda: f64) -> Result<GradientField> {
        if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
            return Err(Error::Shape(
                "cannot blend gradient fields of different sizes".into(),
            ));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        if lambda == 1.0 {
            return Ok(a.clone());
        }
        if lambda == 0.0 {
            return Ok(b.clone());
        }
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
            x.iter()
                .zip(y)
                .map(|(p, q)| lambda * p + (1.0 - lambda) * q)
                .collect()
        };
        Ok(GradientField {
            gx: mix(&a.gx, &b.gx),
            gy: mix(&a.gy, &b.gy),
            ..*a
        })
    }

    /// Per-pixel `√(gx² + gy²)`, `H × W × C`.
    pub fn magnitude(&self) -> Vec<f64> {
        self.gx
            .iter()
            .zip(&self.gy)
            .map(|(x, y)| x.hypot(*y))
            .collect()
    }

    /// Binary layout: `H, W, C` as u32 little-endian, then all `gx` values
    /// followed by all `gy` values as f64 little-endian in `H × W × C` order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 16 * self.gx.len());
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.gx.iter().chain(&self.gy) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<GradientField> {
        let mut r = bytes;
        let mut dim = || -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| Error::Decode("gradient field: truncated header".into()))?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let (h, w, c) = (dim()?, dim()?, dim()?);
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Decode("gradient field: header overflow".into()))?;
        let payload = &bytes[12..];
        if payload.len() != 16 * n {
            return Err(Error::Decode(format!(
                "gradient field: {} payload bytes, header requires {}",
                payload.len(),
                16 * n
            )));
        }
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let (gx, gy) = vals.split_at(n);
        GradientField::new(w, h, c, gx.to_vec(), gy.to_vec())
    }
}

/// Gradient with Magnitude Adjustment.
///
/// `gx = (fx / |fx| · W / wt) ⊛ I` and `gy = (fy / |fy| · H / ht) ⊛ I`.
pub fn gma(
    image: &ImageBuffer,
    fx: &DirectionalFilter,
    fy: &DirectionalFilter,
    wt: f64,
    ht: f64,
) -> Result<GradientField> {
    let mx = filter_magnitude(fx);
    let my = filter_magnitude(fy);
    if !(mx > 0.0 && mx.is_finite()) || !(my > 0.0 && my.is_finite()) {
        return Err(Error::InvalidFilter(format!(
            "filter magnitudes must be positive (got {mx} and {my})"
        )));
    }
    if !(wt > 0.0 && wt.is_finite() && ht > 0.0 && ht.is_finite()) {
        return Err(Error::Config(format!(
            "coordinate spans must be positive (got {wt} and {ht})"
        )));
    }
    let kx = fx.scaled(1.0 / mx).scaled(image.width() as f64 / wt);
    let ky = fy.scaled(1.0 / my).scaled(image.height() as f64 / ht);
    GradientField::new(
        image.width(),
        image.height(),
        image.channels(),
        convolve2d(image, &kx)?,
        convolve2d(image, &ky)?,
    )
}

/// GMA with the Sobel pair over `[-1, 1]` coordinates.
pub fn sobel_gma(image: &ImageBuffer) -> Result<GradientField> {
    gma(
        image,
        &DirectionalFilter::sobel_x(),
        &DirectionalFilter::sobel_y(),
        DEFAULT_COORD_SPAN,
        DEFAULT_COORD_SPAN,
    )
}

/// Unadjusted Sobel responses.
pub fn raw_sobel(image: &ImageBuffer) -> Result<GradientField> {
    GradientField::new(
        image.width(),
        image.height(),
        image.channels(),
        convolve2d(image, &DirectionalFilter::sobel_x())?,
        convolve2d(image, &DirectionalFilter::sobel_y())?,
    )
}
