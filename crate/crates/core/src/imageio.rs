//! Rasters, PNG codec glue, colour/range conversion and coordinate grids.

use std::io::Cursor;
use std::ops::Deref;
use std::path::Path;

use crate::autodiff::Coord;
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Value range a buffer's pixels live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Range {
    /// `[0, 1]`, used for I/O and metrics.
    Unit,
    /// `[-1, 1]`, the space networks are fitted in.
    Signed,
}

impl Range {
    fn bounds(self) -> (f64, f64) {
        match self {
            Range::Unit => (0.0, 1.0),
            Range::Signed => (-1.0, 1.0),
        }
    }
}

const RANGE_SLACK: f64 = 1e-9;

/// Row-major `H × W × C` raster, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    range: Range,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        range: Range,
        pixels: Vec<f64>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Unsupported(format!(
                "{channels} channels (need 1 or 3)"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        let (lo, hi) = range.bounds();
        if let Some(bad) = pixels
            .iter()
            .find(|v| !(v.is_finite() && **v >= lo - RANGE_SLACK && **v <= hi + RANGE_SLACK))
        {
            return Err(Error::Config(format!(
                "pixel value {bad} outside the declared {range:?} range"
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            range,
            pixels,
        })
    }

    /// Builds a buffer by clamping arbitrary finite values into `range`.
    /// Returns the buffer and how many values had to be clamped.
    pub fn clamped(
        width: usize,
        height: usize,
        channels: usize,
        range: Range,
        mut pixels: Vec<f64>,
    ) -> Result<(Self, usize)> {
        let (lo, hi) = range.bounds();
        let mut clamped = 0;
        for v in pixels.iter_mut() {
            if !v.is_finite() {
                return Err(Error::NonFinite("pixel value".into()));
            }
            if *v < lo || *v > hi {
                *v = v.clamp(lo, hi);
                clamped += 1;
            }
        }
        Ok((
            ImageBuffer::new(width, height, channels, range, pixels)?,
            clamped,
        ))
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        range: Range,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    pixels.push(f(r, c, ch));
                }
            }
        }
        ImageBuffer::new(width, height, channels, range, pixels)
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

    pub fn range(&self) -> Range {
        self.range
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
    }

    /// Pixels as a `(H·W) × C` matrix, one row per coordinate of
    /// [`make_grid`].
    pub fn as_matrix(&self) -> Mat {
        Mat::from_vec(self.width * self.height, self.channels, self.pixels.clone())
            .expect("pixel count checked on construction")
    }
}

pub fn load_png(path: &Path) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

/// Decodes 8- or 16-bit gray/RGB PNG data (alpha dropped) into unit range.
pub fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    use png::{BitDepth, ColorType, Transformations};

    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    // Sub-byte grayscale is widened to 8 bits; palettes are rejected below.
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Decode(e.to_string()))?;
    if reader.info().color_type == ColorType::Indexed {
        return Err(Error::Unsupported("palette PNG".into()));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let data = &buf[..frame.buffer_size()];

    let (stored, keep) = match frame.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err(Error::Unsupported("palette PNG".into())),
    };
    let samples: Vec<f64> = match frame.bit_depth {
        BitDepth::Eight => data.iter().map(|&b| b as f64 / 255.0).collect(),
        BitDepth::Sixteen => data
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        other => return Err(Error::Unsupported(format!("bit depth {other:?}"))),
    };
    let (w, h) = (frame.width as usize, frame.height as usize);
    let row_samples = w * stored;
    let mut pixels = Vec::with_capacity(w * h * keep);
    for row in 0..h {
        let line = &samples[row * row_samples..(row + 1) * row_samples];
        for px in line.chunks_exact(stored) {
            pixels.extend_from_slice(&px[..keep]);
        }
    }
    ImageBuffer::new(w, h, keep, Range::Unit, pixels)
}

/// 8-bit PNG encoding: clamp to `[0, 1]`, quantize with round-half-up.
/// Returns the encoded bytes and the number of clamped samples.
pub fn encode_png(image: &ImageBuffer) -> Result<(Vec<u8>, usize)> {
    if image.range() != Range::Unit {
        return Err(Error::Config("PNG output needs a unit-range image".into()));
    }
    if image.is_empty() {
        return Err(Error::Shape("cannot encode an empty image".into()));
    }
    let mut clamped = 0;
    let mut bytes = Vec::with_capacity(image.len());
    for &v in image.pixels() {
        if !v.is_finite() {
            return Err(Error::NonFinite("pixel value".into()));
        }
        if !(0.0..=1.0).contains(&v) {
            clamped += 1;
        }
        bytes.push(quantize_u8(v));
    }

    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(if image.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Decode(e.to_string()))?;
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::Decode(e.to_string()))?;
    }
    Ok((out, clamped))
}

/// Writes an 8-bit PNG; returns the number of samples clamped into range.
pub fn save_png(image: &ImageBuffer, path: &Path) -> Result<usize> {
    let (bytes, clamped) = encode_png(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(clamped)
}

#[inline]
fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// ITU-R BT.601 luma.
pub fn to_grayscale(image: &ImageBuffer) -> Result<ImageBuffer> {
    if image.channels() != 3 {
        return Err(Error::Config(format!(
            "grayscale conversion needs 3 channels, got {}",
            image.channels()
        )));
    }
    let pixels = image
        .pixels()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    ImageBuffer::new(image.width(), image.height(), 1, image.range(), pixels)
}

/// Area-averaging downsample. Output pixel `(r, c)` averages the input over
/// the rectangle it covers, with fractional overlap weights at its border.
pub fn resize_box(image: &ImageBuffer, new_w: usize, new_h: usize) -> Result<ImageBuffer> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::Config("target dimensions must be at least 1".into()));
    }
    if new_w > image.width() || new_h > image.height() {
        return Err(Error::Config(format!(
            "box resize only downsamples ({}x{} -> {new_w}x{new_h})",
            image.width(),
            image.height()
        )));
    }
    if (new_w, new_h) == (image.width(), image.height()) {
        return Ok(image.clone());
    }
    let cols = overlap_weights(image.width(), new_w);
    let rows = overlap_weights(image.height(), new_h);
    let ch = image.channels();
    let mut pixels = Vec::with_capacity(new_w * new_h * ch);
    for row_w in &rows {
        for col_w in &cols {
            for k in 0..ch {
                let mut acc = 0.0;
                let mut total = 0.0;
                for &(r, wr) in row_w {
                    for &(c, wc) in col_w {
                        acc += wr * wc * image.get(r, c, k);
                        total += wr * wc;
                    }
                }
                pixels.push(acc / total);
            }
        }
    }
    let (lo, hi) = image.range().bounds();
    for v in pixels.iter_mut() {
        *v = v.clamp(lo, hi);
    }
    ImageBuffer::new(new_w, new_h, ch, image.range(), pixels)
}

/// For each output cell, the input indices it overlaps with their overlap
/// lengths.
fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let start = i as f64 * scale;
            let end = (i + 1) as f64 * scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(src);
            (first..last)
                .filter_map(|j| {
                    let w = end.min((j + 1) as f64) - start.max(j as f64);
                    (w > 1e-12).then_some((j, w))
                })
                .collect()
        })
        .collect()
}

/// `[0, 1] → [-1, 1]`.
pub fn normalize_signed(image: &ImageBuffer) -> Result<ImageBuffer> {
    if image.range() != Range::Unit {
        return Err(Error::Config(
            "normalize_signed expects a unit-range image".into(),
        ));
    }
    let pixels = image.pixels().iter().map(|v| 2.0 * v - 1.0).collect();
    ImageBuffer::clamped(
        image.width(),
        image.height(),
        image.channels(),
        Range::Signed,
        pixels,
    )
    .map(|(img, _)| img)
}

/// `[-1, 1] → [0, 1]`.
pub fn denormalize(image: &ImageBuffer) -> Result<ImageBuffer> {
    if image.range() != Range::Signed {
        return Err(Error::Config(
            "denormalize expects a signed-range image".into(),
        ));
    }
    let pixels = image.pixels().iter().map(|v| (v + 1.0) / 2.0).collect();
    ImageBuffer::clamped(
        image.width(),
        image.height(),
        image.channels(),
        Range::Unit,
        pixels,
    )
    .map(|(img, _)| img)
}

/// Maps raw signed-space model output to a unit-range image, clamping.
/// Returns the image and the number of clamped samples.
pub fn signed_output_to_unit(
    values: &Mat,
    width: usize,
    height: usize,
) -> Result<(ImageBuffer, usize)> {
    if values.rows() != width * height {
        return Err(Error::Shape(format!(
            "{} predictions for a {width}x{height} image",
            values.rows()
        )));
    }
    let pixels = values.as_slice().iter().map(|v| (v + 1.0) / 2.0).collect();
    ImageBuffer::clamped(width, height, values.cols(), Range::Unit, pixels)
}

/// Endpoint-inclusive coordinates over `[-1, 1]²`, row-major to match
/// [`ImageBuffer`] pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateGrid {
    width: usize,
    height: usize,
    coords: Vec<Coord>,
}

impl CoordinateGrid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }
}

impl Deref for CoordinateGrid {
    type Target = [Coord];

    fn deref(&self) -> &[Coord] {
        &self.coords
    }
}

pub fn make_grid(width: usize, height: usize) -> Result<CoordinateGrid> {
    if width < 2 || height < 2 {
        return Err(Error::Config(format!(
            "coordinate grid needs at least 2x2 samples, got {width}x{height}"
        )));
    }
    let xs = linspace(width);
    let ys = linspace(height);
    let coords = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| [x, y]))
        .collect();
    Ok(CoordinateGrid {
        width,
        height,
        coords,
    })
}

fn linspace(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                1.0
            } else {
                -1.0 + 2.0 * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, px: Vec<f64>) -> ImageBuffer {
        ImageBuffer::new(w, h, 1, Range::Unit, px).unwrap()
    }

    #[test]
    fn rejects_out_of_range_and_bad_lengths() {
        assert!(ImageBuffer::new(1, 1, 1, Range::Unit, vec![1.5]).is_err());
        assert!(ImageBuffer::new(2, 1, 1, Range::Unit, vec![0.5]).is_err());
        assert!(ImageBuffer::new(1, 1, 2, Range::Unit, vec![0.5, 0.5]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, Range::Signed, vec![-1.0]).is_ok());
    }

    #[test]
    fn png_single_white_pixel_decodes_to_one() {
        let (bytes, _) = encode_png(&gray(1, 1, vec![1.0])).unwrap();
        let img = decode_png(&bytes).unwrap();
        assert_eq!(img.pixels(), &[1.0]);
    }

    #[test]
    fn png_quantizes_half_up() {
        let (bytes, clamped) = encode_png(&gray(2, 1, vec![0.5, 0.0])).unwrap();
        assert_eq!(clamped, 0);
        let img = decode_png(&bytes).unwrap();
        assert_eq!(img.get(0, 0, 0), 128.0 / 255.0);
    }

    #[test]
    fn png_counts_clamped_model_output() {
        let (img, n) = ImageBuffer::clamped(3, 1, 1, Range::Unit, vec![-0.2, 0.5, 1.3]).unwrap();
        assert_eq!(n, 2);
        assert_eq!(img.pixels(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn png_encoding_is_deterministic() {
        let img = ImageBuffer::from_fn(5, 4, 3, Range::Unit, |r, c, k| {
            ((r * 7 + c * 3 + k) % 11) as f64 / 10.0
        })
        .unwrap();
        assert_eq!(encode_png(&img).unwrap(), encode_png(&img).unwrap());
    }

    #[test]
    fn png_round_trip_of_8bit_image_is_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let img = ImageBuffer::from_fn(9, 7, 3, Range::Unit, |_, _, _| {
            rng.gen_range(0u8..=255) as f64 / 255.0
        })
        .unwrap();
        let (bytes, _) = encode_png(&img).unwrap();
        assert_eq!(decode_png(&bytes).unwrap(), img);
    }

    #[test]
    fn png_sixteen_bit_and_alpha() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(png::ColorType::GrayscaleAlpha);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0xff, 0xff, 0, 0, 0x80, 0x00, 0xff, 0xff])
                .unwrap();
        }
        let img = decode_png(&out).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.pixels(), &[1.0, 32768.0 / 65535.0]);
    }

    #[test]
    fn png_rejects_palette_and_garbage() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Indexed);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_palette(vec![0, 0, 0]);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0]).unwrap();
        }
        assert!(matches!(decode_png(&out), Err(Error::Unsupported(_))));
        assert!(matches!(
            decode_png(b"not a png at all"),
            Err(Error::Decode(_))
        ));
        let (mut bytes, _) = encode_png(&gray(4, 4, vec![0.5; 16])).unwrap();
        bytes.truncate(bytes.len() / 2);
        assert!(decode_png(&bytes).is_err());
    }

    #[test]
    fn load_png_missing_file_is_io_error() {
        assert!(matches!(
            load_png(Path::new("/nonexistent/definitely.png")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn grayscale_weights() {
        let img =
            ImageBuffer::new(2, 1, 3, Range::Unit, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let g = to_grayscale(&img).unwrap();
        assert!((g.pixels()[0] - 1.0).abs() < 1e-15);
        assert!((g.pixels()[1] - 0.299).abs() < 1e-15);
        assert!(to_grayscale(&g).is_err());
    }

    #[test]
    fn box_resize_cases() {
        let img = gray(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(resize_box(&img, 1, 1).unwrap().pixels(), &[0.5]);
        assert_eq!(resize_box(&img, 2, 2).unwrap(), img);
        assert!(resize_box(&img, 3, 2).is_err());
        assert!(resize_box(&img, 0, 1).is_err());

        let checker =
            ImageBuffer::from_fn(4, 4, 1, Range::Unit, |r, c, _| ((r + c) % 2) as f64).unwrap();
        let small = resize_box(&checker, 2, 2).unwrap();
        assert_eq!(small.pixels(), &[0.5; 4]);
    }

    #[test]
    fn box_resize_fractional_factor_preserves_mean() {
        let img = ImageBuffer::from_fn(7, 5, 1, Range::Unit, |r, c, _| {
            ((r * 5 + c * 3) % 7) as f64 / 6.0
        })
        .unwrap();
        let small = resize_box(&img, 3, 2).unwrap();
        let mean = |x: &ImageBuffer| x.pixels().iter().sum::<f64>() / x.len() as f64;
        // equal-area output cells each cover the same input area
        assert!((mean(&img) - mean(&small)).abs() < 1e-12);
    }

    #[test]
    fn signed_normalization() {
        let img = gray(3, 1, vec![0.0, 1.0, 0.5]);
        let s = normalize_signed(&img).unwrap();
        assert_eq!(s.pixels(), &[-1.0, 1.0, 0.0]);
        assert_eq!(s.range(), Range::Signed);
        assert!(normalize_signed(&s).is_err());
        assert!(denormalize(&img).is_err());
    }

    #[test]
    fn grid_values_and_spacing() {
        let g = make_grid(2, 2).unwrap();
        assert_eq!(
            g.coords(),
            &[[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]]
        );
        let g = make_grid(3, 2).unwrap();
        let xs: Vec<f64> = g[..3].iter().map(|c| c[0]).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
        assert!(make_grid(1, 5).is_err());

        let g = make_grid(29, 3).unwrap();
        for pair in g[..29].windows(2) {
            assert!((pair[1][0] - pair[0][0] - 2.0 / 28.0).abs() < 1e-15);
        }
        assert_eq!(g.len(), 29 * 3);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(px in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
            let n = px.len();
            let img = gray(n, 1, px);
            let back = denormalize(&normalize_signed(&img).unwrap()).unwrap();
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn grid_is_monotone_with_exact_extremes(w in 2usize..300, h in 2usize..40) {
            let g = make_grid(w, h).unwrap();
            prop_assert_eq!(g[0], [-1.0, -1.0]);
            prop_assert_eq!(g[w * h - 1], [1.0, 1.0]);
            for row in 0..h {
                for pair in g[row * w..(row + 1) * w].windows(2) {
                    prop_assert!(pair[1][0] > pair[0][0]);
                }
            }
        }
    }
}
