//! PSNR, SSIM and value histograms.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imageio::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    if a.is_empty() {
        return Err(Error::Shape("empty images".into()));
    }
    Ok(())
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_dims(a, b)?;
    Ok(sq_err(a.pixels().iter().copied(), b.pixels().iter().copied()) / a.len() as f64)
}

fn sq_err(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// `10·log10(peak² / MSE)` in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Config(format!("peak must be positive, got {peak}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filtering over the valid region only.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..SSIM_WINDOW).map(|i| k[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(r + i) * ow + c]).sum();
        }
    }
    out
}

fn channel_plane(img: &ImageBuffer, ch: usize) -> Vec<f64> {
    img.pixels()
        .iter()
        .skip(ch)
        .step_by(img.channels())
        .copied()
        .collect()
}

fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, peak: f64) -> f64 {
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let e_aa = filter_valid(&aa, w, h, &k);
    let e_bb = filter_valid(&bb, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);

    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    total / n as f64
}

/// Per-channel SSIM (11×11 Gaussian window, σ = 1.5, valid region).
pub fn ssim_per_channel(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<Vec<f64>> {
    check_dims(a, b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Config(format!("peak must be positive, got {peak}")));
    }
    Ok((0..a.channels())
        .map(|ch| {
            ssim_channel(
                &channel_plane(a, ch),
                &channel_plane(b, ch),
                a.width(),
                a.height(),
                peak,
            )
        })
        .collect())
}

/// Mean SSIM over channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64> {
    let per = ssim_per_channel(a, b, peak)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` uniformly spaced edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_left,bin_right,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

/// Uniform bins over `[lo, hi]`, right-open except the last; values
/// outside the range (and NaN) are clipped to the end bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins < 1 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!(
            "invalid histogram range [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = if v.is_nan() || v <= lo {
            0
        } else if v >= hi {
            bins - 1
        } else {
            (((v - lo) / width).floor() as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Histogram over the observed `[min, max]` of all slices together, so
/// several distributions share bin edges. A degenerate span is widened by
/// ±0.5.
pub fn shared_histograms(sets: &[&[f64]], bins: usize) -> Result<Vec<Histogram>> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in sets.iter().flat_map(|s| s.iter()).filter(|v| v.is_finite()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    sets.iter().map(|s| histogram(s, bins, lo, hi)).collect()
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMetrics {
    #[serde(serialize_with = "serialize_db")]
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// `"inf"` in JSON when the images are identical.
    #[serde(serialize_with = "serialize_db")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_channel: Vec<ChannelMetrics>,
    /// Histogram of the evaluated image's pixel values over `[0, 1]`.
    pub histogram: Histogram,
    /// Samples of the evaluated image that were clamped into `[0, 1]`
    /// before measuring.
    pub clamped_samples: usize,
}

pub const DEFAULT_BINS: usize = 64;

/// Full report of `pred` against `reference` (both unit range, peak 1).
pub fn evaluate(
    pred: &ImageBuffer,
    reference: &ImageBuffer,
    clamped_samples: usize,
) -> Result<MetricsReport> {
    check_dims(pred, reference)?;
    let ch = pred.channels();
    let ssims = ssim_per_channel(pred, reference, 1.0)?;
    let per_channel = (0..ch)
        .map(|k| {
            let a = channel_plane(pred, k);
            let b = channel_plane(reference, k);
            let m = sq_err(a.iter().copied(), b.iter().copied()) / a.len() as f64;
            ChannelMetrics {
                psnr_db: psnr_from_mse(m, 1.0),
                ssim: ssims[k],
            }
        })
        .collect();
    Ok(MetricsReport {
        psnr_db: psnr(pred, reference, 1.0)?,
        ssim: ssims.iter().sum::<f64>() / ch as f64,
        per_channel,
        histogram: histogram(pred.pixels(), DEFAULT_BINS, 0.0, 1.0)?,
        clamped_samples,
    })
}
