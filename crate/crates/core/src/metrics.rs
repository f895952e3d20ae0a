//! Image quality metrics: PSNR, DSSIM and temporal PSNR.

use rayon::prelude::*;
use thiserror::Error;

use crate::image::RgbImage;

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")]
    TooSmall(usize, usize),
    #[error("peak must be positive, got {0}")]
    InvalidPeak(f64),
    #[error("sequence needs at least 2 frames, got {0}")]
    SequenceTooShort(usize),
    #[error("sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub dssim1: f64,
    pub dssim2: f64,
    pub tpsnr: f64,
}

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<(), MetricsError> {
    if a.same_size(b) {
        Ok(())
    } else {
        Err(MetricsError::DimensionMismatch(a.width, a.height, b.width, b.height))
    }
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn mse(a: &RgbImage, b: &RgbImage) -> f64 {
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    sum / (3 * a.len()).max(1) as f64
}

pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    if !(peak > 0.0) {
        return Err(MetricsError::InvalidPeak(peak));
    }
    Ok(psnr_from_mse(mse(a, b), peak))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, w) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *w = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|w| w / sum)
}

/// Half-sample symmetric index: `d c b a | a b c d | d c b a`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur of a row-major plane with reflected borders.
fn blur(plane: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] =
                (0..SSIM_WINDOW).map(|k| kernel[k] * plane[y * w + reflect(x as isize + k as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] =
                (0..SSIM_WINDOW).map(|k| kernel[k] * tmp[reflect(y as isize + k as isize - r, h) * w + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one channel over the pixels at least half a window from
/// the border. Local statistics use Gaussian weights and population
/// (biased) covariances.
fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, data_range: f64) -> f64 {
    let kernel = gaussian_kernel();
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = blur(a, w, h, &kernel);
    let mu_b = blur(b, w, h, &kernel);
    let aa = blur(&prod(|x, _| x * x), w, h, &kernel);
    let bb = blur(&prod(|_, y| y * y), w, h, &kernel);
    let ab = blur(&prod(|x, y| x * y), w, h, &kernel);
    let pad = SSIM_WINDOW / 2;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in pad..h - pad {
        for x in pad..w - pad {
            let i = y * w + x;
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Mean SSIM over the three channels.
pub fn ssim(a: &RgbImage, b: &RgbImage, data_range: f64) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(MetricsError::TooSmall(a.width, a.height));
    }
    let total: f64 = (0..3)
        .into_par_iter()
        .map(|c| {
            let pa: Vec<f64> = a.data.iter().map(|p| p[c]).collect();
            let pb: Vec<f64> = b.data.iter().map(|p| p[c]).collect();
            ssim_channel(&pa, &pb, a.width, a.height, data_range)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / 3.0)
}

/// `(1 - SSIM) / 2`.
pub fn dssim(a: &RgbImage, b: &RgbImage, data_range: f64) -> Result<f64, MetricsError> {
    Ok((1.0 - ssim(a, b, data_range)?) / 2.0)
}

/// Mean over consecutive frame pairs of the PSNR between the rendered and
/// the ground-truth frame-to-frame residuals.
pub fn tpsnr(renders: &[RgbImage], gts: &[RgbImage], peak: f64) -> Result<f64, MetricsError> {
    if renders.len() != gts.len() {
        return Err(MetricsError::LengthMismatch(renders.len(), gts.len()));
    }
    if renders.len() < 2 {
        return Err(MetricsError::SequenceTooShort(renders.len()));
    }
    if !(peak > 0.0) {
        return Err(MetricsError::InvalidPeak(peak));
    }
    for (r, g) in renders.iter().zip(gts) {
        check_dims(r, g)?;
        check_dims(&renders[0], r)?;
    }
    let values: Vec<f64> = (1..renders.len())
        .into_par_iter()
        .map(|t| {
            let dr = renders[t].sub(&renders[t - 1]);
            let dg = gts[t].sub(&gts[t - 1]);
            psnr_from_mse(mse(&dr, &dg), peak)
        })
        .collect();
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-frame PSNR and DSSIM averaged over the sequence, plus tPSNR.
pub fn evaluate_sequence(renders: &[RgbImage], gts: &[RgbImage]) -> Result<MetricReport, MetricsError> {
    let tp = tpsnr(renders, gts, 1.0)?;
    let per_frame: Vec<(f64, f64, f64)> = renders
        .par_iter()
        .zip(gts)
        .map(|(r, g)| Ok((psnr(r, g, 1.0)?, dssim(r, g, 1.0)?, dssim(r, g, 2.0)?)))
        .collect::<Result<_, MetricsError>>()?;
    let n = per_frame.len() as f64;
    Ok(MetricReport {
        psnr: per_frame.iter().map(|f| f.0).sum::<f64>() / n,
        dssim1: per_frame.iter().map(|f| f.1).sum::<f64>() / n,
        dssim2: per_frame.iter().map(|f| f.2).sum::<f64>() / n,
        tpsnr: tp,
    })
}
