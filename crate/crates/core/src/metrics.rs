//! Full-reference quality metrics on luma planes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Plane;

/// PSNR reported for identical inputs.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const PEAK: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub psnr_db: f64,
    pub ssim: f64,
    pub shave: usize,
}

fn shaved<'a>(
    a: &'a Plane,
    b: &'a Plane,
    shave: usize,
) -> Result<(usize, usize, impl Iterator<Item = (f64, f64)> + 'a)> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!(
            "metric inputs differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (w, h) = a.dims();
    if w <= 2 * shave || h <= 2 * shave {
        return Err(Error::InvalidArgument(format!(
            "shave {shave} leaves nothing of a {w}×{h} plane"
        )));
    }
    let (iw, ih) = (w - 2 * shave, h - 2 * shave);
    let it = (shave..h - shave)
        .flat_map(move |y| (shave..w - shave).map(move |x| (f64::from(a.get(x, y)), f64::from(b.get(x, y)))));
    Ok((iw, ih, it))
}

pub fn mse(a: &Plane, b: &Plane, shave: usize) -> Result<f64> {
    let (w, h, it) = shaved(a, b, shave)?;
    let sum: f64 = it.map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / (w * h) as f64)
}

/// Peak signal-to-noise ratio in dB over the region `shave` pixels inside each border.
pub fn psnr(a: &Plane, b: &Plane, shave: usize) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b, shave)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB)
}

/// Normalised 11×11 Gaussian with σ = 1.5.
pub fn gaussian_window() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    let mut sum = 0.0;
    for (y, row) in w.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            *v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            sum += *v;
        }
    }
    w.iter_mut().flatten().for_each(|v| *v /= sum);
    w
}

/// Mean SSIM over all fully-contained 11×11 windows of the shaved region.
pub fn ssim(a: &Plane, b: &Plane, shave: usize) -> Result<f64> {
    let (w, h, it) = shaved(a, b, shave)?;
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} after shaving, got {w}×{h}"
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = it.unzip();
    let g1 = gaussian_1d();
    // The 2-D Gaussian is separable: filter rows, then columns, valid region only.
    let filt = |img: &[f64]| -> Vec<f64> {
        let ow = w - SSIM_WINDOW + 1;
        let oh = h - SSIM_WINDOW + 1;
        let mut rows = vec![0.0; ow * h];
        for r in 0..h {
            for c in 0..ow {
                rows[r * ow + c] = (0..SSIM_WINDOW).map(|k| g1[k] * img[r * w + c + k]).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for r in 0..oh {
            for c in 0..ow {
                out[r * ow + c] = (0..SSIM_WINDOW).map(|k| g1[k] * rows[(r + k) * ow + c]).sum();
            }
        }
        out
    };
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let (mx, my, sxx, syy, sxy) = (filt(&x), filt(&y), filt(&xx), filt(&yy), filt(&xy));
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

fn gaussian_1d() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

pub fn score(sr: &Plane, hr: &Plane, shave: usize) -> Result<QualityScore> {
    Ok(QualityScore {
        psnr_db: psnr(sr, hr, shave)?,
        ssim: ssim(sr, hr, shave)?,
        shave,
    })
}

/// Per-image PSNR and SSIM averaged arithmetically over the set.
pub fn dataset_score(pairs: &[(Plane, Plane)], shave: usize) -> Result<QualityScore> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("dataset_score needs at least one pair".into()));
    }
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (sr, hr) in pairs {
        let s = score(sr, hr, shave)?;
        psnr_sum += s.psnr_db;
        ssim_sum += s.ssim;
    }
    let n = pairs.len() as f64;
    Ok(QualityScore {
        psnr_db: psnr_sum / n,
        ssim: ssim_sum / n,
        shave,
    })
}
