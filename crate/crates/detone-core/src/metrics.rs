//! Reference PSNR and SSIM on unit-range grayscale images. Both are
//! computed in f64 regardless of image storage precision.

use alloc::vec::Vec;
use core::fmt;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::halftone::GrayImage;

/// SSIM window size from the reference formulation.
const SSIM_WINDOW: usize = 11;
/// Gaussian window sigma.
const SSIM_SIGMA: f64 = 1.5;
/// Stabilizers (K1*L)^2 and (K2*L)^2 with K1=0.01, K2=0.03, L=1.
const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MetricsError {
    DimMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// SSIM needs at least one full window.
    TooSmall { h: usize, w: usize, min: usize },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::DimMismatch { left, right } => write!(
                f,
                "image dimensions differ: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            MetricsError::TooSmall { h, w, min } => {
                write!(f, "{h}x{w} image is below the {min}x{min} SSIM minimum")
            }
        }
    }
}

impl core::error::Error for MetricsError {}

/// Quality of a reconstruction against its reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityScore {
    /// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical
    /// images.
    pub psnr_db: f64,
    /// Mean structural similarity in [-1, 1]; 1 for identical images.
    pub ssim: f64,
}

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<(), MetricsError> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(MetricsError::DimMismatch {
            left: (a.height(), a.width()),
            right: (b.height(), b.width()),
        });
    }
    Ok(())
}

/// `10 * log10(peak^2 / MSE)` in dB, or `f64::INFINITY` when the images
/// are identical. Accumulation is in f64.
pub fn psnr(a: &GrayImage, b: &GrayImage, peak: f64) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    let mse = acc / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0f64; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut g {
        *v /= sum;
    }
    g
}

/// Valid-mode separable Gaussian filter: horizontal pass then vertical.
/// Input is `h*w`, output `(h-10)*(w-10)`.
fn gauss_filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wo = w - SSIM_WINDOW + 1;
    let ho = h - SSIM_WINDOW + 1;
    let mut horiz = Vec::with_capacity(h * wo);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..wo {
            let mut acc = 0.0;
            for (k, &gk) in g.iter().enumerate() {
                acc += gk * row[x + k];
            }
            horiz.push(acc);
        }
    }
    let mut out = Vec::with_capacity(ho * wo);
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for (k, &gk) in g.iter().enumerate() {
                acc += gk * horiz[(y + k) * wo + x];
            }
            out.push(acc);
        }
    }
    out
}

/// Mean SSIM with the reference constants: 11x11 Gaussian window
/// (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1. Only windows fully
/// inside the image contribute (no padding).
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::TooSmall {
            h,
            w,
            min: SSIM_WINDOW,
        });
    }
    let g = gaussian_window();
    let av: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let aa: Vec<f64> = av.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = bv.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();

    let mu_a = gauss_filter_valid(&av, h, w, &g);
    let mu_b = gauss_filter_valid(&bv, h, w, &g);
    let e_aa = gauss_filter_valid(&aa, h, w, &g);
    let e_bb = gauss_filter_valid(&bb, h, w, &g);
    let e_ab = gauss_filter_valid(&ab, h, w, &g);

    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        acc += num / den;
    }
    Ok(acc / mu_a.len() as f64)
}

/// PSNR and SSIM of `reconstruction` against `reference`.
pub fn quality(reconstruction: &GrayImage, reference: &GrayImage) -> Result<QualityScore, MetricsError> {
    Ok(QualityScore {
        psnr_db: psnr(reconstruction, reference, 1.0)?,
        ssim: ssim(reconstruction, reference)?,
    })
}
