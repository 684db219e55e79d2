//! Image quality metrics.

use crate::error::{check_len, Error, Result};
use crate::io::{ColorImage, DepthMap};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shape(img: &ColorImage, reference: &ColorImage) -> Result<()> {
    if (img.width, img.height) != (reference.width, reference.height) {
        return Err(Error::LengthMismatch {
            what: "image shapes",
            left: img.width * img.height,
            right: reference.width * reference.height,
        });
    }
    check_len("image pixels", img.data.len(), reference.data.len())
}

/// Mean squared error over all pixels and channels.
pub fn mse(img: &ColorImage, reference: &ColorImage) -> Result<f64> {
    check_shape(img, reference)?;
    let total: f64 = img
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok(total / (3 * img.data.len()) as f64)
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(img: &ColorImage, reference: &ColorImage) -> Result<f64> {
    let m = mse(img, reference)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region.
fn filter_valid(data: &[f64], width: usize, height: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (width - k + 1, height - k + 1);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * data[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean windowed SSIM on luma (0.299 R + 0.587 G + 0.114 B), Gaussian
/// window 11×11 with σ = 1.5, dynamic range 1, valid windows only.
pub fn ssim(img: &ColorImage, reference: &ColorImage) -> Result<f64> {
    check_shape(img, reference)?;
    if img.width < SSIM_WINDOW || img.height < SSIM_WINDOW {
        return Err(Error::Degenerate(format!(
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            img.width, img.height
        )));
    }
    let (w, h) = (img.width, img.height);
    let a = img.luma();
    let b = reference.luma();
    let g = gaussian_window();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&a, w, h, &g);
    let mu_b = filter_valid(&b, w, h, &g);
    let e_aa = filter_valid(&prod(&a, &a), w, h, &g);
    let e_bb = filter_valid(&prod(&b, &b), w, h, &g);
    let e_ab = filter_valid(&prod(&a, &b), w, h, &g);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Mean absolute 5-point Laplacian over interior pixels.
pub fn depth_roughness(depth: &DepthMap) -> Result<f64> {
    let (w, h) = (depth.width, depth.height);
    if w < 3 || h < 3 {
        return Err(Error::Degenerate(format!("depth map {w}x{h} has no interior")));
    }
    let mut total = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let lap = depth.get(x - 1, y) + depth.get(x + 1, y) + depth.get(x, y - 1) + depth.get(x, y + 1)
                - 4.0 * depth.get(x, y);
            total += lap.abs();
        }
    }
    Ok(total / ((w - 2) * (h - 2)) as f64)
}
