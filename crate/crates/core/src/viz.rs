//! Rendering-weight maps, full-view rendering and weight unimodality
//! statistics.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RadianceField;
use crate::geometry::{FrameCamera, NdcFrame, Ray};
use crate::io::{ColorImage, DepthMap, GrayImage};
use crate::render::{render_ray, stratified_sample, RaySampling, RenderResult, SamplingMode};

/// Bins on each side of the peak counted in the peak mass.
pub const PEAK_WINDOW: usize = 2;
/// Local maxima below this fraction of the peak are not counted as modes.
pub const MODE_THRESHOLD: f64 = 0.1;

/// Midpoint-sampled NDC ray through pixel `(x, y)`.
pub fn view_ray(camera: &FrameCamera, ndc: &NdcFrame, x: usize, y: usize) -> Result<Ray> {
    let world = camera.ray(Vector2::new(x as f64 + 0.5, y as f64 + 0.5), (0.0, 1e6))?;
    ndc.warp(&world)
}

fn midpoints(ray: &Ray, samples: usize) -> Result<RaySampling> {
    // midpoint sampling never draws from the generator
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    stratified_sample(ray, samples, SamplingMode::Midpoint, &mut rng)
}

/// Render the ray through pixel `(x, y)` with midpoint samples.
pub fn render_pixel<F: RadianceField + ?Sized>(
    field: &F,
    camera: &FrameCamera,
    ndc: &NdcFrame,
    frame: usize,
    (x, y): (usize, usize),
    samples: usize,
    background: &Vector3<f64>,
) -> Result<RenderResult> {
    let ray = view_ray(camera, ndc, x, y)?;
    let sampling = midpoints(&ray, samples)?;
    render_ray(field, &ray, &sampling, frame, background, false)
}

/// Rendering weights of one image row: `values[x·samples + i]` is the
/// weight of sample `i` on the ray through column `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMap {
    pub width: usize,
    pub samples: usize,
    pub row: usize,
    pub frame: usize,
    pub values: Vec<f64>,
    /// Per-map maximum used for normalization (0 for an empty map).
    pub max: f64,
    /// Residual transmittance per column.
    pub residual: Vec<f64>,
}

impl WeightMap {
    pub fn column(&self, x: usize) -> &[f64] {
        &self.values[x * self.samples..(x + 1) * self.samples]
    }

    /// Values divided by the per-map maximum.
    pub fn normalized(&self) -> Vec<f64> {
        if self.max > 0.0 {
            self.values.iter().map(|v| v / self.max).collect()
        } else {
            vec![0.0; self.values.len()]
        }
    }

    /// 8-bit image with one column per pixel and one row per sample.
    pub fn to_gray(&self) -> GrayImage {
        let norm = self.normalized();
        let mut data = vec![0u8; self.width * self.samples];
        for x in 0..self.width {
            for i in 0..self.samples {
                let v = norm[x * self.samples + i];
                data[i * self.width + x] = (255.0 * v).round().clamp(0.0, 255.0) as u8;
            }
        }
        GrayImage {
            width: self.width,
            height: self.samples,
            data,
        }
    }
}

pub fn weight_map<F: RadianceField + ?Sized>(
    field: &F,
    camera: &FrameCamera,
    ndc: &NdcFrame,
    frame: usize,
    row: usize,
    samples: usize,
) -> Result<WeightMap> {
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    if row >= h {
        return Err(Error::PixelOutOfBounds {
            x: 0.0,
            y: row as f64,
            width: w,
            height: h,
        });
    }
    field.resolve_frame(frame)?;
    let columns: Vec<RenderResult> = (0..w)
        .into_par_iter()
        .map(|x| render_pixel(field, camera, ndc, frame, (x, row), samples, &Vector3::zeros()))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = columns.iter().flat_map(|r| r.weights.w.iter().copied()).collect();
    let max = values.iter().copied().fold(0.0, f64::max);
    Ok(WeightMap {
        width: w,
        samples,
        row,
        frame,
        values,
        max,
        residual: columns.iter().map(|r| r.residual_transmittance).collect(),
    })
}

pub fn export_pgm(map: &WeightMap, path: &Path) -> Result<()> {
    map.to_gray().save_pgm(path)
}

/// Composite color and NDC depth for every pixel.
pub fn render_view<F: RadianceField + ?Sized>(
    field: &F,
    camera: &FrameCamera,
    ndc: &NdcFrame,
    frame: usize,
    samples: usize,
    background: &Vector3<f64>,
) -> Result<(ColorImage, DepthMap)> {
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    field.resolve_frame(frame)?;
    let px: Vec<(Vector3<f64>, f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let r = render_pixel(field, camera, ndc, frame, (i % w, i / w), samples, background)?;
            Ok((r.color, r.depth))
        })
        .collect::<Result<_>>()?;
    let image = ColorImage::from_data(w, h, px.iter().map(|p| p.0).collect())?;
    let depth = DepthMap {
        width: w,
        height: h,
        data: px.iter().map(|p| p.1).collect(),
    };
    Ok((image, depth))
}

/// Peak statistics of one ray's weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayModality {
    pub peak: usize,
    /// Weight within ±[`PEAK_WINDOW`] bins of the peak over the total.
    pub mass_ratio: f64,
    /// Local maxima at least [`MODE_THRESHOLD`] of the peak; 0 for a ray
    /// with no weight.
    pub modality: usize,
}

pub fn ray_modality(w: &[f64]) -> RayModality {
    let total: f64 = w.iter().sum();
    let (peak, &peak_value) = w
        .iter()
        .enumerate()
        .fold((0, &0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if !(total > 0.0) || !(peak_value > 0.0) {
        return RayModality {
            peak: 0,
            mass_ratio: 0.0,
            modality: 0,
        };
    }
    let lo = peak.saturating_sub(PEAK_WINDOW);
    let hi = (peak + PEAK_WINDOW).min(w.len() - 1);
    let mass_ratio = (w[lo..=hi].iter().sum::<f64>() / total).min(1.0);
    let modality = (0..w.len())
        .filter(|&i| {
            let left = if i > 0 { w[i - 1] } else { f64::NEG_INFINITY };
            let right = if i + 1 < w.len() { w[i + 1] } else { f64::NEG_INFINITY };
            w[i] > left && w[i] >= right && w[i] >= MODE_THRESHOLD * peak_value
        })
        .count();
    RayModality {
        peak,
        mass_ratio,
        modality,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnimodalityReport {
    pub pixels: Vec<(usize, usize)>,
    pub rays: Vec<RayModality>,
}

impl UnimodalityReport {
    pub fn mean_modality(&self) -> f64 {
        self.rays.iter().map(|r| r.modality as f64).sum::<f64>() / self.rays.len().max(1) as f64
    }

    pub fn mean_mass_ratio(&self) -> f64 {
        self.rays.iter().map(|r| r.mass_ratio).sum::<f64>() / self.rays.len().max(1) as f64
    }
}

pub fn unimodality<F: RadianceField + ?Sized>(
    field: &F,
    camera: &FrameCamera,
    ndc: &NdcFrame,
    frame: usize,
    pixels: &[(usize, usize)],
    samples: usize,
) -> Result<UnimodalityReport> {
    if pixels.is_empty() {
        return Err(Error::Degenerate("unimodality needs at least one pixel".into()));
    }
    let rays = pixels
        .par_iter()
        .map(|&p| {
            let r = render_pixel(field, camera, ndc, frame, p, samples, &Vector3::zeros())?;
            Ok(ray_modality(&r.weights.w))
        })
        .collect::<Result<_>>()?;
    Ok(UnimodalityReport {
        pixels: pixels.to_vec(),
        rays,
    })
}

/// Index of the midpoint-sampling bin containing NDC parameter `t`.
pub fn depth_bin(t: f64, samples: usize) -> usize {
    ((t * samples as f64).floor().max(0.0) as usize).min(samples - 1)
}

/// Fraction of rays whose weight peak lies within `tolerance` bins of the
/// bin holding the reference depth.
pub fn peak_accuracy(report: &UnimodalityReport, depth_t: &[f64], samples: usize, tolerance: usize) -> Result<f64> {
    crate::error::check_len("rays/reference depths", report.rays.len(), depth_t.len())?;
    let hits = report
        .rays
        .iter()
        .zip(depth_t)
        .filter(|(r, &t)| r.modality > 0 && r.peak.abs_diff(depth_bin(t, samples)) <= tolerance)
        .count();
    Ok(hits as f64 / report.rays.len().max(1) as f64)
}
