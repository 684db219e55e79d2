//! Distribution-based depth regularization.
//!
//! The discrete rendering weights of a ray are continued into a mixture of
//! triangles `P(t) = Σ w_i p_i(t)`, where `p_i` is the unit-area triangle of
//! half-width `δ` centered on sample `t_i`. The weight loss estimates
//! `E_{t∼P}|D − t|` with differentiable draws: a Gumbel-Softmax relaxation
//! `ŵ = softmax((g + log w)/ε)` picks the component, one inverse-CDF draw
//! `t̂_i` is taken from every triangle, and `T̂ = Σ ŵ_i t̂_i`. The density
//! loss penalizes density in front of the ground-truth surface.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::render::{RaySampling, WeightDistribution};
use crate::rng::open_unit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GumbelConfig {
    /// Softmax temperature ε.
    pub epsilon: f64,
    /// Composite samples per ray, N_s.
    pub n_samples: usize,
    /// Floor η applied to the normalized weights before taking logs.
    pub weight_floor: f64,
    pub seed: u64,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            n_samples: 30,
            weight_floor: 1e-8,
            seed: 0,
        }
    }
}

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("ddr.epsilon = {} must be > 0", self.epsilon)));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("ddr.n_samples must be >= 1".into()));
        }
        if !(self.weight_floor > 0.0) {
            return Err(Error::Config(format!(
                "ddr.weight_floor = {} must be > 0",
                self.weight_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityLossConfig {
    /// Sample spacings kept clear in front of the surface.
    #[serde(rename = "density_margin")]
    pub margin: usize,
}

impl Default for DensityLossConfig {
    fn default() -> Self {
        Self { margin: 2 }
    }
}

/// Map raw weights to a distribution with every entry at least `floor`:
/// `w̃_i = η + (1 − Nη)·w_i/Σw`. Returns `None` when `Σw < Nη`.
pub fn floor_and_normalize(w: &[f64], floor: f64) -> Option<Vec<f64>> {
    let n = w.len() as f64;
    let total: f64 = w.iter().sum();
    if !(total >= n * floor) || total <= 0.0 {
        return None;
    }
    let scale = (1.0 - n * floor) / total;
    Some(w.iter().map(|&v| floor + scale * v.max(0.0)).collect())
}

/// Backward of [`floor_and_normalize`].
fn floor_and_normalize_backward(w: &[f64], floor: f64, grad_out: &[f64]) -> Vec<f64> {
    let n = w.len() as f64;
    let total: f64 = w.iter().sum();
    let scale = (1.0 - n * floor) / total;
    let dot: f64 = w.iter().zip(grad_out).map(|(a, b)| a * b).sum();
    grad_out
        .iter()
        .map(|g| scale * (g - dot / total))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangularMixture {
    pub centers: Vec<f64>,
    pub half_width: f64,
    /// Normalized copy of the weights.
    pub weights: Vec<f64>,
}

impl TriangularMixture {
    pub fn new(dist: &WeightDistribution, half_width: f64, floor: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::Domain {
                what: "triangle half-width",
                value: half_width,
            });
        }
        let weights = floor_and_normalize(&dist.w, floor)
            .ok_or_else(|| Error::Degenerate("weights sum below the floor".into()))?;
        Ok(Self {
            centers: dist.t.clone(),
            half_width,
            weights,
        })
    }
}

/// Unit-area symmetric triangle of half-width `delta` centered on `center`.
pub fn triangle_pdf(center: f64, delta: f64, t: f64) -> f64 {
    ((delta - (t - center).abs()) / (delta * delta)).max(0.0)
}

/// `P(t) = Σ w_i p_i(t)`.
pub fn mixture_pdf(mix: &TriangularMixture, t: f64) -> f64 {
    mix.centers
        .iter()
        .zip(&mix.weights)
        .map(|(&c, &w)| w * triangle_pdf(c, mix.half_width, t))
        .sum()
}

/// Standard Gumbel draw from a uniform: `g = −log(−log u)`.
pub fn gumbel_noise(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain {
            what: "gumbel_noise (needs 0 < u < 1)",
            value: u,
        });
    }
    Ok(-(-u.ln()).ln())
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// `ŵ_i = softmax_i((g_i + log w_i)/ε)`. The weights are normalized to sum
/// one before the log, which leaves the result unchanged in exact
/// arithmetic and makes it bitwise invariant to power-of-two rescaling.
pub fn gumbel_softmax(w: &[f64], g: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    check_len("weights/gumbel noise", w.len(), g.len())?;
    if !(epsilon > 0.0) {
        return Err(Error::Domain {
            what: "softmax temperature",
            value: epsilon,
        });
    }
    if let Some(&bad) = w.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain {
            what: "gumbel_softmax weight (floor weights first)",
            value: bad,
        });
    }
    let total: f64 = w.iter().sum();
    let mut z: Vec<f64> = w
        .iter()
        .zip(g)
        .map(|(wi, gi)| (gi + (wi / total).ln()) / epsilon)
        .collect();
    softmax_in_place(&mut z);
    Ok(z)
}

/// Inverse CDF of the symmetric triangle centered on `center`:
/// `c − δ + δ√(2u)` for `u ≤ ½`, `c + δ − δ√(2(1 − u))` otherwise.
pub fn sample_triangle(center: f64, delta: f64, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain {
            what: "sample_triangle (needs 0 < u < 1)",
            value: u,
        });
    }
    Ok(triangle_inverse_cdf(center, delta, u))
}

fn triangle_inverse_cdf(center: f64, delta: f64, u: f64) -> f64 {
    if u <= 0.5 {
        center - delta + delta * (2.0 * u).sqrt()
    } else {
        center + delta - delta * (2.0 * (1.0 - u)).sqrt()
    }
}

/// `T̂ = Σ ŵ_i t̂_i`.
pub fn composite_sample(w_hat: &[f64], t_hat: &[f64]) -> Result<f64> {
    check_len("selection weights/sub-samples", w_hat.len(), t_hat.len())?;
    let total: f64 = w_hat.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain {
            what: "selection weight sum",
            value: total,
        });
    }
    Ok(w_hat.iter().zip(t_hat).map(|(a, b)| a * b).sum())
}

/// Noise for one ray's weight loss: `n_samples` rows of Gumbel noise and of
/// triangle uniforms, one entry per ray sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelDraws {
    pub gumbel: Vec<Vec<f64>>,
    pub uniform: Vec<Vec<f64>>,
}

impl GumbelDraws {
    pub fn draw<R: Rng + ?Sized>(n: usize, n_samples: usize, rng: &mut R) -> Self {
        let mut gumbel = Vec::with_capacity(n_samples);
        let mut uniform = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            gumbel.push((0..n).map(|_| -(-open_unit(rng).ln()).ln()).collect());
            uniform.push((0..n).map(|_| open_unit(rng)).collect());
        }
        Self { gumbel, uniform }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightLoss {
    /// The ray carried too little weight to normalize.
    Skipped,
    Value { loss: f64, grad: Vec<f64> },
}

impl WeightLoss {
    pub fn loss(&self) -> Option<f64> {
        match self {
            WeightLoss::Skipped => None,
            WeightLoss::Value { loss, .. } => Some(*loss),
        }
    }
}

/// Monte-Carlo estimate of `E_{t∼P}|depth_gt − t|` and its gradient with
/// respect to the raw weights, drawing fresh noise from `rng`.
pub fn weight_loss<R: Rng + ?Sized>(
    dist: &WeightDistribution,
    half_width: f64,
    depth_gt: f64,
    cfg: &GumbelConfig,
    rng: &mut R,
) -> Result<WeightLoss> {
    cfg.validate()?;
    let draws = GumbelDraws::draw(dist.len(), cfg.n_samples, rng);
    weight_loss_with_draws(dist, half_width, depth_gt, cfg, &draws)
}

/// [`weight_loss`] with the noise supplied by the caller. The sub-samples
/// `t̂` carry no gradient; everything flows through `ŵ`.
pub fn weight_loss_with_draws(
    dist: &WeightDistribution,
    half_width: f64,
    depth_gt: f64,
    cfg: &GumbelConfig,
    draws: &GumbelDraws,
) -> Result<WeightLoss> {
    if !(half_width > 0.0) {
        return Err(Error::Domain {
            what: "triangle half-width",
            value: half_width,
        });
    }
    let n = dist.len();
    check_len("gumbel draws", draws.gumbel.len(), draws.uniform.len())?;
    let Some(normalized) = floor_and_normalize(&dist.w, cfg.weight_floor) else {
        return Ok(WeightLoss::Skipped);
    };
    let log_w: Vec<f64> = normalized.iter().map(|v| v.ln()).collect();
    let inv_eps = 1.0 / cfg.epsilon;
    let n_samples = draws.gumbel.len();
    let scale = 1.0 / n_samples as f64;

    // ∂L/∂log w̃, accumulated over the composite samples
    let mut grad_log_w = vec![0.0; n];
    let mut loss = 0.0;
    let mut w_hat = vec![0.0; n];
    let mut t_hat = vec![0.0; n];
    for (g, u) in draws.gumbel.iter().zip(&draws.uniform) {
        check_len("gumbel row", g.len(), n)?;
        check_len("uniform row", u.len(), n)?;
        for i in 0..n {
            w_hat[i] = (g[i] + log_w[i]) * inv_eps;
            t_hat[i] = triangle_inverse_cdf(dist.t[i], half_width, u[i]);
        }
        softmax_in_place(&mut w_hat);
        let sample: f64 = w_hat.iter().zip(&t_hat).map(|(a, b)| a * b).sum();
        let err = depth_gt - sample;
        loss += err.abs() * scale;
        // ∂|D − T̂|/∂T̂ = −sign(D − T̂), zero at a tie
        let g_sample = if err > 0.0 {
            -scale
        } else if err < 0.0 {
            scale
        } else {
            0.0
        };
        // softmax backward: ∂T̂/∂z_i = ŵ_i (t̂_i − T̂)
        for i in 0..n {
            grad_log_w[i] += g_sample * w_hat[i] * (t_hat[i] - sample) * inv_eps;
        }
    }
    let grad_normalized: Vec<f64> = grad_log_w
        .iter()
        .zip(&normalized)
        .map(|(g, w)| g / w)
        .collect();
    let grad = floor_and_normalize_backward(&dist.w, cfg.weight_floor, &grad_normalized);
    Ok(WeightLoss::Value { loss, grad })
}

/// `Σ σ_i` over samples with `t_i < depth_gt − margin·bin_width`, and its
/// gradient (the 0/1 indicator of that set).
pub fn density_loss(
    sampling: &RaySampling,
    sigma: &[f64],
    depth_gt: f64,
    cfg: &DensityLossConfig,
) -> Result<(f64, Vec<f64>)> {
    check_len("sampling/sigma", sampling.len(), sigma.len())?;
    let boundary = depth_gt - cfg.margin as f64 * sampling.bin_width();
    let grad: Vec<f64> = sampling
        .t
        .iter()
        .map(|&t| if t < boundary { 1.0 } else { 0.0 })
        .collect();
    let loss = sigma.iter().zip(&grad).map(|(s, g)| s * g).sum();
    Ok((loss, grad))
}
