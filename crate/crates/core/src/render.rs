//! Discrete volume rendering along a ray.
//!
//! With samples `t_i` and spacings `δ_i`, the transmittance is
//! `T_i = exp(−Σ_{j<i} σ_j δ_j)`, the rendering weight
//! `w_i = T_i (1 − exp(−σ_i δ_i))`, color `Σ w_i c_i + T_{N+1}·background`
//! and depth `Σ w_i t_i` (not renormalized by `Σ w_i`).

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::{FieldSample, RadianceField};
use crate::geometry::Ray;

/// Tolerance on `Σ w_i ≤ 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

/// Rays whose total weight falls below this are reported as unconverged.
pub const CONVERGED_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Bin midpoints; deterministic, used by tests and evaluation.
    Midpoint,
    /// One uniform draw per bin.
    #[default]
    Jitter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaySampling {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

impl RaySampling {
    /// Mean bin width `(t_far − t_near)/N`, also the cap on the last spacing.
    pub fn bin_width(&self) -> f64 {
        self.delta.iter().sum::<f64>() / self.delta.len() as f64
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// One sample per equal-width bin of `[t_near, t_far]`. The last spacing is
/// capped at the bin width.
pub fn stratified_sample<R: Rng + ?Sized>(
    ray: &Ray,
    n: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<RaySampling> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 samples per ray, got {n}")));
    }
    let width = (ray.t_far - ray.t_near) / n as f64;
    let t: Vec<f64> = (0..n)
        .map(|i| {
            let offset = match mode {
                SamplingMode::Midpoint => 0.5,
                // keep strictly inside the bin so t stays strictly ascending
                SamplingMode::Jitter => rng.random::<f64>().clamp(1e-9, 1.0 - 1e-9),
            };
            ray.t_near + (i as f64 + offset) * width
        })
        .collect();
    let mut delta: Vec<f64> = t.windows(2).map(|p| p[1] - p[0]).collect();
    delta.push(width);
    Ok(RaySampling { t, delta })
}

/// `T_i = exp(−Σ_{j<i} σ_j δ_j)`, plus the transmittance past the last sample.
pub fn compute_transmittance(sigma: &[f64], delta: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_len("sigma/delta", sigma.len(), delta.len())?;
    let mut out = Vec::with_capacity(sigma.len());
    let mut optical_depth = 0.0f64;
    for (s, d) in sigma.iter().zip(delta) {
        out.push((-optical_depth).exp());
        optical_depth += s * d;
    }
    Ok((out, (-optical_depth).exp()))
}

/// Sample positions paired with rendering weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDistribution {
    pub t: Vec<f64>,
    pub w: Vec<f64>,
}

impl WeightDistribution {
    pub fn new(t: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        check_len("weight distribution", t.len(), w.len())?;
        if w.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Domain {
                what: "rendering weight",
                value: w.iter().copied().find(|v| !(*v >= 0.0)).unwrap_or(f64::NAN),
            });
        }
        let total: f64 = w.iter().sum();
        if total > 1.0 + WEIGHT_SUM_TOL {
            return Err(Error::Domain {
                what: "total rendering weight",
                value: total,
            });
        }
        Ok(Self { t, w })
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Weights `w_i = T_i (1 − exp(−σ_i δ_i))`, transmittance and the residual
/// transmittance `T_{N+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub residual: f64,
}

pub fn compute_weights(sigma: &[f64], delta: &[f64]) -> Result<Weights> {
    let (transmittance, residual) = compute_transmittance(sigma, delta)?;
    let w = transmittance
        .iter()
        .zip(sigma.iter().zip(delta))
        .map(|(t, (s, d))| -t * (-s * d).exp_m1())
        .collect();
    Ok(Weights {
        w,
        transmittance,
        residual,
    })
}

/// `Σ w_i c_i + residual · background`.
pub fn composite_color(
    weights: &[f64],
    colors: &[Vector3<f64>],
    residual: f64,
    background: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    check_len("weights/colors", weights.len(), colors.len())?;
    let c = weights
        .iter()
        .zip(colors)
        .fold(Vector3::zeros(), |acc, (w, c)| acc + c * *w);
    Ok(c + background * residual)
}

/// `Σ w_i t_i`.
pub fn composite_depth(weights: &WeightDistribution) -> f64 {
    weights.w.iter().zip(&weights.t).map(|(w, t)| w * t).sum()
}

/// Intermediate values kept from the forward pass for [`render_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderCache {
    pub sigma: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
    pub delta: Vec<f64>,
    pub background: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    pub color: Vector3<f64>,
    pub depth: f64,
    pub weights: WeightDistribution,
    pub transmittance: Vec<f64>,
    pub residual_transmittance: f64,
    pub cache: Option<RenderCache>,
}

impl RenderResult {
    pub fn is_converged(&self) -> bool {
        self.weights.total() >= CONVERGED_WEIGHT
    }
}

/// Render from per-sample densities and colors.
pub fn render_samples(
    sampling: &RaySampling,
    samples: &[FieldSample],
    background: &Vector3<f64>,
    keep_cache: bool,
) -> Result<RenderResult> {
    check_len("samples", sampling.len(), samples.len())?;
    let sigma: Vec<f64> = samples.iter().map(|s| s.sigma).collect();
    let colors: Vec<Vector3<f64>> = samples.iter().map(|s| s.color).collect();
    let Weights {
        w,
        transmittance,
        residual,
    } = compute_weights(&sigma, &sampling.delta)?;
    let color = composite_color(&w, &colors, residual, background)?;
    let weights = WeightDistribution {
        t: sampling.t.clone(),
        w,
    };
    let depth = composite_depth(&weights);
    Ok(RenderResult {
        color,
        depth,
        weights,
        transmittance,
        residual_transmittance: residual,
        cache: keep_cache.then(|| RenderCache {
            sigma,
            colors,
            delta: sampling.delta.clone(),
            background: *background,
        }),
    })
}

/// Query `field` along `ray` at the sampled positions and render.
pub fn render_ray<F: RadianceField + ?Sized>(
    field: &F,
    ray: &Ray,
    sampling: &RaySampling,
    frame: usize,
    background: &Vector3<f64>,
    keep_cache: bool,
) -> Result<RenderResult> {
    let frame = field.resolve_frame(frame)?;
    let samples: Vec<FieldSample> = sampling
        .t
        .iter()
        .map(|&t| field.sample(&ray.at(t), frame))
        .collect();
    render_samples(sampling, &samples, background, keep_cache)
}

/// Upstream gradient on a [`RenderResult`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderUpstream {
    pub color: Vector3<f64>,
    pub depth: f64,
    /// Direct gradient on each weight; empty means zero.
    pub weights: Vec<f64>,
}

impl RenderUpstream {
    pub fn zero() -> Self {
        Self {
            color: Vector3::zeros(),
            depth: 0.0,
            weights: Vec::new(),
        }
    }
}

/// Per-sample gradients `(∂L/∂σ_i, ∂L/∂c_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGrad {
    pub sigma: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
}

/// Reverse pass of [`render_samples`].
///
/// With `g_i = ∂L/∂w_i` (direct + depth·t_i + color·c_i) and
/// `g_res = color·background`:
/// `∂L/∂σ_k = δ_k (T_{k+1} g_k − Σ_{i>k} w_i g_i − T_{N+1} g_res)`.
pub fn render_backward(result: &RenderResult, upstream: &RenderUpstream) -> Result<RenderGrad> {
    let cache = result
        .cache
        .as_ref()
        .ok_or(Error::MissingCache("render forward pass was run without a cache"))?;
    let n = cache.sigma.len();
    if !upstream.weights.is_empty() {
        check_len("weight upstream", upstream.weights.len(), n)?;
    }
    let w = &result.weights.w;
    let t = &result.weights.t;
    let g: Vec<f64> = (0..n)
        .map(|i| {
            let direct = upstream.weights.get(i).copied().unwrap_or(0.0);
            direct + upstream.depth * t[i] + upstream.color.dot(&cache.colors[i])
        })
        .collect();
    let g_res = upstream.color.dot(&cache.background);
    let t_res = result.residual_transmittance;

    let mut sigma = vec![0.0; n];
    let mut suffix = 0.0;
    for k in (0..n).rev() {
        let t_next = if k + 1 < n {
            result.transmittance[k + 1]
        } else {
            t_res
        };
        sigma[k] = cache.delta[k] * (t_next * g[k] - suffix - t_res * g_res);
        suffix += w[k] * g[k];
    }
    let color = w.iter().map(|wi| upstream.color * *wi).collect();
    Ok(RenderGrad { sigma, color })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_ray() -> Ray {
        Ray::new(Vector3::zeros(), Vector3::new(0.0, 0.0, -1.0), 0.0, 1.0).unwrap()
    }

    #[test]
    fn midpoint_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = stratified_sample(&unit_ray(), 4, SamplingMode::Midpoint, &mut rng).unwrap();
        assert_eq!(s.t, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(s.delta, vec![0.25; 4]);
        let s = stratified_sample(&unit_ray(), 128, SamplingMode::Midpoint, &mut rng).unwrap();
        assert_eq!(s.len(), 128);
        assert!(stratified_sample(&unit_ray(), 1, SamplingMode::Midpoint, &mut rng).is_err());
    }

    #[test]
    fn jitter_stays_in_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = stratified_sample(&unit_ray(), 16, SamplingMode::Jitter, &mut rng).unwrap();
        for (i, t) in s.t.iter().enumerate() {
            assert!(*t > i as f64 / 16.0 && *t < (i + 1) as f64 / 16.0);
        }
        assert!(s.delta.iter().all(|d| *d > 0.0));
    }

    #[test]
    fn transmittance_examples() {
        let (t, res) = compute_transmittance(&[0.0; 5], &[0.2; 5]).unwrap();
        assert_eq!(t, vec![1.0; 5]);
        assert_eq!(res, 1.0);

        let (t, _) = compute_transmittance(&[2.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((t[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((t[1] - 0.3679).abs() < 1e-4);

        let (t, _) = compute_transmittance(&[1e6, 0.0, 0.0], &[0.1; 3]).unwrap();
        assert!(t[1] < 1e-300 && t[2] < 1e-300);

        assert!(matches!(
            compute_transmittance(&[0.0; 3], &[0.1; 2]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn weight_examples() {
        let w = compute_weights(&[0.0; 4], &[0.25; 4]).unwrap();
        assert_eq!(w.w, vec![0.0; 4]);

        let w = compute_weights(&[0.0, 0.0, 1e6, 0.0], &[0.25; 4]).unwrap();
        assert!((w.w[2] - 1.0).abs() < 1e-12);
        assert_eq!(w.w[0], 0.0);
        assert!(w.w[3] < 1e-12);

        let ln2 = std::f64::consts::LN_2;
        let w = compute_weights(&[ln2; 5], &[1.0; 5]).unwrap();
        for (i, wi) in w.w.iter().enumerate() {
            assert!((wi - 0.5f64.powi(i as i32 + 1)).abs() < 1e-15);
        }
    }

    #[test]
    fn color_and_depth_examples() {
        let red = Vector3::new(1.0, 0.0, 0.0);
        let green = Vector3::new(0.0, 1.0, 0.0);
        let blue = Vector3::new(0.0, 0.0, 1.0);
        let bg = Vector3::zeros();
        assert_eq!(
            composite_color(&[0.0, 1.0, 0.0], &[red, green, blue], 0.0, &bg).unwrap(),
            green
        );
        let c = Vector3::new(0.2, 0.4, 0.6);
        let out = composite_color(&[0.25, 0.5, 0.25], &[c, c, c], 0.0, &bg).unwrap();
        assert!((out - c).amax() < 1e-15);
        assert_eq!(
            composite_color(&[0.5, 0.25, 0.25], &[red, green, blue], 0.0, &bg).unwrap(),
            Vector3::new(0.5, 0.25, 0.25)
        );
        assert!(composite_color(&[0.5], &[red, green], 0.0, &bg).is_err());

        let d = WeightDistribution::new(vec![0.1, 0.7, 0.9], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(composite_depth(&d), 0.7);
        let d = WeightDistribution::new(vec![0.1, 0.7], vec![0.0, 0.0]).unwrap();
        assert_eq!(composite_depth(&d), 0.0);
        let d = WeightDistribution::new(vec![0.2, 0.8], vec![0.5, 0.5]).unwrap();
        assert_eq!(composite_depth(&d), 0.5);
    }

    #[test]
    fn background_uses_residual() {
        let samples = vec![FieldSample::EMPTY; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = stratified_sample(&unit_ray(), 4, SamplingMode::Midpoint, &mut rng).unwrap();
        let bg = Vector3::new(1.0, 1.0, 1.0);
        let r = render_samples(&s, &samples, &bg, false).unwrap();
        assert_eq!(r.color, bg);
        assert_eq!(r.depth, 0.0);
        assert!(!r.is_converged());
    }

    #[test]
    fn backward_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = stratified_sample(&unit_ray(), 3, SamplingMode::Midpoint, &mut rng).unwrap();
        let samples: Vec<FieldSample> = (0..3)
            .map(|i| FieldSample {
                sigma: 1.0 + i as f64,
                color: Vector3::new(0.1 * i as f64, 0.5, 0.9),
            })
            .collect();
        let r = render_samples(&s, &samples, &Vector3::zeros(), true).unwrap();
        let g = render_backward(&r, &RenderUpstream::zero()).unwrap();
        assert!(g.sigma.iter().all(|v| *v == 0.0));

        let up = RenderUpstream {
            color: Vector3::new(1.0, 0.0, 0.0),
            depth: 0.0,
            weights: vec![],
        };
        let g = render_backward(&r, &up).unwrap();
        for k in 0..3 {
            assert_eq!(g.color[k].x, r.weights.w[k]);
        }

        let uncached = render_samples(&s, &samples, &Vector3::zeros(), false).unwrap();
        assert!(matches!(
            render_backward(&uncached, &up),
            Err(Error::MissingCache(_))
        ));
    }

    #[test]
    fn depth_gradient_matches_central_differences() {
        // oracle: central differences on a 3-sample ray
        let delta = vec![0.3, 0.3, 0.3];
        let t = vec![0.15, 0.45, 0.75];
        let sampling = RaySampling { t: t.clone(), delta: delta.clone() };
        let sigma = [0.7, 1.9, 0.4];
        let depth = |s: &[f64]| {
            let w = compute_weights(s, &delta).unwrap();
            w.w.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>()
        };
        let samples: Vec<FieldSample> = sigma
            .iter()
            .map(|&s| FieldSample { sigma: s, color: Vector3::zeros() })
            .collect();
        let r = render_samples(&sampling, &samples, &Vector3::zeros(), true).unwrap();
        let up = RenderUpstream { color: Vector3::zeros(), depth: 1.0, weights: vec![] };
        let g = render_backward(&r, &up).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut p = sigma;
            let mut m = sigma;
            p[k] += h;
            m[k] -= h;
            let fd = (depth(&p) - depth(&m)) / (2.0 * h);
            assert!((fd - g.sigma[k]).abs() / fd.abs().max(1e-12) < 1e-6, "k={k}");
        }
    }
}
