//! Reverse-mode gradients for the full per-ray pipeline, and the
//! finite-difference validator.
//!
//! The pipeline is fixed: camera residuals → world ray → NDC ray → samples
//! → field queries → rendering weights → losses. Each stage has an explicit
//! adjoint. A batch is evaluated in three passes: a parallel forward over
//! runs, the batch-level loss normalization, and a parallel per-ray backward
//! whose contributions are scattered into the [`GradientBuffer`] serially in
//! ray order, so results do not depend on the number of worker threads.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddr::{density_loss, weight_loss, DensityLossConfig, GumbelConfig, WeightLoss};
use crate::error::{Error, Result};
use crate::field::{FieldGrad, FieldSample, GridField, RadianceField, SampleGrad, Scalar};
use crate::geometry::{CameraGrad, FrameCamera, NdcFrame, Ray};
use crate::losses::{aggregate, grad_loss, Lambdas, LossBundle, LossComponents};
use crate::render::{
    render_backward, render_samples, stratified_sample, RaySampling, RenderResult, RenderUpstream,
    SamplingMode,
};
use crate::rng::{NoiseKey, Purpose};

/// Far bound given to world-space pixel rays; the NDC warp ignores it.
const WORLD_FAR: f64 = 1e6;

/// Accumulated gradients for every learnable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub field: FieldGrad,
    pub cameras: Vec<CameraGrad>,
}

impl GradientBuffer {
    pub fn zeros<T: Scalar>(field: &GridField<T>, camera_count: usize) -> Self {
        Self {
            field: field.zero_grad(),
            cameras: vec![CameraGrad::default(); camera_count],
        }
    }

    pub fn zero(&mut self) {
        self.field.zero();
        self.cameras.fill(CameraGrad::default());
    }

    pub fn is_zero(&self) -> bool {
        self.field.is_zero() && self.cameras.iter().all(|c| *c == CameraGrad::default())
    }

    pub fn add(&mut self, other: &GradientBuffer) -> Result<()> {
        self.field.add(&other.field)?;
        crate::error::check_len("camera gradients", self.cameras.len(), other.cameras.len())?;
        for (a, b) in self.cameras.iter_mut().zip(&other.cameras) {
            a.add(b);
        }
        Ok(())
    }
}

/// One training ray: a pixel of a frame and its supervision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayItem {
    pub frame: usize,
    /// Pixel position (pixel centers sit at half-integers).
    pub pixel: Vector2<f64>,
    pub color: Vector3<f64>,
    /// Ground-truth depth as an NDC ray parameter.
    pub depth: f64,
}

/// Rays grouped into runs of image-adjacent pixels. The depth-gradient loss
/// pairs consecutive rays within a run only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub runs: Vec<Vec<RayItem>>,
}

impl Batch {
    pub fn ray_count(&self) -> usize {
        self.runs.iter().map(Vec::len).sum()
    }

    pub fn rays(&self) -> impl Iterator<Item = &RayItem> {
        self.runs.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub samples_per_ray: usize,
    pub sampling: SamplingMode,
    pub background: [f64; 3],
    pub lambdas: Lambdas,
    pub ddr: GumbelConfig,
    pub density: DensityLossConfig,
    pub ndc: NdcFrame,
    /// Whether to propagate gradients into the camera residuals.
    pub camera_grad: bool,
}

/// Forward state of one ray kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RayForward {
    pub world: Ray,
    pub ndc: Ray,
    pub sampling: RaySampling,
    pub result: RenderResult,
    /// Spatial Jacobians `(∂σ/∂x, ∂c/∂x)` per sample, when camera gradients
    /// are requested.
    jacobians: Vec<(Vector3<f64>, nalgebra::Matrix3<f64>)>,
    pub weight_loss: WeightLoss,
    pub density_loss: f64,
    density_grad: Vec<f64>,
}

fn ray_key(seed: u64, purpose: Purpose, iteration: u64, index: usize) -> NoiseKey {
    NoiseKey::new(seed, purpose, iteration, index as u64)
}

/// Render one ray through the pipeline and evaluate its per-ray DDR terms.
#[allow(clippy::too_many_arguments)]
pub fn forward_ray<T: Scalar>(
    field: &GridField<T>,
    camera: &FrameCamera,
    item: &RayItem,
    cfg: &PipelineConfig,
    seed: u64,
    iteration: u64,
    index: usize,
) -> Result<RayForward> {
    let frame = field.resolve_frame(item.frame)?;
    let world = camera.ray(item.pixel, (0.0, WORLD_FAR))?;
    let ndc = cfg.ndc.warp(&world)?;
    let sampling = stratified_sample(
        &ndc,
        cfg.samples_per_ray,
        cfg.sampling,
        &mut ray_key(seed, Purpose::Jitter, iteration, index).rng(),
    )?;
    let mut samples = Vec::with_capacity(sampling.len());
    let mut jacobians = Vec::new();
    for &t in &sampling.t {
        let x = ndc.at(t);
        if cfg.camera_grad {
            let (s, ds, dc) = field.sample_with_jacobian(&x, frame);
            samples.push(s);
            jacobians.push((ds, dc));
        } else {
            samples.push(field.sample(&x, frame));
        }
    }
    let background = Vector3::from(cfg.background);
    let result = render_samples(&sampling, &samples, &background, true)?;

    let weight_loss = if cfg.lambdas.weight > 0.0 {
        weight_loss(
            &result.weights,
            sampling.bin_width(),
            item.depth,
            &cfg.ddr,
            &mut ray_key(cfg.ddr.seed ^ seed, Purpose::Gumbel, iteration, index).rng(),
        )?
    } else {
        WeightLoss::Skipped
    };
    let (density_loss, density_grad) = if cfg.lambdas.density > 0.0 {
        let sigma: Vec<f64> = samples.iter().map(|s: &FieldSample| s.sigma).collect();
        density_loss(&sampling, &sigma, item.depth, &cfg.density)?
    } else {
        (0.0, Vec::new())
    };
    Ok(RayForward {
        world,
        ndc,
        sampling,
        result,
        jacobians,
        weight_loss,
        density_loss,
        density_grad,
    })
}

/// Upstream gradients on one ray's outputs, already scaled by the loss
/// weights and batch normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct RayUpstream {
    pub render: RenderUpstream,
    /// Direct gradient on each sample's density.
    pub sigma: Vec<f64>,
}

/// Gradient contribution of one ray: per-sample field gradients at their
/// positions, and the camera residual gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct RayContribution {
    pub frame: usize,
    pub samples: Vec<(Vector3<f64>, SampleGrad)>,
    pub camera: CameraGrad,
}

/// Reverse pass of [`forward_ray`].
pub fn backward_ray<T: Scalar>(
    field: &GridField<T>,
    camera: &FrameCamera,
    item: &RayItem,
    fwd: &RayForward,
    upstream: &RayUpstream,
    ndc: &NdcFrame,
    camera_grad: bool,
) -> Result<RayContribution> {
    let frame = field.resolve_frame(item.frame)?;
    let n = fwd.sampling.len();
    if !upstream.sigma.is_empty() {
        crate::error::check_len("sigma upstream", upstream.sigma.len(), n)?;
    }
    if camera_grad && fwd.jacobians.len() != n {
        return Err(Error::MissingCache("spatial Jacobians were not recorded"));
    }
    let rg = render_backward(&fwd.result, &upstream.render)?;
    let mut samples = Vec::with_capacity(n);
    let mut g_origin = Vector3::zeros();
    let mut g_direction = Vector3::zeros();
    for i in 0..n {
        let t = fwd.sampling.t[i];
        let g = SampleGrad {
            sigma: rg.sigma[i] + upstream.sigma.get(i).copied().unwrap_or(0.0),
            color: rg.color[i],
        };
        if g.is_zero() {
            continue;
        }
        if camera_grad {
            let (ds, dc) = &fwd.jacobians[i];
            let g_x = ds * g.sigma + dc.transpose() * g.color;
            g_origin += g_x;
            g_direction += g_x * t;
        }
        samples.push((fwd.ndc.at(t), g));
    }
    let camera = if camera_grad {
        let (g_o, g_d) = ndc.warp_backward(&fwd.world, &g_origin, &g_direction);
        camera.ray_backward(item.pixel, &g_o, &g_d)?
    } else {
        CameraGrad::default()
    };
    Ok(RayContribution {
        frame,
        samples,
        camera,
    })
}

/// Scatter ray contributions into `grad` in order.
pub fn scatter<T: Scalar>(
    field: &GridField<T>,
    contributions: &[RayContribution],
    camera_frames: &[usize],
    grad: &mut GradientBuffer,
) {
    for (c, &cam) in contributions.iter().zip(camera_frames) {
        for (x, g) in &c.samples {
            field.accumulate_gradient(x, c.frame, g, &mut grad.field);
        }
        grad.cameras[cam].add(&c.camera);
    }
}

/// Losses and, optionally, gradients of a whole batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub losses: LossBundle,
    pub grad: Option<GradientBuffer>,
    /// Rays whose weight loss was skipped for lack of weight.
    pub skipped_weight_rays: usize,
}

/// Evaluate the five losses on a batch and, when `with_grad` is set, their
/// gradient with respect to the field parameters and camera residuals.
///
/// Normalization: rgb, depth and density are means over rays, weight is a
/// mean over rays that were not skipped, and grad is a mean over runs.
pub fn evaluate_batch<T: Scalar>(
    field: &GridField<T>,
    cameras: &[FrameCamera],
    batch: &Batch,
    cfg: &PipelineConfig,
    seed: u64,
    iteration: u64,
    with_grad: bool,
) -> Result<BatchOutput> {
    let items: Vec<&RayItem> = batch.rays().collect();
    let n_rays = items.len();
    if n_rays == 0 {
        return Err(Error::Degenerate("empty batch".into()));
    }
    for item in &items {
        if item.frame >= cameras.len() {
            return Err(Error::FrameOutOfRange {
                frame: item.frame,
                frame_count: cameras.len(),
            });
        }
    }
    let mut cfg = *cfg;
    cfg.camera_grad &= with_grad;

    let forwards: Vec<RayForward> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| forward_ray(field, &cameras[item.frame], item, &cfg, seed, iteration, i))
        .collect::<Result<_>>()?;

    let lam = cfg.lambdas;
    let inv_rays = 1.0 / n_rays as f64;
    let mut comps = LossComponents::default();
    let mut g_color = vec![Vector3::zeros(); n_rays];
    let mut g_depth = vec![0.0; n_rays];

    for (i, (item, f)) in items.iter().zip(&forwards).enumerate() {
        let dc = f.result.color - item.color;
        comps.rgb += dc.norm_squared() * inv_rays;
        g_color[i] = dc * (2.0 * inv_rays * lam.rgb);
        let dd = f.result.depth - item.depth;
        comps.depth += dd * dd * inv_rays;
        g_depth[i] = 2.0 * dd * inv_rays * lam.depth;
        comps.density += f.density_loss * inv_rays;
    }

    let valid_weight = forwards
        .iter()
        .filter(|f| matches!(f.weight_loss, WeightLoss::Value { .. }))
        .count();
    let skipped = if lam.weight > 0.0 { n_rays - valid_weight } else { 0 };
    if valid_weight > 0 {
        let inv = 1.0 / valid_weight as f64;
        comps.weight = forwards
            .iter()
            .filter_map(|f| f.weight_loss.loss())
            .sum::<f64>()
            * inv;
    }

    let runs: Vec<usize> = batch.runs.iter().map(Vec::len).collect();
    let paired_runs = runs.iter().filter(|&&len| len >= 2).count();
    if lam.grad > 0.0 && paired_runs > 0 {
        let inv_runs = 1.0 / paired_runs as f64;
        let mut start = 0;
        for &len in &runs {
            if len >= 2 {
                let pred: Vec<f64> = forwards[start..start + len].iter().map(|f| f.result.depth).collect();
                let gt: Vec<f64> = items[start..start + len].iter().map(|it| it.depth).collect();
                let (l, g) = grad_loss(&pred, &gt)?;
                comps.grad += l * inv_runs;
                for (k, gk) in g.iter().enumerate() {
                    g_depth[start + k] += gk * inv_runs * lam.grad;
                }
            }
            start += len;
        }
    }

    let losses = aggregate(&comps, &lam)?;
    if !with_grad {
        return Ok(BatchOutput {
            losses,
            grad: None,
            skipped_weight_rays: skipped,
        });
    }

    let weight_scale = if valid_weight > 0 {
        lam.weight / valid_weight as f64
    } else {
        0.0
    };
    let density_scale = lam.density * inv_rays;
    let contributions: Vec<RayContribution> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let f = &forwards[i];
            let weights = match &f.weight_loss {
                WeightLoss::Value { grad, .. } if weight_scale > 0.0 => {
                    grad.iter().map(|g| g * weight_scale).collect()
                }
                _ => Vec::new(),
            };
            let sigma = f.density_grad.iter().map(|g| g * density_scale).collect();
            let upstream = RayUpstream {
                render: RenderUpstream {
                    color: g_color[i],
                    depth: g_depth[i],
                    weights,
                },
                sigma,
            };
            backward_ray(field, &cameras[item.frame], item, f, &upstream, &cfg.ndc, cfg.camera_grad)
        })
        .collect::<Result<_>>()?;

    let mut grad = GradientBuffer::zeros(field, cameras.len());
    let frames: Vec<usize> = items.iter().map(|it| it.frame).collect();
    scatter(field, &contributions, &frames, &mut grad);
    Ok(BatchOutput {
        losses,
        grad: Some(grad),
        skipped_weight_rays: skipped,
    })
}

// ---------------------------------------------------------------------------
// Finite differences

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FDReport {
    pub op: String,
    pub max_rel_error: f64,
    /// Component index attaining the maximum.
    pub argmax: usize,
    pub h: f64,
    /// Components where the one-sided differences disagree, i.e. the
    /// function has a kink within `h`. Excluded from `max_rel_error`.
    pub kinks: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl FDReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// `|a − b|` relative to `scale`, floored at 1e-12.
pub fn relative_error(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(1e-12)
}

/// Compare `analytic` with `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every
/// component of `x`. Errors are measured relative to the largest gradient
/// component, so tiny components are not judged on roundoff alone.
pub fn fd_check<F>(op: &str, mut f: F, x: &[f64], analytic: &[f64], h: f64) -> Result<FDReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Domain {
            what: "finite-difference step",
            value: h,
        });
    }
    crate::error::check_len("parameters/analytic gradient", x.len(), analytic.len())?;
    let mut eval = |p: &[f64]| -> Result<f64> {
        let v = f(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    };
    let f0 = eval(x)?;
    let mut p = x.to_vec();
    let mut numeric = Vec::with_capacity(x.len());
    let mut kinks = Vec::new();
    for i in 0..x.len() {
        p[i] = x[i] + h;
        let fp = eval(&p)?;
        p[i] = x[i] - h;
        let fm = eval(&p)?;
        p[i] = x[i];
        numeric.push((fp - fm) / (2.0 * h));
        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        let jump = (forward - backward).abs();
        if jump > 1e-6 && jump > 0.1 * forward.abs().max(backward.abs()) {
            kinks.push(i);
        }
    }
    let smooth = |i: &usize| !kinks.contains(i);
    let scale = (0..x.len())
        .filter(smooth)
        .map(|i| analytic[i].abs().max(numeric[i].abs()))
        .fold(0.0, f64::max);
    let (mut max_rel_error, mut argmax) = (0.0, 0);
    for i in (0..x.len()).filter(smooth) {
        let e = relative_error(analytic[i], numeric[i], scale);
        if e > max_rel_error {
            max_rel_error = e;
            argmax = i;
        }
    }
    Ok(FDReport {
        op: op.to_string(),
        max_rel_error,
        argmax,
        h,
        kinks,
        analytic: analytic.to_vec(),
        numeric,
    })
}
