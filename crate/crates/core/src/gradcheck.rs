//! Registry of differentiable operations checked against central finite
//! differences. Each check draws a random input and a random linear
//! functional of the outputs, so one scalar comparison covers the full
//! Jacobian-vector product.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::GradcheckOptions;
use crate::ddr::{density_loss, weight_loss_with_draws, DensityLossConfig, GumbelConfig, GumbelDraws, WeightLoss};
use crate::error::{Error, Result};
use crate::field::{Aabb, FieldGrad, FieldSample, GridField, RadianceField, SampleGrad};
use crate::geometry::{so3_exp, so3_exp_jacobians, FrameCamera, NdcFrame, PinholeCamera, Pose, Ray};
use crate::grad::{evaluate_batch, fd_check, Batch, FDReport, PipelineConfig, RayItem};
use crate::losses::{grad_loss, rgb_loss, depth_loss, Lambdas};
use crate::render::{render_backward, render_samples, RaySampling, RenderUpstream, SamplingMode};
use crate::rng::{NoiseKey, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Deterministic,
    /// Depends on random draws held fixed across evaluations.
    Stochastic,
}

/// One point of one check: the analytic gradient, the parameters, and the
/// scalar function to difference.
pub struct Probe {
    pub x: Vec<f64>,
    pub analytic: Vec<f64>,
    pub f: Box<dyn FnMut(&[f64]) -> Result<f64>>,
}

pub struct GradOp {
    pub name: &'static str,
    pub kind: OpKind,
    pub probe: fn(&mut ChaCha8Rng) -> Result<Probe>,
}

pub fn registry() -> Vec<GradOp> {
    use OpKind::*;
    vec![
        GradOp { name: "compute_weights", kind: Deterministic, probe: probe_weights },
        GradOp { name: "composite", kind: Deterministic, probe: probe_composite },
        GradOp { name: "grid_query", kind: Deterministic, probe: probe_grid_params },
        GradOp { name: "grid_spatial", kind: Deterministic, probe: probe_grid_spatial },
        GradOp { name: "so3_exp", kind: Deterministic, probe: probe_so3 },
        GradOp { name: "camera_ray", kind: Deterministic, probe: probe_camera },
        GradOp { name: "ndc_warp", kind: Deterministic, probe: probe_ndc },
        GradOp { name: "rgb_loss", kind: Deterministic, probe: probe_rgb },
        GradOp { name: "depth_loss", kind: Deterministic, probe: probe_depth },
        GradOp { name: "grad_loss", kind: Deterministic, probe: probe_grad_loss },
        GradOp { name: "density_loss", kind: Deterministic, probe: probe_density },
        GradOp { name: "weight_loss", kind: Stochastic, probe: probe_weight_loss },
        GradOp { name: "pipeline", kind: Stochastic, probe: probe_pipeline },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSummary {
    pub name: String,
    pub kind: OpKind,
    pub points: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub kinks: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub ops: Vec<OpSummary>,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(|o| o.passed)
    }
}

pub fn check_op(op: &GradOp, opts: &GradcheckOptions) -> Result<(OpSummary, Vec<FDReport>)> {
    let tolerance = match op.kind {
        OpKind::Deterministic => opts.tol_deterministic,
        OpKind::Stochastic => opts.tol_stochastic,
    };
    let mut reports = Vec::with_capacity(opts.points);
    for point in 0..opts.points {
        let mut rng = NoiseKey::new(opts.seed, Purpose::Gradcheck, point as u64, fnv(op.name)).rng();
        let Probe { x, analytic, f } = (op.probe)(&mut rng)?;
        reports.push(fd_check(op.name, f, &x, &analytic, opts.step)?);
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let summary = OpSummary {
        name: op.name.to_string(),
        kind: op.kind,
        points: opts.points,
        max_rel_error,
        tolerance,
        kinks: reports.iter().map(|r| r.kinks.len()).sum(),
        passed: max_rel_error < tolerance,
    };
    Ok((summary, reports))
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckSummary> {
    let ops = registry()
        .iter()
        .map(|op| check_op(op, opts).map(|r| r.0))
        .collect::<Result<_>>()?;
    Ok(GradcheckSummary { ops })
}

fn fnv(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn vec3(v: &[f64]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn sorted_sampling(rng: &mut ChaCha8Rng, n: usize) -> RaySampling {
    let width = 1.0 / n as f64;
    let t: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random_range(0.1..0.9)) * width).collect();
    let mut delta: Vec<f64> = t.windows(2).map(|p| p[1] - p[0]).collect();
    delta.push(width);
    RaySampling { t, delta }
}

const N_RAY: usize = 16;

fn probe_weights(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let sampling = sorted_sampling(rng, N_RAY);
    let sigma = uniform(rng, 0.0, 20.0, N_RAY);
    let a = uniform(rng, -1.0, 1.0, N_RAY);
    let render = {
        let sampling = sampling.clone();
        move |s: &[f64]| {
            let samples: Vec<FieldSample> = s.iter().map(|&sigma| FieldSample { sigma, color: Vector3::zeros() }).collect();
            render_samples(&sampling, &samples, &Vector3::zeros(), true)
        }
    };
    let r = render(&sigma)?;
    let up = RenderUpstream { color: Vector3::zeros(), depth: 0.0, weights: a.clone() };
    let analytic = render_backward(&r, &up)?.sigma;
    let f = move |s: &[f64]| -> Result<f64> {
        let r = render(s)?;
        Ok(r.weights.w.iter().zip(&a).map(|(w, a)| w * a).sum())
    };
    Ok(Probe { x: sigma, analytic, f: Box::new(f) })
}

fn probe_composite(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let sampling = sorted_sampling(rng, N_RAY);
    let x: Vec<f64> = uniform(rng, 0.0, 20.0, N_RAY).into_iter().chain(uniform(rng, 0.0, 1.0, 3 * N_RAY)).collect();
    let bg = vec3(&uniform(rng, 0.0, 1.0, 3));
    let (a, b) = (vec3(&uniform(rng, -1.0, 1.0, 3)), rng.random_range(-1.0..1.0));
    let render = move |p: &[f64]| {
        let samples: Vec<FieldSample> = (0..N_RAY)
            .map(|i| FieldSample { sigma: p[i], color: vec3(&p[N_RAY + 3 * i..]) })
            .collect();
        render_samples(&sampling, &samples, &bg, true)
    };
    let r = render(&x)?;
    let g = render_backward(&r, &RenderUpstream { color: a, depth: b, weights: Vec::new() })?;
    let analytic = g.sigma.iter().copied().chain(g.color.iter().flat_map(|c| c.iter().copied())).collect();
    let f = move |p: &[f64]| -> Result<f64> {
        let r = render(p)?;
        Ok(a.dot(&r.color) + b * r.depth)
    };
    Ok(Probe { x, analytic, f: Box::new(f) })
}

fn small_grid(rng: &mut ChaCha8Rng) -> Result<GridField<f64>> {
    GridField::random([4, 3, 5], Aabb::NDC, 1, (0.0, 2.0), (0.0, 2.0), rng)
}

fn interior_point(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    vec3(&uniform(rng, -0.95, 0.95, 3))
}

fn probe_grid_params(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let grid = small_grid(rng)?;
    let p = interior_point(rng);
    let up = SampleGrad { sigma: rng.random_range(-1.0..1.0), color: vec3(&uniform(rng, -1.0, 1.0, 3)) };
    let mut g = FieldGrad::zeros(grid.sigma.len());
    grid.query_gradient(&p, 0, &up, &mut g)?;
    let ns = grid.sigma.len();
    let x: Vec<f64> = grid.sigma.iter().chain(&grid.color).copied().collect();
    let analytic = g.sigma.iter().chain(&g.color).copied().collect();
    let f = move |q: &[f64]| -> Result<f64> {
        let mut field = grid.clone();
        field.sigma.copy_from_slice(&q[..ns]);
        field.color.copy_from_slice(&q[ns..]);
        let s = field.query(&p, 0)?;
        Ok(up.sigma * s.sigma + up.color.dot(&s.color))
    };
    Ok(Probe { x, analytic, f: Box::new(f) })
}

fn probe_grid_spatial(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let grid = small_grid(rng)?;
    let p = interior_point(rng);
    let (a, b) = (rng.random_range(-1.0..1.0), vec3(&uniform(rng, -1.0, 1.0, 3)));
    let (_, ds, dc) = grid.sample_with_jacobian(&p, 0);
    let analytic = (ds * a + dc.transpose() * b).as_slice().to_vec();
    let f = move |q: &[f64]| -> Result<f64> {
        let s = grid.query(&vec3(q), 0)?;
        Ok(a * s.sigma + b.dot(&s.color))
    };
    Ok(Probe { x: p.as_slice().to_vec(), analytic, f: Box::new(f) })
}

fn probe_so3(rng: &mut ChaCha8Rng) -> Result<Probe> {
    // include the small-angle branch on some points
    let scale = if rng.random_bool(0.25) { 1e-5 } else { 1.0 };
    let omega = vec3(&uniform(rng, -scale, scale, 3));
    let a = Matrix3::from_iterator(uniform(rng, -1.0, 1.0, 9));
    let jac = so3_exp_jacobians(&omega);
    let analytic = jac.iter().map(|j| j.component_mul(&a).sum()).collect();
    let f = move |q: &[f64]| -> Result<f64> { Ok(so3_exp(&vec3(q)).component_mul(&a).sum()) };
    Ok(Probe { x: omega.as_slice().to_vec(), analytic, f: Box::new(f) })
}

fn test_camera(rng: &mut ChaCha8Rng) -> Result<FrameCamera> {
    let intr = PinholeCamera::centered(16, 12, 14.0)?;
    let axis = vec3(&uniform(rng, -0.1, 0.1, 3));
    let pose = Pose::new(so3_exp(&axis), vec3(&uniform(rng, -0.2, 0.2, 3)))?;
    let mut cam = FrameCamera::new(intr, pose);
    cam.residual.xi.copy_from_slice(&uniform(rng, -0.02, 0.02, 6));
    cam.intrinsics.delta_f = rng.random_range(-0.5..0.5);
    Ok(cam)
}

fn camera_params(cam: &FrameCamera) -> Vec<f64> {
    let mut x = cam.residual.xi.to_vec();
    x.push(cam.intrinsics.delta_f);
    x
}

fn set_camera_params(cam: &mut FrameCamera, x: &[f64]) {
    cam.residual.xi.copy_from_slice(&x[..6]);
    cam.intrinsics.delta_f = x[6];
}

fn probe_camera(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let cam = test_camera(rng)?;
    let px = Vector2::new(rng.random_range(0.5..15.5), rng.random_range(0.5..11.5));
    let (a, b) = (vec3(&uniform(rng, -1.0, 1.0, 3)), vec3(&uniform(rng, -1.0, 1.0, 3)));
    let g = cam.ray_backward(px, &a, &b)?;
    let mut analytic = g.xi.to_vec();
    analytic.push(g.delta_f);
    let x = camera_params(&cam);
    let f = move |q: &[f64]| -> Result<f64> {
        let mut c = cam;
        set_camera_params(&mut c, q);
        let r = c.ray(px, (0.0, 1.0))?;
        Ok(a.dot(&r.origin) + b.dot(&r.direction))
    };
    Ok(Probe { x, analytic, f: Box::new(f) })
}

fn probe_ndc(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let ndc = NdcFrame::from_camera(&PinholeCamera::centered(16, 12, 14.0)?, 1.0)?;
    let o = vec3(&uniform(rng, -0.3, 0.3, 3));
    let d = Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3), -1.0).normalize();
    let (a, b) = (vec3(&uniform(rng, -1.0, 1.0, 3)), vec3(&uniform(rng, -1.0, 1.0, 3)));
    let ray = Ray::new(o, d, 0.0, 1e6)?;
    let (go, gd) = ndc.warp_backward(&ray, &a, &b);
    let analytic = go.iter().chain(gd.iter()).copied().collect();
    let x = o.iter().chain(d.iter()).copied().collect();
    let f = move |q: &[f64]| -> Result<f64> {
        let r = ndc.warp(&Ray::unnormalized(vec3(q), vec3(&q[3..]), 0.0, 1e6)?)?;
        Ok(a.dot(&r.origin) + b.dot(&r.direction))
    };
    Ok(Probe { x, analytic, f: Box::new(f) })
}

fn probe_rgb(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let n = 8;
    let x = uniform(rng, 0.0, 1.0, 3 * n);
    let target: Vec<Vector3<f64>> = (0..n).map(|_| vec3(&uniform(rng, 0.0, 1.0, 3))).collect();
    let unpack = |q: &[f64]| -> Vec<Vector3<f64>> { q.chunks_exact(3).map(vec3).collect() };
    let (_, g) = rgb_loss(&unpack(&x), &target)?;
    let analytic = g.iter().flat_map(|v| v.iter().copied()).collect();
    let f = move |q: &[f64]| -> Result<f64> { Ok(rgb_loss(&unpack(q), &target)?.0) };
    Ok(Probe { x, analytic, f: Box::new(f) })
}

fn probe_depth(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let x = uniform(rng, 0.0, 1.0, 8);
    let gt = uniform(rng, 0.0, 1.0, 8);
    let analytic = depth_loss(&x, &gt)?.1;
    let f = move |q: &[f64]| -> Result<f64> { Ok(depth_loss(q, &gt)?.0) };
    Ok(Probe { x, analytic, f: Box::new(f) })
}

fn probe_grad_loss(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let x = uniform(rng, 0.0, 1.0, 12);
    let gt = uniform(rng, 0.0, 1.0, 12);
    let analytic = grad_loss(&x, &gt)?.1;
    let f = move |q: &[f64]| -> Result<f64> { Ok(grad_loss(q, &gt)?.0) };
    Ok(Probe { x, analytic, f: Box::new(f) })
}

fn probe_density(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let sampling = sorted_sampling(rng, N_RAY);
    let sigma = uniform(rng, 0.0, 5.0, N_RAY);
    let depth = rng.random_range(0.3..0.9);
    let cfg = DensityLossConfig::default();
    let analytic = density_loss(&sampling, &sigma, depth, &cfg)?.1;
    let f = move |q: &[f64]| -> Result<f64> { Ok(density_loss(&sampling, q, depth, &cfg)?.0) };
    Ok(Probe { x: sigma, analytic, f: Box::new(f) })
}

fn probe_weight_loss(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let n = 32;
    let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let w: Vec<f64> = uniform(rng, 0.0, 1.0, n).into_iter().map(|v| v / n as f64).collect();
    let depth = rng.random_range(0.2..0.8);
    let cfg = GumbelConfig::default();
    let draws = GumbelDraws::draw(n, cfg.n_samples, rng);
    let half_width = 1.0 / n as f64;
    let eval = move |q: &[f64]| -> Result<WeightLoss> {
        let dist = crate::render::WeightDistribution::new(t.clone(), q.to_vec())?;
        weight_loss_with_draws(&dist, half_width, depth, &cfg, &draws)
    };
    let analytic = match eval(&w)? {
        WeightLoss::Value { grad, .. } => grad,
        WeightLoss::Skipped => return Err(Error::Degenerate("weight loss skipped at probe point".into())),
    };
    let f = move |q: &[f64]| -> Result<f64> {
        eval(q)?.loss().ok_or_else(|| Error::Degenerate("weight loss skipped".into()))
    };
    Ok(Probe { x: w, analytic, f: Box::new(f) })
}

/// Whole batch: 4³ field, two frames, eight rays in two runs, every loss on.
fn probe_pipeline(rng: &mut ChaCha8Rng) -> Result<Probe> {
    let field = GridField::<f64>::random([4, 4, 4], Aabb::NDC, 1, (1.0, 2.0), (0.0, 2.0), rng)?;
    let cams = vec![test_camera(rng)?, test_camera(rng)?];
    let cfg = PipelineConfig {
        samples_per_ray: 24,
        sampling: SamplingMode::Jitter,
        background: [0.2, 0.3, 0.4],
        lambdas: Lambdas { rgb: 1.0, depth: 0.5, weight: 0.3, density: 0.05, grad: 0.4 },
        ddr: GumbelConfig { n_samples: 8, ..GumbelConfig::default() },
        density: DensityLossConfig::default(),
        ndc: NdcFrame::from_camera(&cams[0].intrinsics, 1.0)?,
        camera_grad: true,
    };
    let runs = (0..2)
        .map(|frame| {
            let y = rng.random_range(1..11) as f64 + 0.5;
            let x0 = rng.random_range(0..12);
            (x0..x0 + 4)
                .map(|x| RayItem {
                    frame,
                    pixel: Vector2::new(x as f64 + 0.5, y),
                    color: vec3(&uniform(rng, 0.0, 1.0, 3)),
                    depth: rng.random_range(0.3..0.9),
                })
                .collect()
        })
        .collect();
    let batch = Batch { runs };
    let seed = rng.random();
    let out = evaluate_batch(&field, &cams, &batch, &cfg, seed, 0, true)?;
    let grad = out.grad.ok_or(Error::MissingCache("pipeline gradient"))?;
    let ns = field.sigma.len();
    let nc = field.color.len();
    let mut x: Vec<f64> = field.sigma.iter().chain(&field.color).copied().collect();
    let mut analytic: Vec<f64> = grad.field.sigma.iter().chain(&grad.field.color).copied().collect();
    for (c, g) in cams.iter().zip(&grad.cameras) {
        x.extend(camera_params(c));
        analytic.extend(g.xi);
        analytic.push(g.delta_f);
    }
    let f = move |q: &[f64]| -> Result<f64> {
        let mut fld = field.clone();
        fld.sigma.copy_from_slice(&q[..ns]);
        fld.color.copy_from_slice(&q[ns..ns + nc]);
        let mut cs = cams.clone();
        for (k, c) in cs.iter_mut().enumerate() {
            set_camera_params(c, &q[ns + nc + 7 * k..]);
        }
        Ok(evaluate_batch(&fld, &cs, &batch, &cfg, seed, 0, false)?.losses.total)
    };
    Ok(Probe { x, analytic, f: Box::new(f) })
}
