//! Acceptance criteria, one line per criterion. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 3 4`.

use std::process::ExitCode;
use std::time::Instant;

use ddr::checkpoint::Checkpoint;
use ddr::config::GradcheckOptions;
use ddr::ddr::{gumbel_softmax, mixture_pdf, sample_triangle, triangle_pdf, weight_loss_with_draws, GumbelConfig, GumbelDraws, TriangularMixture};
use ddr::field::{Aabb, GridField};
use ddr::geometry::{camera_error, perturb_camera, FrameCamera, Pose};
use ddr::gradcheck::run_gradcheck;
use ddr::io::{ColorImage, DepthMap, GrayImage};
use ddr::losses::{depth_loss, Lambdas};
use ddr::metrics::depth_roughness;
use ddr::render::{compute_weights, render_ray, stratified_sample, SamplingMode, WeightDistribution};
use ddr::rng::{NoiseKey, Purpose};
use ddr::scene::{bake_grid, foreground_pixels, generate, mean_depth, BakeOptions, Dataset, Rig, SceneSpec};
use ddr::train::{train, TrainConfig, Trainer};
use ddr::viz::{export_pgm, peak_accuracy, render_view, unimodality, weight_map};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = anyhow::Result<(bool, String)>;

fn rng(index: u64) -> ChaCha8Rng {
    NoiseKey::new(2024, Purpose::Eval, 0, index).rng()
}

// 1 ---------------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let summary = run_gradcheck(&GradcheckOptions::default())?;
    let secs = start.elapsed().as_secs_f64();
    let worst: Vec<String> = summary
        .ops
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{} {:.2e}", o.name, o.max_rel_error))
        .collect();
    let max_det = summary.ops.iter().filter(|o| o.tolerance == 1e-6).map(|o| o.max_rel_error).fold(0.0, f64::max);
    let max_sto = summary.ops.iter().filter(|o| o.tolerance == 1e-3).map(|o| o.max_rel_error).fold(0.0, f64::max);
    let ok = summary.passed() && secs < 120.0;
    Ok((
        ok,
        format!(
            "{} ops x 20 points, worst deterministic {max_det:.2e} (< 1e-6), worst stochastic {max_sto:.2e} (< 1e-3), {secs:.1}s{}",
            summary.ops.len(),
            if worst.is_empty() { String::new() } else { format!(", failing: {}", worst.join(", ")) }
        ),
    ))
}

// 2 ---------------------------------------------------------------------

fn conservation() -> Outcome {
    let mut r = rng(2);
    let field = GridField::<f64>::random([8, 8, 8], Aabb::NDC, 1, (0.0, 4.0), (0.0, 2.0), &mut r)?;
    let mut worst: f64 = 0.0;
    let bg = Vector3::zeros();
    for i in 0..10_000 {
        let (o, d) = if i % 2 == 0 {
            let o = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), -1.0);
            (o, Vector3::new(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), 2.0))
        } else {
            // raw densities alone, including extreme values
            let n = r.random_range(2..160);
            let sigma: Vec<f64> = (0..n).map(|_| 10f64.powf(r.random_range(-4.0..4.0))).collect();
            let delta: Vec<f64> = (0..n).map(|_| r.random_range(1e-4..0.05)).collect();
            let w = compute_weights(&sigma, &delta)?;
            worst = worst.max((w.w.iter().sum::<f64>() + w.residual - 1.0).abs());
            continue;
        };
        let ray = ddr::geometry::Ray::unnormalized(o, d, 0.0, 1.0)?;
        let s = stratified_sample(&ray, r.random_range(2..160), SamplingMode::Jitter, &mut r)?;
        let res = render_ray(&field, &ray, &s, 0, &bg, false)?;
        worst = worst.max((res.weights.total() + res.residual_transmittance - 1.0).abs());
    }
    Ok((worst < 1e-6, format!("max |sum w + T_res - 1| = {worst:.2e} over 10^4 rays (< 1e-6)")))
}

// 3 ---------------------------------------------------------------------

fn gumbel() -> Outcome {
    let mut r = rng(3);
    // (a) Gumbel-max frequencies
    let w: [f64; 7] = [0.05, 0.1, 0.2, 0.3, 0.15, 0.12, 0.08];
    let k = w.len();
    let trials = 100_000;
    let mut counts = vec![0usize; k];
    for _ in 0..trials {
        let draws = GumbelDraws::draw(k, 1, &mut r);
        let g = &draws.gumbel[0];
        let best = (0..k).max_by(|&a, &b| (g[a] + w[a].ln()).total_cmp(&(g[b] + w[b].ln()))).unwrap_or(0);
        counts[best] += 1;
    }
    let chi2: f64 = (0..k)
        .map(|i| {
            let e = w[i] * trials as f64;
            (counts[i] as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new((k - 1) as f64)?.inverse_cdf(0.99);
    let a_ok = chi2 < critical;

    // (b) rescaling invariance under fixed noise
    let mut pow2_exact = true;
    let mut general: f64 = 0.0;
    for _ in 0..1000 {
        let n = 32;
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let g = &GumbelDraws::draw(n, 1, &mut r).gumbel[0];
        let base = gumbel_softmax(&w, g, 2.0)?;
        let e: i32 = r.random_range(-40..40);
        let scaled: Vec<f64> = w.iter().map(|v| v * 2f64.powi(e)).collect();
        pow2_exact &= gumbel_softmax(&scaled, g, 2.0)? == base;
        let c = 10f64.powf(r.random_range(-6.0..6.0));
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let other = gumbel_softmax(&scaled, g, 2.0)?;
        general = general.max(base.iter().zip(&other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let b_ok = pow2_exact && general < 1e-12;

    // (c) temperature sharpening
    let mut monotone = true;
    let mut last_mean = 0.0;
    for _ in 0..1000 {
        let n = 32;
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let g = &GumbelDraws::draw(n, 1, &mut r).gumbel[0];
        let maxes: Vec<f64> = [2.0, 0.5, 0.1, 0.01]
            .iter()
            .map(|&eps| gumbel_softmax(&w, g, eps).map(|v| v.into_iter().fold(0.0, f64::max)))
            .collect::<Result<_, _>>()?;
        monotone &= maxes.windows(2).all(|p| p[1] >= p[0]);
        last_mean += maxes[3] / 1000.0;
    }
    let c_ok = monotone && last_mean > 0.99;
    Ok((
        a_ok && b_ok && c_ok,
        format!(
            "(a) chi2 {chi2:.2} < {critical:.2}: {a_ok}; (b) 2^k bitwise {pow2_exact}, other scales max diff {general:.1e}: {b_ok}; (c) monotone {monotone}, mean max weight at eps 0.01 = {last_mean:.4} (> 0.99): {c_ok}"
        ),
    ))
}

// 4 ---------------------------------------------------------------------

fn mixture() -> Outcome {
    let mut r = rng(4);
    let mut worst_integral: f64 = 0.0;
    for _ in 0..20 {
        let n = r.random_range(4..40);
        let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let mass = r.random_range(0.2..1.0) / w.iter().sum::<f64>();
        let dist = WeightDistribution::new(t, w.iter().map(|v| v * mass).collect())?;
        let half = 1.0 / n as f64;
        let m = TriangularMixture::new(&dist, half, 1e-8)?;
        let (lo, hi) = (-2.0 * half, 1.0 + 2.0 * half);
        let steps = 200_000;
        let h = (hi - lo) / steps as f64;
        let integral: f64 = (0..steps).map(|i| mixture_pdf(&m, lo + (i as f64 + 0.5) * h) * h).sum();
        worst_integral = worst_integral.max((integral - 1.0).abs());
    }

    let (center, delta) = (0.3, 0.05);
    let bins = 50;
    let draws = 1_000_000;
    let mut counts = vec![0usize; bins];
    for _ in 0..draws {
        let t = sample_triangle(center, delta, r.random_range(f64::MIN_POSITIVE..1.0))?;
        let b = (((t - center + delta) / (2.0 * delta)) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let width = 2.0 * delta / bins as f64;
    let mut worst_bin: f64 = 0.0;
    for (b, &c) in counts.iter().enumerate() {
        // exact bin mass by Simpson's rule on the piecewise-linear density
        let a = center - delta + b as f64 * width;
        let mass = width / 6.0
            * (triangle_pdf(center, delta, a) + 4.0 * triangle_pdf(center, delta, a + width / 2.0) + triangle_pdf(center, delta, a + width));
        worst_bin = worst_bin.max((c as f64 / draws as f64 - mass).abs());
    }
    Ok((
        worst_integral < 1e-4 && worst_bin < 0.01,
        format!("max |integral - 1| {worst_integral:.1e} (< 1e-4); max bin mass deviation {worst_bin:.1e} over 10^6 draws (< 1e-2)"),
    ))
}

// 5 ---------------------------------------------------------------------

fn expected_weight_loss(dist: &WeightDistribution, depth: f64, total: usize, seed: u64) -> anyhow::Result<f64> {
    let cfg = GumbelConfig { n_samples: 10_000, ..GumbelConfig::default() };
    let mut r = rng(seed);
    let chunks = total / cfg.n_samples;
    let mut sum = 0.0;
    for _ in 0..chunks {
        let draws = GumbelDraws::draw(dist.len(), cfg.n_samples, &mut r);
        sum += weight_loss_with_draws(dist, 1.0 / 32.0, depth, &cfg, &draws)?.loss().unwrap_or(f64::NAN);
    }
    Ok(sum / chunks as f64)
}

fn shape_vs_expectation() -> Outcome {
    let start = Instant::now();
    let n = 32;
    let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let depth = t[16];
    let mut one_hot = vec![0.0; n];
    one_hot[16] = 1.0;
    let mut bimodal = vec![0.0; n];
    bimodal[8] = 0.5;
    bimodal[24] = 0.5;
    let one_hot = WeightDistribution::new(t.clone(), one_hot)?;
    let bimodal = WeightDistribution::new(t.clone(), bimodal)?;
    let mean: f64 = bimodal.t.iter().zip(&bimodal.w).map(|(t, w)| t * w).sum();
    let (dl, _) = depth_loss(&[mean], &[depth])?;

    // brute-force expectation oracle
    let e_one = expected_weight_loss(&one_hot, depth, 1_000_000, 51)?;
    let e_bi = expected_weight_loss(&bimodal, depth, 1_000_000, 52)?;
    // the estimator at its default sample count, averaged over seeds
    let cfg = GumbelConfig::default();
    let mut r = rng(53);
    let (mut s_one, mut s_bi) = (0.0, 0.0);
    let reps = 500;
    for _ in 0..reps {
        let d = GumbelDraws::draw(n, cfg.n_samples, &mut r);
        s_one += weight_loss_with_draws(&one_hot, 1.0 / 32.0, depth, &cfg, &d)?.loss().unwrap_or(f64::NAN);
        let d = GumbelDraws::draw(n, cfg.n_samples, &mut r);
        s_bi += weight_loss_with_draws(&bimodal, 1.0 / 32.0, depth, &cfg, &d)?.loss().unwrap_or(f64::NAN);
    }
    let ratio_oracle = e_bi / e_one;
    let ratio_default = s_bi / s_one;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        dl == 0.0 && ratio_oracle >= 5.0 && ratio_default >= 5.0 && secs < 60.0,
        format!(
            "depth loss {dl:e}; weight loss one-hot {e_one:.4}, bimodal {e_bi:.4}, ratio {ratio_oracle:.2} (oracle, 10^6 samples), {ratio_default:.2} (default estimator) >= 5; {secs:.1}s"
        ),
    ))
}

// 6 and 8 ---------------------------------------------------------------

const TOY_ITERATIONS: u64 = 3000;
const TOY_SAMPLES: usize = 64;
const TOY_EVAL_RAYS: usize = 500;
const TOY_FRAME: usize = 1;
/// Regression thresholds pinned from the first full run.
const MODALITY_MARGIN: f64 = 1.5;
const PEAK_ACCURACY: f64 = 0.9;
const ROUGHNESS_REDUCTION: f64 = 0.05;

fn toy_config(lambdas: Lambdas) -> TrainConfig {
    TrainConfig {
        iterations: TOY_ITERATIONS,
        batch_size: 512,
        samples_per_ray: TOY_SAMPLES,
        lr_field: 0.05,
        lr_camera: 0.0,
        lr_focal: 0.0,
        lambdas,
        ..TrainConfig::default()
    }
}

struct ToyRun {
    trainer: Trainer,
    secs: f64,
}

fn toy_run(ds: &Dataset, lambdas: Lambdas) -> anyhow::Result<ToyRun> {
    let start = Instant::now();
    let cfg = toy_config(lambdas);
    let mut trainer = Trainer::new(ds, cfg)?;
    trainer.run(TOY_ITERATIONS, &mut std::io::sink())?;
    Ok(ToyRun { trainer, secs: start.elapsed().as_secs_f64() })
}

struct ToyRuns {
    ds: Dataset,
    spec: SceneSpec,
    rgb_depth: Option<ToyRun>,
}

impl ToyRuns {
    fn baseline(&mut self) -> anyhow::Result<&ToyRun> {
        if self.rgb_depth.is_none() {
            let l = Lambdas { weight: 0.0, density: 0.0, grad: 0.0, ..Lambdas::default() };
            self.rgb_depth = Some(toy_run(&self.ds, l)?);
        }
        Ok(self.rgb_depth.as_ref().expect("set above"))
    }
}

fn eval_pixels(spec: &SceneSpec, cam: &FrameCamera) -> anyhow::Result<Vec<(usize, usize)>> {
    let fg = foreground_pixels(spec, TOY_FRAME, cam)?;
    anyhow::ensure!(fg.len() >= TOY_EVAL_RAYS, "only {} foreground pixels", fg.len());
    Ok((0..TOY_EVAL_RAYS).map(|k| fg[k * fg.len() / TOY_EVAL_RAYS]).collect())
}

fn ddr_recovery(runs: &mut ToyRuns) -> Outcome {
    let ds = runs.ds.clone();
    let spec = runs.spec.clone();
    let ndc = ds.ndc()?;
    let cam = ds.cameras[TOY_FRAME];
    let pixels = eval_pixels(&spec, &cam)?;
    let gt = &ds.ndc_depths()?[TOY_FRAME];
    let depth_t: Vec<f64> = pixels.iter().map(|&(x, y)| gt.get(x, y)).collect();

    let base = runs.baseline()?;
    let base_report = unimodality(&base.trainer.field, &cam, &ndc, TOY_FRAME, &pixels, TOY_SAMPLES)?;
    let base_secs = base.secs;
    let l = Lambdas { grad: 0.0, ..Lambdas::default() };
    let ddr_run = toy_run(&ds, l)?;
    let ddr_report = unimodality(&ddr_run.trainer.field, &cam, &ndc, TOY_FRAME, &pixels, TOY_SAMPLES)?;

    let (m_base, m_ddr) = (base_report.mean_modality(), ddr_report.mean_modality());
    let acc = peak_accuracy(&ddr_report, &depth_t, TOY_SAMPLES, 2)?;
    let acc_base = peak_accuracy(&base_report, &depth_t, TOY_SAMPLES, 2)?;
    let margin = m_base - m_ddr;
    Ok((
        margin >= MODALITY_MARGIN && acc >= PEAK_ACCURACY,
        format!(
            "mean modality rgb+depth {m_base:.3} vs +DDR {m_ddr:.3}, margin {margin:.3} (>= {MODALITY_MARGIN}); peak within 2 bins {:.1}% with DDR (>= {:.0}%), {:.1}% without; {TOY_ITERATIONS} iters, runs {base_secs:.0}s + {:.0}s",
            100.0 * acc,
            100.0 * PEAK_ACCURACY,
            100.0 * acc_base,
            ddr_run.secs
        ),
    ))
}

fn grad_smoothing(runs: &mut ToyRuns) -> Outcome {
    let ds = runs.ds.clone();
    let ndc = ds.ndc()?;
    let cam = ds.cameras[TOY_FRAME];
    let bg = Vector3::zeros();
    let base = runs.baseline()?;
    let (_, d_base) = render_view(&base.trainer.field, &cam, &ndc, TOY_FRAME, TOY_SAMPLES, &bg)?;
    let l = Lambdas { weight: 0.0, density: 0.0, ..Lambdas::default() };
    let with_grad = toy_run(&ds, l)?;
    let (_, d_grad) = render_view(&with_grad.trainer.field, &cam, &ndc, TOY_FRAME, TOY_SAMPLES, &bg)?;
    let gt = depth_roughness(&ds.ndc_depths()?[TOY_FRAME])?;
    let (r_base, r_grad) = (depth_roughness(&d_base)?, depth_roughness(&d_grad)?);
    let reduction = 1.0 - r_grad / r_base;
    Ok((
        reduction >= ROUGHNESS_REDUCTION,
        format!(
            "mean |laplacian| of NDC depth: without L_grad {r_base:.5}, with {r_grad:.5}, reduction {:.1}% (>= {:.0}%); ground truth {gt:.5}; {:.0}s",
            100.0 * reduction,
            100.0 * ROUGHNESS_REDUCTION,
            with_grad.secs
        ),
    ))
}

// 7 ---------------------------------------------------------------------

fn camera_recovery() -> Outcome {
    let start = Instant::now();
    let spec = SceneSpec::two_spheres();
    let rig = Rig::default();
    let mut ds = generate(&spec, &rig)?;
    let ndc = ds.ndc()?;
    // a smooth ground-truth field; the sharp default bake leaves the
    // photometric loss almost flat away from silhouettes
    let gt = bake_grid(&spec, &ndc, &BakeOptions { sharpness: 1e4, clamp: 20.0, ..BakeOptions::default() })?;
    for (f, cam) in ds.cameras.iter().enumerate() {
        ds.images[f] = render_view(&gt, cam, &ndc, f, TOY_SAMPLES, &Vector3::zeros())?.0;
    }
    let reference = FrameCamera::new(rig.intrinsics()?, Pose::identity());
    let shift = 0.005 * mean_depth(&spec.field_at(0), &reference)?;
    let (rot_deg, focal_frac) = (0.5, 0.02);
    let mut r = NoiseKey::new(7, Purpose::Perturb, 0, 0).rng();
    let unit = |r: &mut ChaCha8Rng| loop {
        let v = Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            break v.normalize();
        }
    };
    let mut perturbed = Vec::new();
    for cam in &ds.cameras {
        let axis = unit(&mut r);
        let t = unit(&mut r) * shift;
        perturbed.push(perturb_camera(cam, &axis, rot_deg, &t, focal_frac)?);
    }
    let cfg = TrainConfig {
        iterations: 2000,
        batch_size: 512,
        samples_per_ray: TOY_SAMPLES,
        sampling: SamplingMode::Midpoint,
        lr_field: 0.0,
        lr_camera: 5e-4,
        lr_focal: 2e-2,
        lambdas: Lambdas { rgb: 1.0, ..Lambdas::zero() },
        ..TrainConfig::default()
    };
    let iterations = cfg.iterations;
    let before: Vec<_> = perturbed.iter().zip(&ds.cameras).map(|(p, t)| camera_error(p, t)).collect::<Result<_, _>>()?;
    let mut trainer = Trainer::with_field(&ds, cfg, gt, perturbed)?;
    trainer.run(iterations, &mut std::io::sink())?;
    let after: Vec<_> = trainer.cameras.iter().zip(&ds.cameras).map(|(p, t)| camera_error(p, t)).collect::<Result<_, _>>()?;
    let f = ds.cameras[0].intrinsics.f_init;
    let rot = after.iter().map(|e| e.rotation_deg).fold(0.0, f64::max);
    let trans = after.iter().map(|e| e.translation).fold(0.0, f64::max);
    let focal = after.iter().map(|e| e.focal).fold(0.0, f64::max);
    let (rot0, trans0, focal0) = (before[0].rotation_deg, before[0].translation, before[0].focal);
    let ok = rot <= 0.1 * rot_deg && trans <= 0.1 * shift && focal <= 0.1 * focal_frac * f;
    Ok((
        ok,
        format!(
            "worst residual error: rotation {rot:.4} deg (from {rot0:.3}, <= {:.3}), translation {trans:.5} (from {trans0:.4}, <= {:.5}), focal {focal:.4} px (from {focal0:.2}, <= {:.3}); {:.0}s",
            0.1 * rot_deg,
            0.1 * shift,
            0.1 * focal_frac * f,
            start.elapsed().as_secs_f64()
        ),
    ))
}

// 9 ---------------------------------------------------------------------

fn determinism() -> Outcome {
    let rig = Rig { width: 40, height: 30, focal: 40.0, ..Rig::default() };
    let ds = generate(&SceneSpec::two_spheres(), &rig)?;
    let cfg = TrainConfig {
        iterations: 25,
        batch_size: 128,
        samples_per_ray: 32,
        resolution: [16, 16, 16],
        ..TrainConfig::default()
    };
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir()).collect::<Result<_, _>>()?;
    train(&ds, &cfg, dirs[0].path(), None)?;
    train(&ds, &cfg, dirs[1].path(), None)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build()?;
    pool.install(|| train(&ds, &cfg, dirs[2].path(), None))?;
    let read = |i: usize, name: &str| std::fs::read(dirs[i].path().join(name));
    let mut same = true;
    for name in ["metrics.csv", "checkpoint.bin"] {
        let a = read(0, name)?;
        same &= a == read(1, name)? && a == read(2, name)?;
    }
    Ok((same, format!("metrics.csv and checkpoint.bin bitwise identical across 3 runs (1 run on a 3-worker pool): {same}")))
}

// 10 --------------------------------------------------------------------

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir()?;
    let rig = Rig { width: 24, height: 18, focal: 24.0, ..Rig::default() };
    let ds = generate(&SceneSpec::two_spheres(), &rig)?;
    ds.save(&dir.path().join("ds"))?;
    let back = Dataset::load(&dir.path().join("ds"))?;
    let img_err = ds
        .images
        .iter()
        .zip(&back.images)
        .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(p, q)| (p - q).amax()))
        .fold(0.0, f64::max);
    let depth_err = ds
        .depths
        .iter()
        .zip(&back.depths)
        .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(p, q)| ((p - q) / p).abs()))
        .fold(0.0, f64::max);
    let cams_ok = ds.cameras == back.cameras && ds.meta == back.meta;
    let dataset_ok = img_err <= 0.5 / 255.0 + 1e-12 && depth_err <= f32::EPSILON as f64 && cams_ok;

    let mut r = rng(10);
    let field = GridField::<f32>::random([5, 4, 3], Aabb::NDC, 2, (0.0, 3.0), (0.0, 1.0), &mut r)?;
    let mut cams = ds.cameras.clone();
    cams[1].residual.xi = [1e-3, 2e-3, -3e-3, 0.01, 0.02, -0.03];
    cams[2].intrinsics.delta_f = -0.7;
    let mut ck = Checkpoint::bare(field, cams);
    ck.ndc = Some(ds.ndc()?);
    ck.iteration = 17;
    let path = dir.path().join("ck.bin");
    ck.save(&path)?;
    let ck_ok = Checkpoint::load(&path)? == ck;

    let gt = bake_grid(&SceneSpec::two_spheres(), &ds.ndc()?, &BakeOptions { resolution: [16, 16, 16], ..BakeOptions::default() })?;
    let map = weight_map(&gt, &ds.cameras[0], &ds.ndc()?, 0, 9, 32)?;
    let pgm = dir.path().join("w.pgm");
    export_pgm(&map, &pgm)?;
    let gray = GrayImage::load_pgm(&pgm)?;
    let norm = map.normalized();
    let mut pgm_err: f64 = 0.0;
    for x in 0..map.width {
        for i in 0..map.samples {
            let v = gray.data[i * map.width + x] as f64 / 255.0;
            pgm_err = pgm_err.max((v - norm[x * map.samples + i]).abs());
        }
    }
    let pfm = dir.path().join("d.pfm");
    let mut depth = DepthMap::new(7, 5, 0.0);
    for (i, v) in depth.data.iter_mut().enumerate() {
        *v = (i as f64 * 0.37).sin() as f32 as f64;
    }
    depth.save_pfm(&pfm)?;
    let pfm_ok = DepthMap::load_pfm(&pfm)? == depth;
    let png = dir.path().join("c.png");
    let img = ColorImage::new(3, 2, Vector3::new(0.2, 0.5, 0.9));
    img.save_png(&png)?;
    let png_err = ColorImage::load_png(&png)?.data.iter().map(|p| (p - Vector3::new(0.2, 0.5, 0.9)).amax()).fold(0.0, f64::max);

    let ok = dataset_ok && ck_ok && pgm_err <= 0.5 / 255.0 + 1e-12 && pfm_ok && png_err <= 0.5 / 255.0;
    Ok((
        ok,
        format!(
            "dataset images {img_err:.2e} (<= 0.5/255), depths rel {depth_err:.1e} (<= f32 eps), cameras {cams_ok}; checkpoint exact {ck_ok}; pgm {pgm_err:.2e} (<= 0.5/255); pfm exact {pfm_ok}; png {png_err:.2e}"
        ),
    ))
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let spec = SceneSpec::two_spheres();
    let mut toy = None;
    let toy_runs = |spec: &SceneSpec| -> anyhow::Result<ToyRuns> {
        Ok(ToyRuns { ds: generate(spec, &Rig::default())?, spec: spec.clone(), rgb_depth: None })
    };
    let mut failed = 0;
    let names = [
        "gradient suite",
        "conservation",
        "gumbel correctness",
        "mixture correctness",
        "shape vs expectation",
        "toy DDR recovery",
        "camera residual recovery",
        "gradient-loss smoothing",
        "determinism",
        "format round-trips",
    ];
    for n in 1..=10 {
        if !selected(n) {
            continue;
        }
        if (n == 6 || n == 8) && toy.is_none() {
            match toy_runs(&spec) {
                Ok(t) => toy = Some(t),
                Err(e) => {
                    println!("FAIL {n:>2} {}: {e:#}", names[n - 1]);
                    failed += 1;
                    continue;
                }
            }
        }
        let outcome = match n {
            1 => gradient_suite(),
            2 => conservation(),
            3 => gumbel(),
            4 => mixture(),
            5 => shape_vs_expectation(),
            6 => ddr_recovery(toy.as_mut().expect("prepared")),
            7 => camera_recovery(),
            8 => grad_smoothing(toy.as_mut().expect("prepared")),
            9 => determinism(),
            _ => round_trips(),
        };
        let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e:#}")));
        println!("{} {n:>2} {}: {detail}", if ok { "PASS" } else { "FAIL" }, names[n - 1]);
        if !ok {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
