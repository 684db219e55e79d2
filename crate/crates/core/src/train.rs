//! Joint optimization of a grid field and per-frame camera residuals.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{CameraMoments, Checkpoint};
use crate::ddr::{DensityLossConfig, GumbelConfig};
use crate::error::{check_len, Error, Result};
use crate::field::{Aabb, GridField, RadianceField, Scalar};
use crate::geometry::FrameCamera;
use crate::grad::{evaluate_batch, Batch, GradientBuffer, PipelineConfig, RayItem};
use crate::io::{ColorImage, DepthMap};
use crate::losses::{Lambdas, LossBundle};
use crate::render::SamplingMode;
use crate::rng::{NoiseKey, Purpose};
use crate::scene::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Both regularizer settings under one `ddr` section.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DdrConfig {
    #[serde(flatten)]
    pub gumbel: GumbelConfig,
    #[serde(flatten)]
    pub density: DensityLossConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: u64,
    /// Rays per batch; a multiple of `run_length`.
    pub batch_size: usize,
    /// Horizontally adjacent pixels per run.
    pub run_length: usize,
    pub samples_per_ray: usize,
    /// Field learning rate; 0 freezes the field.
    pub lr_field: f64,
    /// Pose residual learning rate; 0 freezes the poses.
    pub lr_camera: f64,
    /// Focal residual learning rate, in pixels.
    pub lr_focal: f64,
    pub adam: AdamParams,
    #[serde(rename = "loss")]
    pub lambdas: Lambdas,
    pub ddr: DdrConfig,
    pub sampling: SamplingMode,
    pub background: [f64; 3],
    pub resolution: [usize; 3],
    /// One grid per frame instead of a single static grid.
    pub time_conditioned: bool,
    /// Initial raw density, `(center, spread)`.
    pub init_sigma: (f64, f64),
    /// Initial raw color, `(center, spread)`.
    pub init_color: (f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 1024,
            run_length: 32,
            samples_per_ray: 128,
            lr_field: 0.05,
            lr_camera: 1e-3,
            lr_focal: 1e-2,
            adam: AdamParams::default(),
            lambdas: Lambdas::default(),
            ddr: DdrConfig::default(),
            sampling: SamplingMode::Jitter,
            background: [0.0; 3],
            resolution: [64, 64, 64],
            time_conditioned: false,
            init_sigma: (-2.0, 0.1),
            init_color: (0.0, 0.1),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return fail("iterations must be >= 1".into());
        }
        if self.run_length == 0 || self.batch_size == 0 || self.batch_size % self.run_length != 0 {
            return fail(format!(
                "batch_size {} must be a positive multiple of run_length {}",
                self.batch_size, self.run_length
            ));
        }
        let rates = [self.lr_field, self.lr_camera, self.lr_focal];
        if !rates.iter().all(|r| *r >= 0.0 && r.is_finite()) || rates.iter().all(|r| *r == 0.0) {
            return fail(format!("learning rates {rates:?} must be >= 0 and not all 0"));
        }
        let a = &self.adam;
        if !(a.beta1 >= 0.0 && a.beta1 < 1.0 && a.beta2 >= 0.0 && a.beta2 < 1.0 && a.epsilon > 0.0) {
            return fail(format!("invalid Adam constants {a:?}"));
        }
        if self.samples_per_ray < 2 {
            return fail("samples_per_ray must be >= 2".into());
        }
        self.lambdas.validate()?;
        self.ddr.gumbel.validate()
    }
}

/// Adam moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T: Scalar> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![T::from_f64(0.0); n],
            v: vec![T::from_f64(0.0); n],
        }
    }
}

/// Bias-corrected Adam update of `params` in place. `step` counts from 1.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[f64],
    moments: &mut Moments<T>,
    step: u64,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    adam_step_with(params, grads, moments, step, |_| lr, hp)
}

/// [`adam_step`] with a learning rate per parameter index.
pub fn adam_step_with<T: Scalar>(
    params: &mut [T],
    grads: &[f64],
    moments: &mut Moments<T>,
    step: u64,
    lr: impl Fn(usize) -> f64,
    hp: &AdamParams,
) -> Result<()> {
    check_len("params/grads", params.len(), grads.len())?;
    check_len("params/first moments", params.len(), moments.m.len())?;
    check_len("params/second moments", params.len(), moments.v.len())?;
    if step == 0 {
        return Err(Error::Config("Adam step counts from 1".into()));
    }
    let bc1 = 1.0 - hp.beta1.powi(step as i32);
    let bc2 = 1.0 - hp.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = hp.beta1 * moments.m[i].to_f64() + (1.0 - hp.beta1) * g;
        let v = hp.beta2 * moments.v[i].to_f64() + (1.0 - hp.beta2) * g * g;
        moments.m[i] = T::from_f64(m);
        moments.v[i] = T::from_f64(v);
        let update = lr(i) * (m / bc1) / ((v / bc2).sqrt() + hp.epsilon);
        params[i] = T::from_f64(params[i].to_f64() - update);
    }
    Ok(())
}

/// Full optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub sigma: Moments<f32>,
    pub color: Moments<f32>,
    pub cameras: Moments<f64>,
}

impl AdamState {
    pub fn new(field: &GridField<f32>, camera_count: usize) -> Self {
        Self {
            step: 0,
            sigma: Moments::zeros(field.sigma.len()),
            color: Moments::zeros(field.color.len()),
            cameras: Moments::zeros(7 * camera_count),
        }
    }
}

/// Training state over one dataset.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub field: GridField<f32>,
    pub cameras: Vec<FrameCamera>,
    pub adam: AdamState,
    pub iteration: u64,
    images: Vec<ColorImage>,
    depths: Vec<DepthMap>,
    pipeline: PipelineConfig,
}

impl Trainer {
    /// Fresh field and zero residuals on the dataset's cameras.
    pub fn new(dataset: &Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let frames = if cfg.time_conditioned {
            dataset.frame_count()
        } else {
            1
        };
        let mut rng = NoiseKey::new(cfg.seed, Purpose::Init, 0, 0).rng();
        let field = GridField::random(cfg.resolution, Aabb::NDC, frames, cfg.init_sigma, cfg.init_color, &mut rng)?;
        Self::with_field(dataset, cfg, field, dataset.cameras.clone())
    }

    /// Start from a given field and cameras, with fresh optimizer state.
    pub fn with_field(
        dataset: &Dataset,
        cfg: TrainConfig,
        field: GridField<f32>,
        cameras: Vec<FrameCamera>,
    ) -> Result<Self> {
        cfg.validate()?;
        dataset.validate()?;
        check_len("cameras/frames", cameras.len(), dataset.frame_count())?;
        if field.frame_count() != 1 && field.frame_count() != dataset.frame_count() {
            return Err(Error::InvalidField(format!(
                "field has {} frames, dataset has {}",
                field.frame_count(),
                dataset.frame_count()
            )));
        }
        if cfg.run_length > dataset.meta.width {
            return Err(Error::Config(format!(
                "run_length {} exceeds image width {}",
                cfg.run_length, dataset.meta.width
            )));
        }
        let pipeline = PipelineConfig {
            samples_per_ray: cfg.samples_per_ray,
            sampling: cfg.sampling,
            background: cfg.background,
            lambdas: cfg.lambdas,
            ddr: cfg.ddr.gumbel,
            density: cfg.ddr.density,
            ndc: dataset.ndc()?,
            camera_grad: cfg.lr_camera > 0.0 || cfg.lr_focal > 0.0,
        };
        let adam = AdamState::new(&field, cameras.len());
        Ok(Self {
            images: dataset.images.clone(),
            depths: dataset.ndc_depths()?,
            field,
            cameras,
            adam,
            iteration: 0,
            cfg,
            pipeline,
        })
    }

    /// Resume from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(dataset: &Dataset, cfg: TrainConfig, ck: Checkpoint) -> Result<Self> {
        let mut t = Self::with_field(dataset, cfg, ck.field, ck.cameras)?;
        t.iteration = ck.iteration;
        t.adam.step = ck.adam_step;
        if let Some([ms, vs, mc, vc]) = ck.field_moments {
            t.adam.sigma = Moments { m: ms, v: vs };
            t.adam.color = Moments { m: mc, v: vc };
        }
        let n = t.cameras.len();
        if ck.camera_moments.m.len() == n && ck.camera_moments.v.len() == n {
            t.adam.cameras = Moments {
                m: ck.camera_moments.m.iter().flatten().copied().collect(),
                v: ck.camera_moments.v.iter().flatten().copied().collect(),
            };
        }
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let a = &self.adam;
        let split = |v: &[f64]| v.chunks_exact(7).map(|c| std::array::from_fn(|i| c[i])).collect();
        Checkpoint {
            field: self.field.clone(),
            cameras: self.cameras.clone(),
            iteration: self.iteration,
            adam_step: a.step,
            field_moments: Some([a.sigma.m.clone(), a.sigma.v.clone(), a.color.m.clone(), a.color.v.clone()]),
            camera_moments: CameraMoments {
                m: split(&a.cameras.m),
                v: split(&a.cameras.v),
            },
            ndc: Some(self.pipeline.ndc),
        }
    }

    pub fn pipeline(&self) -> &PipelineConfig {
        &self.pipeline
    }

    /// Draw the batch for `iteration`: runs of adjacent pixels with uniform
    /// frame, row and start column.
    pub fn batch(&self, iteration: u64) -> Batch {
        let mut rng = NoiseKey::new(self.cfg.seed, Purpose::Batch, iteration, 0).rng();
        let (w, h) = (self.images[0].width, self.images[0].height);
        let len = self.cfg.run_length;
        let runs = (0..self.cfg.batch_size / len)
            .map(|_| {
                let frame = rng.random_range(0..self.images.len());
                let y = rng.random_range(0..h);
                let x0 = rng.random_range(0..=w - len);
                (x0..x0 + len)
                    .map(|x| RayItem {
                        frame,
                        pixel: Vector2::new(x as f64 + 0.5, y as f64 + 0.5),
                        color: self.images[frame].get(x, y),
                        depth: self.depths[frame].get(x, y),
                    })
                    .collect()
            })
            .collect();
        Batch { runs }
    }

    /// Losses and gradients at the current parameters for `iteration`'s batch.
    pub fn evaluate(&self, iteration: u64, with_grad: bool) -> Result<(LossBundle, Option<GradientBuffer>)> {
        let batch = self.batch(iteration);
        let out = evaluate_batch(
            &self.field,
            &self.cameras,
            &batch,
            &self.pipeline,
            self.cfg.seed,
            iteration,
            with_grad,
        )?;
        Ok((out.losses, out.grad))
    }

    /// One optimization step. Parameters are left untouched when the loss or
    /// gradient is not finite.
    pub fn step(&mut self) -> Result<LossBundle> {
        let (losses, grad) = self.evaluate(self.iteration, true)?;
        let grad = grad.ok_or(Error::MissingCache("gradient"))?;
        let finite = grad.field.sigma.iter().chain(&grad.field.color).all(|g| g.is_finite())
            && grad
                .cameras
                .iter()
                .all(|c| c.xi.iter().all(|g| g.is_finite()) && c.delta_f.is_finite());
        if !finite {
            return Err(Error::NonFiniteLoss { component: "gradient" });
        }
        self.adam.step += 1;
        let (step, hp, lr) = (self.adam.step, self.cfg.adam, self.cfg.lr_field);
        if lr > 0.0 {
            adam_step(&mut self.field.sigma, &grad.field.sigma, &mut self.adam.sigma, step, lr, &hp)?;
            adam_step(&mut self.field.color, &grad.field.color, &mut self.adam.color, step, lr, &hp)?;
        }
        if self.pipeline.camera_grad {
            let n = self.cameras.len();
            let mut params: Vec<f64> = Vec::with_capacity(7 * n);
            let mut grads: Vec<f64> = Vec::with_capacity(7 * n);
            for (c, g) in self.cameras.iter().zip(&grad.cameras) {
                params.extend_from_slice(&c.residual.xi);
                params.push(c.intrinsics.delta_f);
                grads.extend_from_slice(&g.xi);
                grads.push(g.delta_f);
            }
            let (lr_pose, lr_focal) = (self.cfg.lr_camera, self.cfg.lr_focal);
            let rate = |k: usize| if k % 7 == 6 { lr_focal } else { lr_pose };
            adam_step_with(&mut params, &grads, &mut self.adam.cameras, step, rate, &hp)?;
            for (c, p) in self.cameras.iter_mut().zip(params.chunks_exact(7)) {
                c.residual.xi.copy_from_slice(&p[..6]);
                c.intrinsics.delta_f = p[6];
            }
        }
        self.iteration += 1;
        Ok(losses)
    }

    /// Run `iterations` steps, streaming one CSV line per step to `log`.
    /// On a non-finite loss the error carries the failing iteration and
    /// the parameters stay at their last good values.
    pub fn run<W: Write>(&mut self, iterations: u64, log: &mut W) -> Result<Vec<LossBundle>> {
        let mut history = Vec::with_capacity(iterations as usize);
        for _ in 0..iterations {
            let it = self.iteration;
            let losses = self.step().map_err(|e| match e {
                e @ Error::NonFiniteLoss { .. } => Error::TrainingAborted {
                    iteration: it as usize,
                    source: Box::new(e),
                },
                e => e,
            })?;
            writeln!(log, "{}", csv_line(it, &losses)).map_err(|e| Error::io("metrics log", e))?;
            history.push(losses);
        }
        Ok(history)
    }
}

pub const CSV_HEADER: &str = "iteration,rgb,depth,weight,density,grad,total";

pub fn csv_line(iteration: u64, l: &LossBundle) -> String {
    format!(
        "{iteration},{},{},{},{},{},{}",
        l.rgb, l.depth, l.weight, l.density, l.grad, l.total
    )
}

/// Files written by [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub config: PathBuf,
    pub iterations: u64,
    pub final_losses: Option<LossBundle>,
}

/// Train from scratch (or from `resume`) and write `checkpoint.bin`,
/// `metrics.csv` and `config.resolved.json` under `out`. A non-finite loss
/// still writes the last good checkpoint before returning the error.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, out: &Path, resume: Option<Checkpoint>) -> Result<TrainOutputs> {
    let mut trainer = match resume {
        Some(ck) => Trainer::resume(dataset, cfg.clone(), ck)?,
        None => Trainer::new(dataset, cfg.clone())?,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config = out.join("config.resolved.json");
    crate::io::write_json(&config, cfg)?;
    let metrics = out.join("metrics.csv");
    let file = File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
    let mut log = BufWriter::new(file);
    writeln!(log, "{CSV_HEADER}").map_err(|e| Error::io(&metrics, e))?;
    let remaining = cfg.iterations.saturating_sub(trainer.iteration);
    let result = trainer.run(remaining, &mut log);
    log.flush().map_err(|e| Error::io(&metrics, e))?;
    let checkpoint = out.join("checkpoint.bin");
    trainer.checkpoint().save(&checkpoint)?;
    let history = result?;
    Ok(TrainOutputs {
        checkpoint,
        metrics,
        config,
        iterations: trainer.iteration,
        final_losses: history.last().copied(),
    })
}

/// Background color as a vector.
pub fn background(cfg: &TrainConfig) -> Vector3<f64> {
    Vector3::from(cfg.background)
}
