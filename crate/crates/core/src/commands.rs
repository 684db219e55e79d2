//! Implementations behind the command-line verbs. Every command writes its
//! outputs under one directory together with a `manifest.json`.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::field::GridField;
use crate::geometry::{FrameCamera, NdcFrame};
use crate::gradcheck::{run_gradcheck, GradcheckSummary};
use crate::io::write_json;
use crate::metrics::{psnr, ssim};
use crate::scene::{bake_grid, generate, Dataset};
use crate::train::{train, TrainOutputs};
use crate::viz::{export_pgm, peak_accuracy, render_view, unimodality, weight_map, UnimodalityReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub artifacts: Vec<Artifact>,
    pub parameters: Value,
}

impl Manifest {
    fn new(command: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            artifacts: Vec::new(),
            parameters: serde_json::to_value(cfg)?,
        })
    }

    fn add(&mut self, path: impl Into<PathBuf>, kind: &str) {
        self.artifacts.push(Artifact {
            path: path.into(),
            kind: kind.into(),
        });
    }

    fn write(mut self, out: &Path, extra: Option<(&str, Value)>) -> Result<Self> {
        if let (Some((key, v)), Value::Object(m)) = (extra, &mut self.parameters) {
            m.insert(key.into(), v);
        }
        write_json(&out.join("manifest.json"), &self)?;
        Ok(self)
    }
}

/// Load a dataset from `data`, or synthesize one from the configured scene.
pub fn dataset(cfg: &RunConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(dir) => Dataset::load(dir),
        None => generate(&cfg.scene, &cfg.rig),
    }
}

/// Write the synthetic dataset, and optionally the ground-truth grid as a
/// checkpoint.
pub fn gen_scene(cfg: &RunConfig, out: &Path, bake: bool) -> Result<Manifest> {
    let ds = generate(&cfg.scene, &cfg.rig)?;
    ds.save(out)?;
    let mut m = Manifest::new("gen-scene", cfg)?;
    for f in 0..ds.frame_count() {
        m.add(format!("frames/{f:03}.png"), "image");
        m.add(format!("depth/{f:03}.pfm"), "depth");
    }
    m.add("cameras.json", "cameras");
    m.add("meta.json", "meta");
    if bake {
        let ndc = ds.ndc()?;
        let mut ck = Checkpoint::bare(bake_grid(&cfg.scene, &ndc, &cfg.bake)?, ds.cameras.clone());
        ck.ndc = Some(ndc);
        ck.save(&out.join("gt.bin"))?;
        m.add("gt.bin", "checkpoint");
    }
    m.write(out, None)
}

pub fn fit(cfg: &RunConfig, out: &Path, data: Option<&Path>, resume: Option<&Path>) -> Result<(Manifest, TrainOutputs)> {
    let ds = dataset(cfg, data)?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    let outputs = train(&ds, &cfg.train, out, resume)?;
    let mut m = Manifest::new("fit", cfg)?;
    m.add("checkpoint.bin", "checkpoint");
    m.add("metrics.csv", "metrics");
    m.add("config.resolved.json", "config");
    let m = m.write(out, None)?;
    Ok((m, outputs))
}

/// A checkpoint's field, cameras and reconstruction frame.
pub fn load_model(path: &Path, fallback: &RunConfig) -> Result<(GridField<f32>, Vec<FrameCamera>, NdcFrame)> {
    let ck = Checkpoint::load(path)?;
    let ndc = match ck.ndc {
        Some(n) => n,
        None => fallback.rig.ndc()?,
    };
    if ck.cameras.is_empty() {
        return Err(Error::InvalidScene(format!("{} holds no cameras", path.display())));
    }
    Ok((ck.field, ck.cameras, ndc))
}

fn frames(requested: Option<usize>, count: usize) -> Result<Vec<usize>> {
    match requested {
        Some(f) if f >= count => Err(Error::FrameOutOfRange {
            frame: f,
            frame_count: count,
        }),
        Some(f) => Ok(vec![f]),
        None => Ok((0..count).collect()),
    }
}

/// Render color (PNG) and NDC depth (PFM) for the requested frames.
pub fn render(cfg: &RunConfig, checkpoint: &Path, out: &Path, frame: Option<usize>) -> Result<Manifest> {
    let (field, cameras, ndc) = load_model(checkpoint, cfg)?;
    let bg = Vector3::from(cfg.train.background);
    let mut m = Manifest::new("render", cfg)?;
    for f in frames(frame, cameras.len())? {
        let (img, depth) = render_view(&field, &cameras[f], &ndc, f, cfg.render.samples, &bg)?;
        img.save_png(&out.join(format!("render_{f:03}.png")))?;
        depth.save_pfm(&out.join(format!("depth_{f:03}.pfm")))?;
        m.add(format!("render_{f:03}.png"), "image");
        m.add(format!("depth_{f:03}.pfm"), "depth");
    }
    m.write(out, None)
}

pub fn weightmap(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Manifest> {
    let (field, cameras, ndc) = load_model(checkpoint, cfg)?;
    let f = frames(Some(cfg.render.frame), cameras.len())?[0];
    let cam = &cameras[f];
    let row = cfg.render.row.unwrap_or(cam.intrinsics.height / 2);
    let map = weight_map(&field, cam, &ndc, f, row, cfg.render.samples)?;
    let name = format!("weights_f{f:03}_r{row:03}.pgm");
    export_pgm(&map, &out.join(&name))?;
    let mut m = Manifest::new("weightmap", cfg)?;
    m.add(name, "weightmap");
    let note = serde_json::json!({"normalization": "per-map max", "max": map.max, "row": row, "frame": f});
    m.write(out, Some(("weightmap", note)))
}

pub fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<(Manifest, GradcheckSummary)> {
    let summary = run_gradcheck(&cfg.gradcheck)?;
    write_json(&out.join("gradcheck.json"), &summary)?;
    let mut m = Manifest::new("gradcheck", cfg)?;
    m.add("gradcheck.json", "report");
    Ok((m.write(out, None)?, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameScores>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub unimodality: UnimodalityReport,
    pub mean_modality: f64,
    pub mean_mass_ratio: f64,
    /// Fraction of rays whose weight peak is within 2 bins of the
    /// ground-truth depth.
    pub peak_accuracy: f64,
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, data: Option<&Path>, out: &Path) -> Result<(Manifest, EvalReport)> {
    let ds = dataset(cfg, data)?;
    let (field, cameras, ndc) = load_model(checkpoint, cfg)?;
    crate::error::check_len("checkpoint/dataset frames", cameras.len(), ds.frame_count())?;
    let bg = Vector3::from(cfg.train.background);
    let samples = cfg.render.samples;
    let mut scores = Vec::with_capacity(cameras.len());
    for (f, cam) in cameras.iter().enumerate() {
        let (img, _) = render_view(&field, cam, &ndc, f, samples, &bg)?;
        scores.push(FrameScores {
            frame: f,
            psnr: psnr(&img, &ds.images[f])?,
            ssim: ssim(&img, &ds.images[f])?,
        });
    }
    let f = frames(Some(cfg.render.frame), cameras.len())?[0];
    let (w, h) = (ds.meta.width, ds.meta.height);
    let stride = cfg.eval.stride;
    let pixels: Vec<(usize, usize)> = (0..h)
        .step_by(stride)
        .flat_map(|y| (0..w).step_by(stride).map(move |x| (x, y)))
        .collect();
    let report = unimodality(&field, &cameras[f], &ndc, f, &pixels, samples)?;
    let gt = &ds.ndc_depths()?[f];
    let depth_t: Vec<f64> = pixels.iter().map(|&(x, y)| gt.get(x, y)).collect();
    let n = scores.len() as f64;
    let result = EvalReport {
        mean_psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
        frames: scores,
        mean_modality: report.mean_modality(),
        mean_mass_ratio: report.mean_mass_ratio(),
        peak_accuracy: peak_accuracy(&report, &depth_t, samples, 2)?,
        unimodality: report,
    };
    write_json(&out.join("eval.json"), &result)?;
    let mut m = Manifest::new("eval", cfg)?;
    m.add("eval.json", "report");
    Ok((m.write(out, None)?, result))
}
