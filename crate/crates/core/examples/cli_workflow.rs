//! The command-line workflow driven from code: resolve a configuration with
//! overrides, generate a dataset, fit, render and evaluate. Each step writes
//! a manifest describing its outputs.
//!
//! `cargo run --example cli_workflow [OUT_DIR]`

use std::path::PathBuf;

use ddr::commands;
use ddr::config::RunConfig;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ddr-cli-workflow"));
    let overrides: Vec<String> = [
        "rig.width=48",
        "rig.height=36",
        "rig.focal=48.0",
        "iterations=300",
        "batch_size=256",
        "samples_per_ray=48",
        "resolution=[32,32,32]",
        "render.samples=48",
        "ddr.epsilon=1.0",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let cfg = RunConfig::resolve(None, &overrides)?;

    let data = out.join("data");
    let m = commands::gen_scene(&cfg, &data, true)?;
    println!("gen-scene: {} artifacts", m.artifacts.len());

    let fit_dir = out.join("fit");
    let (_, outputs) = commands::fit(&cfg, &fit_dir, Some(&data), None)?;
    println!("fit: {} iterations, checkpoint {}", outputs.iterations, outputs.checkpoint.display());

    let m = commands::render(&cfg, &outputs.checkpoint, &out.join("render"), Some(0))?;
    println!("render: {:?}", m.artifacts.iter().map(|a| a.path.display().to_string()).collect::<Vec<_>>());

    for (name, ckpt) in [("fitted", outputs.checkpoint.clone()), ("ground truth", data.join("gt.bin"))] {
        let (_, r) = commands::eval(&cfg, &ckpt, Some(&data), &out.join("eval"))?;
        println!("eval {name}: PSNR {:.2} SSIM {:.4} modality {:.3}", r.mean_psnr, r.mean_ssim, r.mean_modality);
    }
    Ok(())
}
