//! Render a baked grid and inspect its rendering weights: a color/depth
//! pair, a per-row weight map image and the peak statistics of a few rays.
//!
//! `cargo run --example weight_map [OUT_DIR]`

use std::path::PathBuf;

use ddr::scene::{bake_grid, foreground_pixels, generate, BakeOptions, Rig, SceneSpec};
use ddr::viz::{export_pgm, render_pixel, render_view, unimodality, weight_map};
use nalgebra::Vector3;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ddr-weight-map"));
    std::fs::create_dir_all(&out)?;
    let spec = SceneSpec::two_spheres();
    let rig = Rig::default();
    let ds = generate(&spec, &rig)?;
    let ndc = ds.ndc()?;
    let grid = bake_grid(&spec, &ndc, &BakeOptions::default())?;
    let cam = &ds.cameras[0];
    let samples = 128;

    let (img, depth) = render_view(&grid, cam, &ndc, 0, samples, &Vector3::zeros())?;
    img.save_png(&out.join("render.png"))?;
    depth.save_pfm(&out.join("depth.pfm"))?;

    let row = rig.height / 2;
    let map = weight_map(&grid, cam, &ndc, 0, row, samples)?;
    export_pgm(&map, &out.join("weights.pgm"))?;
    println!("weight map of row {row}: {} columns x {} samples, peak weight {:.3}", map.width, samples, map.max);

    let (x, y) = foreground_pixels(&spec, 0, cam)?[0];
    let r = render_pixel(&grid, cam, &ndc, 0, (x, y), samples, &Vector3::zeros())?;
    println!("pixel ({x}, {y}): depth {:.4}, weight mass {:.4}", r.depth, r.weights.total());

    let pixels: Vec<_> = (0..rig.height).step_by(6).flat_map(|y| (0..rig.width).step_by(6).map(move |x| (x, y))).collect();
    let report = unimodality(&grid, cam, &ndc, 0, &pixels, samples)?;
    println!(
        "{} rays: mean modality {:.3}, mean mass within the peak window {:.3}",
        pixels.len(),
        report.mean_modality(),
        report.mean_mass_ratio()
    );
    println!("outputs in {}", out.display());
    Ok(())
}
