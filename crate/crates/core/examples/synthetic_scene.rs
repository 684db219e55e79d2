//! Generate the two-sphere scene, save it as a dataset, bake the ground-truth
//! grid and check how closely the grid reproduces the traced frames.
//!
//! `cargo run --example synthetic_scene [OUT_DIR]`

use std::path::PathBuf;

use ddr::metrics::psnr;
use ddr::scene::{bake_grid, generate, BakeOptions, Dataset, Rig, SceneSpec};
use ddr::viz::render_view;
use nalgebra::Vector3;

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("ddr-synthetic-scene"));
    let spec = SceneSpec::two_spheres();
    let rig = Rig::default();
    let ds = generate(&spec, &rig)?;
    ds.save(&out)?;
    println!("{} frames of {}x{} written to {}", ds.frame_count(), ds.meta.width, ds.meta.height, out.display());

    let back = Dataset::load(&out)?;
    assert_eq!(back.cameras, ds.cameras);

    let ndc = ds.ndc()?;
    let grid = bake_grid(&spec, &ndc, &BakeOptions::default())?;
    for (f, cam) in ds.cameras.iter().enumerate() {
        let (img, _) = render_view(&grid, cam, &ndc, f, 128, &Vector3::zeros())?;
        println!("frame {f}: baked grid PSNR {:.2} dB", psnr(&img, &ds.images[f])?);
    }
    Ok(())
}
