//! The distribution-based depth losses on hand-built weight profiles: a
//! single peak at the true depth, the same peak shifted, and a split
//! (bimodal) profile whose composite depth is still correct.
//!
//! `cargo run --example ddr_losses`

use ddr::ddr::{density_loss, gumbel_noise, gumbel_softmax, weight_loss, DensityLossConfig, GumbelConfig};
use ddr::geometry::Ray;
use ddr::render::{composite_depth, stratified_sample, SamplingMode, WeightDistribution};
use ddr::rng::{open_unit, NoiseKey, Purpose};
use nalgebra::Vector3;

fn bump(t: &[f64], center: f64, width: f64, mass: f64) -> Vec<f64> {
    let raw: Vec<f64> = t.iter().map(|x| (-0.5 * ((x - center) / width).powi(2)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| mass * v / s).collect()
}

fn main() -> anyhow::Result<()> {
    let ray = Ray::new(Vector3::zeros(), Vector3::z(), 0.0, 1.0)?;
    let mut rng = NoiseKey::new(0, Purpose::Eval, 0, 0).rng();
    let sampling = stratified_sample(&ray, 64, SamplingMode::Midpoint, &mut rng)?;
    let half_width = sampling.bin_width() / 2.0;
    let depth_gt = 0.5;

    let t = &sampling.t;
    let split: Vec<f64> = bump(t, 0.3, 0.02, 0.45).iter().zip(bump(t, 0.7, 0.02, 0.45)).map(|(a, b)| a + b).collect();
    let profiles = [
        ("peak at the true depth", bump(t, depth_gt, 0.02, 0.9)),
        ("peak shifted by 0.1", bump(t, depth_gt + 0.1, 0.02, 0.9)),
        ("two peaks around the true depth", split),
    ];
    let gumbel = GumbelConfig::default();
    for (name, w) in profiles {
        let dist = WeightDistribution::new(t.clone(), w)?;
        let mut loss_rng = NoiseKey::new(0, Purpose::Gumbel, 0, 0).rng();
        let wl = weight_loss(&dist, half_width, depth_gt, &gumbel, &mut loss_rng)?;
        println!(
            "{name:<32} expected depth {:.3}  weight loss {:.4}",
            composite_depth(&dist) / dist.total(),
            wl.loss().unwrap_or(f64::NAN)
        );
    }

    // the relaxed sample sharpens toward one bin as the temperature drops
    let w = bump(t, depth_gt, 0.05, 1.0);
    let mut noise_rng = NoiseKey::new(1, Purpose::Gumbel, 0, 0).rng();
    let g: Vec<f64> = (0..w.len()).map(|_| gumbel_noise(open_unit(&mut noise_rng))).collect::<Result<_, _>>()?;
    for eps in [2.0, 0.5, 0.1, 0.01] {
        let s = gumbel_softmax(&w, &g, eps)?;
        println!("epsilon {eps:<5} largest relaxed weight {:.3}", s.iter().cloned().fold(0.0, f64::max));
    }

    // density in front of the surface is penalized, density behind it is not
    let mut sigma = vec![0.0; t.len()];
    sigma[10] = 3.0;
    sigma[50] = 3.0;
    let (loss, grad) = density_loss(&sampling, &sigma, depth_gt, &DensityLossConfig::default())?;
    println!("density loss {loss:.1}; penalized samples {}", grad.iter().filter(|g| **g > 0.0).count());
    Ok(())
}
