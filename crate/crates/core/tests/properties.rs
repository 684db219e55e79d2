//! Randomized invariants of the rendering and regularization primitives.

use ddr::config::parse_override;
use ddr::ddr::{floor_and_normalize, gumbel_softmax, sample_triangle};
use ddr::geometry::{so3_exp, NdcFrame, PinholeCamera};
use ddr::render::{composite_depth, compute_weights, WeightDistribution};
use ddr::viz::ray_modality;
use nalgebra::Vector3;
use proptest::prelude::*;

fn densities() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..64).prop_flat_map(|n| (prop::collection::vec(0.0..50.0f64, n), prop::collection::vec(1e-4..0.1f64, n)))
}

proptest! {
    #[test]
    fn weights_and_residual_conserve_mass((sigma, delta) in densities()) {
        let w = compute_weights(&sigma, &delta).unwrap();
        prop_assert!(w.w.iter().all(|v| *v >= 0.0));
        prop_assert!(w.transmittance.windows(2).all(|p| p[1] <= p[0]));
        let total: f64 = w.w.iter().sum::<f64>() + w.residual;
        prop_assert!((total - 1.0).abs() < 1e-12, "sum {total}");
    }

    #[test]
    fn composite_depth_lies_within_the_samples((sigma, delta) in densities()) {
        let w = compute_weights(&sigma, &delta).unwrap();
        let t: Vec<f64> = delta.iter().scan(0.0, |acc, d| { *acc += d; Some(*acc) }).collect();
        let dist = WeightDistribution::new(t.clone(), w.w).unwrap();
        prop_assume!(dist.total() > 1e-9);
        let d = composite_depth(&dist) / dist.total();
        prop_assert!(d >= t[0] - 1e-12 && d <= t[t.len() - 1] + 1e-12);
    }

    #[test]
    fn floored_weights_form_a_distribution(w in prop::collection::vec(0.0..1.0f64, 1..64), floor in 1e-9..1e-3f64) {
        match floor_and_normalize(&w, floor) {
            Some(p) => {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(p.iter().all(|v| *v >= floor));
            }
            None => prop_assert!(w.iter().sum::<f64>() < w.len() as f64 * floor + 1e-300),
        }
    }

    #[test]
    fn gumbel_softmax_is_a_distribution_and_scale_free(
        w in prop::collection::vec(1e-3..1.0f64, 2..32),
        k in -20i32..20,
        eps in 0.01..4.0f64,
        seed in any::<u64>(),
    ) {
        let g: Vec<f64> = (0..w.len()).map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64) / 250.0 - 2.0).collect();
        let a = gumbel_softmax(&w, &g, eps).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let scaled: Vec<f64> = w.iter().map(|v| v * 2f64.powi(k)).collect();
        prop_assert_eq!(a, gumbel_softmax(&scaled, &g, eps).unwrap());
    }

    #[test]
    fn triangle_samples_stay_in_support(c in -5.0..5.0f64, d in 1e-4..1.0f64, u in 1e-9..(1.0 - 1e-9)) {
        let t = sample_triangle(c, d, u).unwrap();
        prop_assert!(t >= c - d - 1e-12 && t <= c + d + 1e-12);
    }

    #[test]
    fn so3_exp_is_a_rotation(x in -3.0..3.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64) {
        let r = so3_exp(&Vector3::new(x, y, z));
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).amax() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ndc_projection_round_trips(x in -2.0..2.0f64, y in -2.0..2.0f64, z in -50.0..-1.0f64) {
        let cam = PinholeCamera::centered(64, 48, 60.0).unwrap();
        let ndc = NdcFrame::from_camera(&cam, 1.0).unwrap();
        let p = Vector3::new(x, y, z);
        let back = ndc.unproject(&ndc.project(&p));
        prop_assert!((back - p).amax() < 1e-9 * p.amax());
    }

    #[test]
    fn single_bump_has_one_mode(n in 8usize..128, c in 0.1..0.9f64, width in 0.02..0.2f64) {
        let w: Vec<f64> = (0..n).map(|i| (-0.5 * (((i as f64 + 0.5) / n as f64 - c) / width).powi(2)).exp()).collect();
        prop_assert_eq!(ray_modality(&w).modality, 1);
    }

    #[test]
    fn numeric_overrides_parse_as_json(key in "[a-z]{1,8}(\\.[a-z]{1,8}){0,2}", v in -1e6..1e6f64) {
        let (k, value) = parse_override(&format!("{key}={v}")).unwrap();
        prop_assert_eq!(k, key);
        prop_assert_eq!(value.as_f64(), Some(v));
    }
}
