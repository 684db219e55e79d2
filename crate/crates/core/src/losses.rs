//! Reconstruction, depth and depth-gradient losses, and their weighted sum.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Mean over rays of `‖pred − target‖²`.
pub fn rgb_loss(pred: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)> {
    check_len("rgb pred/target", pred.len(), target.len())?;
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let inv = 1.0 / pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d.norm_squared() * inv;
            d * (2.0 * inv)
        })
        .collect();
    Ok((loss, grad))
}

/// Mean squared depth error.
pub fn depth_loss(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len("depth pred/gt", pred.len(), gt.len())?;
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let inv = 1.0 / pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = p - g;
            loss += d * d * inv;
            2.0 * d * inv
        })
        .collect();
    Ok((loss, grad))
}

pub fn depth_diff(d1: f64, d2: f64) -> f64 {
    (d1 - d2).abs()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `1/(N−1) Σ_i |diff(pred_i, pred_{i+1}) − diff(gt_i, gt_{i+1})|` over
/// consecutive entries, with subgradient zero at every tie.
pub fn grad_loss(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len("grad pred/gt", pred.len(), gt.len())?;
    if pred.len() < 2 {
        return Err(Error::Degenerate(format!(
            "grad_loss needs at least 2 rays, got {}",
            pred.len()
        )));
    }
    let inv = 1.0 / (pred.len() - 1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() - 1 {
        let dp = pred[i] - pred[i + 1];
        let r = dp.abs() - depth_diff(gt[i], gt[i + 1]);
        loss += r.abs() * inv;
        let g = sign(r) * sign(dp) * inv;
        grad[i] += g;
        grad[i + 1] -= g;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lambdas {
    #[serde(rename = "lambda_rgb")]
    pub rgb: f64,
    #[serde(rename = "lambda_depth")]
    pub depth: f64,
    #[serde(rename = "lambda_weight")]
    pub weight: f64,
    #[serde(rename = "lambda_density")]
    pub density: f64,
    #[serde(rename = "lambda_grad")]
    pub grad: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            rgb: 1.0,
            depth: 0.1,
            weight: 0.1,
            density: 0.01,
            grad: 0.1,
        }
    }
}

impl Lambdas {
    pub fn zero() -> Self {
        Self {
            rgb: 0.0,
            depth: 0.0,
            weight: 0.0,
            density: 0.0,
            grad: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.rgb, self.depth, self.weight, self.density, self.grad]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in LOSS_NAMES.iter().zip(self.as_array()) {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.lambda_{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

pub const LOSS_NAMES: [&str; 5] = ["rgb", "depth", "weight", "density", "grad"];

/// Raw loss components, before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub rgb: f64,
    pub depth: f64,
    pub weight: f64,
    pub density: f64,
    pub grad: f64,
}

impl LossComponents {
    pub fn as_array(&self) -> [f64; 5] {
        [self.rgb, self.depth, self.weight, self.density, self.grad]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub rgb: f64,
    pub depth: f64,
    pub weight: f64,
    pub density: f64,
    pub grad: f64,
    pub lambdas: Lambdas,
    pub total: f64,
}

/// Weighted sum of the components. A non-finite component aborts with its name.
pub fn aggregate(losses: &LossComponents, lambdas: &Lambdas) -> Result<LossBundle> {
    lambdas.validate()?;
    let values = losses.as_array();
    for (name, v) in LOSS_NAMES.iter().zip(values) {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { component: name });
        }
    }
    let total = values
        .iter()
        .zip(lambdas.as_array())
        .map(|(v, l)| v * l)
        .sum();
    Ok(LossBundle {
        rgb: losses.rgb,
        depth: losses.depth,
        weight: losses.weight,
        density: losses.density,
        grad: losses.grad,
        lambdas: *lambdas,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_and_depth_examples() {
        let p = vec![Vector3::new(0.6, 0.2, 0.1)];
        let t = vec![Vector3::new(0.5, 0.2, 0.1)];
        assert!((rgb_loss(&p, &t).unwrap().0 - 0.01).abs() < 1e-15);
        assert_eq!(rgb_loss(&t, &t).unwrap().0, 0.0);
        assert!(rgb_loss(&p, &[]).is_err());
        assert_eq!(depth_loss(&[1.5], &[1.0]).unwrap().0, 0.25);
        assert_eq!(depth_loss(&[2.0, 3.0], &[2.0, 3.0]).unwrap().0, 0.0);
    }

    #[test]
    fn grad_loss_examples() {
        assert!((grad_loss(&[0.0, 0.2], &[0.0, 0.5]).unwrap().0 - 0.3).abs() < 1e-15);
        assert_eq!(grad_loss(&[0.1, 0.4, 0.2], &[0.1, 0.4, 0.2]).unwrap().0, 0.0);
        assert!(grad_loss(&[1.0], &[1.0]).is_err());
        assert_eq!(depth_diff(0.2, 0.7), depth_diff(0.7, 0.2));
    }

    #[test]
    fn aggregate_examples() {
        let ones = LossComponents {
            rgb: 1.0,
            depth: 1.0,
            weight: 1.0,
            density: 1.0,
            grad: 1.0,
        };
        assert!((aggregate(&ones, &Lambdas::default()).unwrap().total - 1.31).abs() < 1e-12);
        assert_eq!(aggregate(&ones, &Lambdas::zero()).unwrap().total, 0.0);
        let only_rgb = Lambdas {
            rgb: 1.0,
            ..Lambdas::zero()
        };
        let l = LossComponents { rgb: 0.7, ..ones };
        assert_eq!(aggregate(&l, &only_rgb).unwrap().total, 0.7);
        let bad = LossComponents {
            density: f64::NAN,
            ..ones
        };
        match aggregate(&bad, &Lambdas::default()) {
            Err(Error::NonFiniteLoss { component }) => assert_eq!(component, "density"),
            other => panic!("{other:?}"),
        }
    }
}
