//! Scene representations queried for density and color.

mod analytic;
mod grid;

pub use analytic::{analytic_depth, AnalyticField, Material, NdcView, Primitive, Shape, Texture};
pub use grid::{Aabb, Corners, FieldGrad, GridField, Scalar};

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub color: Vector3<f64>,
}

impl FieldSample {
    pub const EMPTY: FieldSample = FieldSample {
        sigma: 0.0,
        color: Vector3::new(0.0, 0.0, 0.0),
    };
}

/// Upstream gradient on one [`FieldSample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrad {
    pub sigma: f64,
    pub color: Vector3<f64>,
}

impl SampleGrad {
    pub const ZERO: SampleGrad = SampleGrad {
        sigma: 0.0,
        color: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn is_zero(&self) -> bool {
        self.sigma == 0.0 && self.color == Vector3::zeros()
    }
}

pub trait RadianceField: Sync {
    fn frame_count(&self) -> usize;

    /// Evaluate at `x` for an already resolved frame index.
    fn sample(&self, x: &Vector3<f64>, frame: usize) -> FieldSample;

    /// Map a requested frame to a stored one. Static fields serve every frame
    /// from their single grid; time-conditioned fields reject out-of-range
    /// frames.
    fn resolve_frame(&self, frame: usize) -> Result<usize> {
        let frame_count = self.frame_count();
        if frame_count == 1 {
            Ok(0)
        } else if frame < frame_count {
            Ok(frame)
        } else {
            Err(Error::FrameOutOfRange { frame, frame_count })
        }
    }

    fn query(&self, x: &Vector3<f64>, frame: usize) -> Result<FieldSample> {
        let frame = self.resolve_frame(frame)?;
        Ok(self.sample(x, frame))
    }
}

impl<F: RadianceField + ?Sized> RadianceField for &F {
    fn frame_count(&self) -> usize {
        (**self).frame_count()
    }

    fn sample(&self, x: &Vector3<f64>, frame: usize) -> FieldSample {
        (**self).sample(x, frame)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Inverse of [`sigmoid`], with the input clamped away from 0 and 1.
pub fn logit(y: f64) -> f64 {
    let y = y.clamp(1e-6, 1.0 - 1e-6);
    (y / (1.0 - y)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_inverses() {
        for y in [1e-6, 0.1, 1.0, 7.5, 300.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() / y < 1e-9);
        }
        for y in [0.01, 0.3, 0.5, 0.99] {
            assert!((sigmoid(logit(y)) - y).abs() < 1e-12);
        }
        assert_eq!(softplus(-800.0), 0.0);
        assert!(softplus(800.0) == 800.0);
    }
}
