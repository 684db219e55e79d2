//! Learnable trilinear voxel grids.
//!
//! Parameters live on the lattice vertices of `bbox`: a resolution of `r`
//! along an axis places `r` vertices from `min` to `max` inclusive. Density is
//! `softplus` of the interpolated raw value and color the `sigmoid` of the
//! interpolated raw color, so any parameter value yields a valid sample.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, FieldSample, RadianceField, SampleGrad};
use crate::error::{Error, Result};

/// Parameter storage precision. Training stores `f32`; gradient validation
/// uses `f64`.
pub trait Scalar: Copy + Send + Sync + std::fmt::Debug + PartialEq + 'static {
    const DTYPE: &'static str;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// The NDC cube `[-1, 1]³`.
    pub const NDC: Aabb = Aabb {
        min: [-1.0; 3],
        max: [1.0; 3],
    };

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.max[a])
    }
}

/// The eight lattice vertices surrounding a point, with trilinear weights.
#[derive(Debug, Clone, Copy)]
pub struct Corners {
    pub index: [usize; 8],
    pub weight: [f64; 8],
    frac: [f64; 3],
    inv_spacing: [f64; 3],
}

impl Corners {
    /// `∂weight_c / ∂x` for each corner.
    pub fn weight_gradients(&self) -> [Vector3<f64>; 8] {
        let f = self.frac;
        std::array::from_fn(|c| {
            let bits = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let factor = |a: usize| if bits[a] == 1 { f[a] } else { 1.0 - f[a] };
            let slope = |a: usize| {
                let s = if bits[a] == 1 { 1.0 } else { -1.0 };
                s * self.inv_spacing[a]
            };
            Vector3::new(
                slope(0) * factor(1) * factor(2),
                factor(0) * slope(1) * factor(2),
                factor(0) * factor(1) * slope(2),
            )
        })
    }
}

/// Gradient accumulator shaped like a [`GridField`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    pub sigma: Vec<f64>,
    pub color: Vec<f64>,
}

impl FieldGrad {
    pub fn zeros(sigma_len: usize) -> Self {
        Self {
            sigma: vec![0.0; sigma_len],
            color: vec![0.0; 3 * sigma_len],
        }
    }

    pub fn zero(&mut self) {
        self.sigma.fill(0.0);
        self.color.fill(0.0);
    }

    pub fn add(&mut self, other: &FieldGrad) -> Result<()> {
        crate::error::check_len("field gradient", self.sigma.len(), other.sigma.len())?;
        for (a, b) in self.sigma.iter_mut().zip(&other.sigma) {
            *a += b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma.iter().chain(&self.color).all(|&g| g == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField<T: Scalar = f32> {
    resolution: [usize; 3],
    bbox: Aabb,
    frame_count: usize,
    /// Raw density, `frame_count × voxels`.
    pub sigma: Vec<T>,
    /// Raw color, interleaved RGB, `frame_count × voxels × 3`.
    pub color: Vec<T>,
}

impl<T: Scalar> GridField<T> {
    pub fn constant(
        resolution: [usize; 3],
        bbox: Aabb,
        frame_count: usize,
        sigma: f64,
        color: f64,
    ) -> Result<Self> {
        validate_shape(resolution, &bbox, frame_count)?;
        let n = frame_count * resolution.iter().product::<usize>();
        Ok(Self {
            resolution,
            bbox,
            frame_count,
            sigma: vec![T::from_f64(sigma); n],
            color: vec![T::from_f64(color); 3 * n],
        })
    }

    pub fn from_params(
        resolution: [usize; 3],
        bbox: Aabb,
        frame_count: usize,
        sigma: Vec<T>,
        color: Vec<T>,
    ) -> Result<Self> {
        validate_shape(resolution, &bbox, frame_count)?;
        let n = frame_count * resolution.iter().product::<usize>();
        crate::error::check_len("grid sigma parameters", sigma.len(), n)?;
        crate::error::check_len("grid color parameters", color.len(), 3 * n)?;
        Ok(Self {
            resolution,
            bbox,
            frame_count,
            sigma,
            color,
        })
    }

    /// Raw parameters drawn uniformly from `center ± spread` per channel.
    pub fn random<R: Rng + ?Sized>(
        resolution: [usize; 3],
        bbox: Aabb,
        frame_count: usize,
        sigma: (f64, f64),
        color: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        let mut field = Self::constant(resolution, bbox, frame_count, sigma.0, color.0)?;
        for s in field.sigma.iter_mut() {
            *s = T::from_f64(sigma.0 + sigma.1 * (2.0 * rng.random::<f64>() - 1.0));
        }
        for c in field.color.iter_mut() {
            *c = T::from_f64(color.0 + color.1 * (2.0 * rng.random::<f64>() - 1.0));
        }
        Ok(field)
    }

    /// Set every lattice vertex from a function of its position returning
    /// raw `(sigma, rgb)` parameters.
    pub fn fill_with<F>(&mut self, frame: usize, mut f: F)
    where
        F: FnMut(&Vector3<f64>) -> (f64, [f64; 3]),
    {
        let v = self.voxel_count();
        for k in 0..self.resolution[2] {
            for j in 0..self.resolution[1] {
                for i in 0..self.resolution[0] {
                    let x = self.vertex_position([i, j, k]);
                    let (s, c) = f(&x);
                    let idx = frame * v + self.linear_index([i, j, k]);
                    self.sigma[idx] = T::from_f64(s);
                    for ch in 0..3 {
                        self.color[3 * idx + ch] = T::from_f64(c[ch]);
                    }
                }
            }
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bbox(&self) -> Aabb {
        self.bbox
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.sigma.len() + self.color.len()
    }

    pub fn zero_grad(&self) -> FieldGrad {
        FieldGrad::zeros(self.sigma.len())
    }

    pub fn linear_index(&self, ijk: [usize; 3]) -> usize {
        (ijk[2] * self.resolution[1] + ijk[1]) * self.resolution[0] + ijk[0]
    }

    pub fn vertex_position(&self, ijk: [usize; 3]) -> Vector3<f64> {
        Vector3::from_fn(|a, _| {
            let span = self.bbox.max[a] - self.bbox.min[a];
            self.bbox.min[a] + span * ijk[a] as f64 / (self.resolution[a] - 1) as f64
        })
    }

    pub fn spacing(&self) -> [f64; 3] {
        std::array::from_fn(|a| {
            (self.bbox.max[a] - self.bbox.min[a]) / (self.resolution[a] - 1) as f64
        })
    }

    /// Lattice corners enclosing `x`, or `None` outside the bounding box.
    /// Indices are absolute (frame offset included).
    pub fn corners(&self, x: &Vector3<f64>, frame: usize) -> Option<Corners> {
        if !self.bbox.contains(x) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut inv_spacing = [0.0; 3];
        for a in 0..3 {
            let cells = (self.resolution[a] - 1) as f64;
            let span = self.bbox.max[a] - self.bbox.min[a];
            let u = (x[a] - self.bbox.min[a]) / span * cells;
            let i0 = (u.floor() as usize).min(self.resolution[a] - 2);
            base[a] = i0;
            frac[a] = u - i0 as f64;
            inv_spacing[a] = cells / span;
        }
        let offset = frame * self.voxel_count();
        let (rx, rxy) = (self.resolution[0], self.resolution[0] * self.resolution[1]);
        let origin = offset + self.linear_index(base);
        let mut index = [0usize; 8];
        let mut weight = [0.0; 8];
        for c in 0..8 {
            let (bx, by, bz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            index[c] = origin + bx + by * rx + bz * rxy;
            let wx = if bx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if by == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if bz == 1 { frac[2] } else { 1.0 - frac[2] };
            weight[c] = wx * wy * wz;
        }
        Some(Corners {
            index,
            weight,
            frac,
            inv_spacing,
        })
    }

    fn raw_at(&self, corners: &Corners) -> (f64, [f64; 3]) {
        let mut s = 0.0;
        let mut c = [0.0; 3];
        for (&idx, &w) in corners.index.iter().zip(&corners.weight) {
            s += w * self.sigma[idx].to_f64();
            for ch in 0..3 {
                c[ch] += w * self.color[3 * idx + ch].to_f64();
            }
        }
        (s, c)
    }

    /// Sample plus its spatial Jacobian `(∂σ/∂x, ∂color/∂x)`.
    pub fn sample_with_jacobian(
        &self,
        x: &Vector3<f64>,
        frame: usize,
    ) -> (FieldSample, Vector3<f64>, Matrix3<f64>) {
        let Some(corners) = self.corners(x, frame) else {
            return (FieldSample::EMPTY, Vector3::zeros(), Matrix3::zeros());
        };
        let (s, c) = self.raw_at(&corners);
        let grads = corners.weight_gradients();
        let mut ds = Vector3::zeros();
        let mut dc = Matrix3::zeros();
        for (k, g) in grads.iter().enumerate() {
            let idx = corners.index[k];
            ds += g * self.sigma[idx].to_f64();
            for ch in 0..3 {
                let row = g.transpose() * self.color[3 * idx + ch].to_f64();
                dc.set_row(ch, &(dc.row(ch) + row));
            }
        }
        let sigma = softplus(s);
        let color = Vector3::new(sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2]));
        let dsigma = ds * sigmoid(s);
        for ch in 0..3 {
            let scale = color[ch] * (1.0 - color[ch]);
            dc.set_row(ch, &(dc.row(ch) * scale));
        }
        (FieldSample { sigma, color }, dsigma, dc)
    }

    /// Accumulate `upstream · ∂sample/∂params` into `grad`. Trilinear weights
    /// distribute the gradient over the eight enclosing vertices.
    pub fn query_gradient(
        &self,
        x: &Vector3<f64>,
        frame: usize,
        upstream: &SampleGrad,
        grad: &mut FieldGrad,
    ) -> Result<()> {
        let frame = self.resolve_frame(frame)?;
        crate::error::check_len("field gradient buffer", grad.sigma.len(), self.sigma.len())?;
        self.accumulate_gradient(x, frame, upstream, grad);
        Ok(())
    }

    pub(crate) fn accumulate_gradient(
        &self,
        x: &Vector3<f64>,
        frame: usize,
        upstream: &SampleGrad,
        grad: &mut FieldGrad,
    ) {
        if upstream.is_zero() {
            return;
        }
        let Some(corners) = self.corners(x, frame) else {
            return;
        };
        let (s, c) = self.raw_at(&corners);
        let g_s = upstream.sigma * sigmoid(s);
        let g_c: [f64; 3] = std::array::from_fn(|ch| {
            let y = sigmoid(c[ch]);
            upstream.color[ch] * y * (1.0 - y)
        });
        for (&idx, &w) in corners.index.iter().zip(&corners.weight) {
            grad.sigma[idx] += w * g_s;
            for ch in 0..3 {
                grad.color[3 * idx + ch] += w * g_c[ch];
            }
        }
    }

    /// Convert storage precision.
    pub fn cast<U: Scalar>(&self) -> GridField<U> {
        GridField {
            resolution: self.resolution,
            bbox: self.bbox,
            frame_count: self.frame_count,
            sigma: self.sigma.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            color: self.color.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

fn validate_shape(resolution: [usize; 3], bbox: &Aabb, frame_count: usize) -> Result<()> {
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::InvalidField(format!(
            "resolution {resolution:?} must be at least 2 per axis"
        )));
    }
    if frame_count == 0 {
        return Err(Error::InvalidField("frame_count must be at least 1".into()));
    }
    if (0..3).any(|a| !(bbox.max[a] > bbox.min[a])) {
        return Err(Error::InvalidField(format!("degenerate bbox {bbox:?}")));
    }
    Ok(())
}

impl<T: Scalar> RadianceField for GridField<T> {
    fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn sample(&self, x: &Vector3<f64>, frame: usize) -> FieldSample {
        let Some(corners) = self.corners(x, frame) else {
            return FieldSample::EMPTY;
        };
        let (s, c) = self.raw_at(&corners);
        FieldSample {
            sigma: softplus(s),
            color: Vector3::new(sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])),
        }
    }
}
