//! Closed-form scenes used as ground truth and test oracles.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{FieldSample, RadianceField};
use crate::geometry::{NdcFrame, Ray};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half_extents: [f64; 3] },
    /// Infinite slab `z_min ≤ z ≤ z_max`.
    Slab { z_min: f64, z_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    #[default]
    Solid,
    /// `base + amplitude · sin(2πx/period) · cos(2πy/period)` per channel.
    Sinusoid { amplitude: f64, period: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub sigma: f64,
    pub color: [f64; 3],
    #[serde(default)]
    pub texture: Texture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub material: Material,
}

impl Primitive {
    pub fn sphere(center: [f64; 3], radius: f64, sigma: f64, color: [f64; 3]) -> Self {
        Self {
            shape: Shape::Sphere { center, radius },
            material: Material {
                sigma,
                color,
                texture: Texture::Solid,
            },
        }
    }

    pub fn slab(z_min: f64, z_max: f64, sigma: f64, color: [f64; 3]) -> Self {
        Self {
            shape: Shape::Slab { z_min, z_max },
            material: Material {
                sigma,
                color,
                texture: Texture::Solid,
            },
        }
    }

    pub fn with_texture(mut self, texture: Texture) -> Self {
        self.material.texture = texture;
        self
    }

    /// Signed distance, negative inside.
    pub fn signed_distance(&self, x: &Vector3<f64>) -> f64 {
        match self.shape {
            Shape::Sphere { center, radius } => (x - Vector3::from(center)).norm() - radius,
            Shape::Box {
                center,
                half_extents,
            } => {
                let q = (x - Vector3::from(center)).abs() - Vector3::from(half_extents);
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
            Shape::Slab { z_min, z_max } => (z_min - x.z).max(x.z - z_max),
        }
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        self.signed_distance(x) <= 0.0
    }

    pub fn color_at(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let base = Vector3::from(self.material.color);
        let c = match self.material.texture {
            Texture::Solid => base,
            Texture::Sinusoid { amplitude, period } => {
                let k = 2.0 * std::f64::consts::PI / period;
                base.add_scalar(amplitude * (k * x.x).sin() * (k * x.y).cos())
            }
        };
        c.map(|v| v.clamp(0.0, 1.0))
    }

    /// Parametric interval `[t_in, t_out]` where the line `o + t·d` is inside.
    fn interval(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (o, d) = (ray.origin, ray.direction);
        match self.shape {
            Shape::Sphere { center, radius } => {
                let oc = o - Vector3::from(center);
                let a = d.dot(&d);
                let b = oc.dot(&d);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                Some(((-b - sq) / a, (-b + sq) / a))
            }
            Shape::Box {
                center,
                half_extents,
            } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    let lo = center[a] - half_extents[a];
                    let hi = center[a] + half_extents[a];
                    if d[a] == 0.0 {
                        if o[a] < lo || o[a] > hi {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                }
                (t0 <= t1).then_some((t0, t1))
            }
            Shape::Slab { z_min, z_max } => {
                if d.z == 0.0 {
                    return (o.z >= z_min && o.z <= z_max)
                        .then_some((f64::NEG_INFINITY, f64::INFINITY));
                }
                let (ta, tb) = ((z_min - o.z) / d.z, (z_max - o.z) / d.z);
                Some((ta.min(tb), ta.max(tb)))
            }
        }
    }

    /// First parameter in `[t_near, t_far]` at which the ray is inside.
    pub fn first_hit(&self, ray: &Ray) -> Option<f64> {
        let (t_in, t_out) = self.interval(ray)?;
        if t_out < ray.t_near || t_in > ray.t_far {
            return None;
        }
        Some(t_in.max(ray.t_near))
    }
}

/// A set of primitives in world space. Density is summed over the primitives
/// containing a point; color comes from the densest one.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalyticField {
    pub primitives: Vec<Primitive>,
}

impl AnalyticField {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Self { primitives }
    }

    /// Nearest surface hit along the ray: `(t, primitive index)`.
    pub fn first_hit(&self, ray: &Ray) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.first_hit(ray).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Minimum signed distance over primitives and the index attaining it.
    pub fn signed_distance(&self, x: &Vector3<f64>) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .map(|(i, p)| (p.signed_distance(x), i))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// Distance to the first opaque surface along `ray`, or `t_far` on a miss.
pub fn analytic_depth(field: &AnalyticField, ray: &Ray) -> f64 {
    field.first_hit(ray).map_or(ray.t_far, |(t, _)| t)
}

impl RadianceField for AnalyticField {
    fn frame_count(&self) -> usize {
        1
    }

    fn sample(&self, x: &Vector3<f64>, _frame: usize) -> FieldSample {
        let mut sigma = 0.0;
        let mut best: Option<(f64, &Primitive)> = None;
        for p in self.primitives.iter().filter(|p| p.contains(x)) {
            sigma += p.material.sigma;
            if best.is_none_or(|(s, _)| p.material.sigma > s) {
                best = Some((p.material.sigma, p));
            }
        }
        match best {
            Some((_, p)) => FieldSample {
                sigma,
                color: p.color_at(x),
            },
            None => FieldSample::EMPTY,
        }
    }
}

/// A world-space field viewed through the NDC warp: NDC points are mapped
/// back to world points before querying. Densities pass through unscaled, so
/// this is meant for opaque scenes where only the surface location matters.
#[derive(Debug, Clone, Copy)]
pub struct NdcView<'a, F> {
    pub field: &'a F,
    pub ndc: NdcFrame,
}

impl<F: RadianceField> RadianceField for NdcView<'_, F> {
    fn frame_count(&self) -> usize {
        self.field.frame_count()
    }

    fn sample(&self, x: &Vector3<f64>, frame: usize) -> FieldSample {
        if x.z >= 1.0 {
            return FieldSample::EMPTY;
        }
        self.field.sample(&self.ndc.unproject(x), frame)
    }
}
