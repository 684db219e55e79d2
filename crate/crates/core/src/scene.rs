//! Synthetic scenes with exact ground truth, small-baseline camera rigs,
//! dataset storage, and affine alignment of relative depth.

use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::{logit, Aabb, AnalyticField, GridField, Material, Primitive, Shape, Texture};
use crate::geometry::{CameraFile, FrameCamera, NdcFrame, PinholeCamera, Pose, Ray};
use crate::io::{read_json, write_json, ColorImage, DepthMap};

/// Far bound of ground-truth rays.
pub const SCENE_FAR: f64 = 1e4;

/// A primitive with an optional constant per-frame velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePrimitive {
    #[serde(flatten)]
    pub primitive: Primitive,
    /// Translation per frame.
    #[serde(default)]
    pub velocity: [f64; 3],
}

impl ScenePrimitive {
    pub fn fixed(primitive: Primitive) -> Self {
        Self {
            primitive,
            velocity: [0.0; 3],
        }
    }

    pub fn is_static(&self) -> bool {
        self.velocity == [0.0; 3]
    }

    /// The primitive as placed at `frame`.
    pub fn at_frame(&self, frame: usize) -> Primitive {
        let offset = Vector3::from(self.velocity) * frame as f64;
        let mut p = self.primitive;
        p.shape = match p.shape {
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: (Vector3::from(center) + offset).into(),
                radius,
            },
            Shape::Box {
                center,
                half_extents,
            } => Shape::Box {
                center: (Vector3::from(center) + offset).into(),
                half_extents,
            },
            Shape::Slab { z_min, z_max } => Shape::Slab {
                z_min: z_min + offset.z,
                z_max: z_max + offset.z,
            },
        };
        p
    }
}

/// An opaque half-space behind `z = −depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub depth: f64,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<ScenePrimitive>,
    pub background: Option<Background>,
    pub frame_count: usize,
    /// World-space box that must contain every primitive center.
    pub bbox: Aabb,
}

impl SceneSpec {
    /// Foreground sphere whose front surface sits at depth 2, a second
    /// sphere further back, and a textured background plane at depth 6.
    pub fn two_spheres() -> Self {
        Self {
            primitives: vec![
                ScenePrimitive::fixed(Primitive::sphere(
                    [-0.25, -0.05, -2.5],
                    0.5,
                    50.0,
                    [0.85, 0.25, 0.2],
                )),
                ScenePrimitive::fixed(Primitive::sphere(
                    [0.75, 0.3, -3.6],
                    0.45,
                    50.0,
                    [0.25, 0.75, 0.3],
                )),
            ],
            background: Some(Background {
                depth: 6.0,
                material: Material {
                    sigma: 50.0,
                    color: [0.45, 0.5, 0.65],
                    texture: Texture::Sinusoid {
                        amplitude: 0.25,
                        period: 2.0,
                    },
                },
            }),
            frame_count: 3,
            bbox: Aabb {
                min: [-10.0, -10.0, -10.0],
                max: [10.0, 10.0, 0.0],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() && self.background.is_none() {
            return Err(Error::InvalidScene("scene has no primitives".into()));
        }
        if self.frame_count == 0 {
            return Err(Error::InvalidScene("frame_count must be at least 1".into()));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            let center = match p.primitive.shape {
                Shape::Sphere { center, radius } => {
                    if !(radius > 0.0) {
                        return Err(Error::InvalidScene(format!("primitive {i}: radius {radius}")));
                    }
                    Some(center)
                }
                Shape::Box {
                    center,
                    half_extents,
                } => {
                    if half_extents.iter().any(|h| !(*h > 0.0)) {
                        return Err(Error::InvalidScene(format!("primitive {i}: empty box")));
                    }
                    Some(center)
                }
                Shape::Slab { z_min, z_max } => {
                    if !(z_max > z_min) {
                        return Err(Error::InvalidScene(format!("primitive {i}: empty slab")));
                    }
                    None
                }
            };
            if let Some(c) = center {
                for frame in [0, self.frame_count - 1] {
                    let moved = Vector3::from(c) + Vector3::from(p.velocity) * frame as f64;
                    if !self.bbox.contains(&moved) {
                        return Err(Error::InvalidScene(format!(
                            "primitive {i} leaves the scene bbox at frame {frame}"
                        )));
                    }
                }
            }
            if !(p.primitive.material.sigma >= 0.0) {
                return Err(Error::InvalidScene(format!("primitive {i}: negative density")));
            }
        }
        if let Some(bg) = &self.background {
            if !(bg.depth > 0.0) {
                return Err(Error::InvalidScene("background depth must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn is_static(&self) -> bool {
        self.primitives.iter().all(ScenePrimitive::is_static)
    }

    /// The scene at `frame` as an analytic field; the background becomes a
    /// deep slab.
    pub fn field_at(&self, frame: usize) -> AnalyticField {
        let mut prims: Vec<Primitive> = self.primitives.iter().map(|p| p.at_frame(frame)).collect();
        if let Some(bg) = &self.background {
            prims.push(Primitive {
                shape: Shape::Slab {
                    z_min: -SCENE_FAR * 10.0,
                    z_max: -bg.depth,
                },
                material: bg.material,
            });
        }
        AnalyticField::new(prims)
    }
}

/// Camera arrangement for generation: `views` viewpoints spread along the
/// x axis, each assigned to a contiguous third (in general, `1/views`) of the
/// frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub near: f64,
    pub views: usize,
    /// Spacing between adjacent viewpoints as a fraction of the mean depth
    /// seen from the central view.
    pub baseline_fraction: f64,
}

impl Default for Rig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 72,
            focal: 96.0,
            near: 1.0,
            views: 3,
            baseline_fraction: 0.01,
        }
    }
}

impl Rig {
    pub fn intrinsics(&self) -> Result<PinholeCamera> {
        PinholeCamera::centered(self.width, self.height, self.focal)
    }

    pub fn ndc(&self) -> Result<NdcFrame> {
        NdcFrame::from_camera(&self.intrinsics()?, self.near)
    }

    pub fn view_of_frame(&self, frame: usize, frame_count: usize) -> usize {
        (frame * self.views / frame_count).min(self.views - 1)
    }

    /// Per-frame cameras given the absolute baseline.
    pub fn cameras(&self, frame_count: usize, baseline: f64) -> Result<Vec<FrameCamera>> {
        if self.views == 0 {
            return Err(Error::InvalidScene("rig needs at least one view".into()));
        }
        let intr = self.intrinsics()?;
        let mid = (self.views - 1) as f64 / 2.0;
        Ok((0..frame_count)
            .map(|f| {
                let v = self.view_of_frame(f, frame_count) as f64;
                let pose = Pose::from_translation(Vector3::new((v - mid) * baseline, 0.0, 0.0));
                FrameCamera::new(intr, pose)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub units: String,
    /// Near plane of the NDC warp.
    #[serde(default = "default_near")]
    pub near: f64,
}

fn default_near() -> f64 {
    1.0
}

/// Per-frame images, depth maps (distance along the unit pixel ray) and
/// cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub images: Vec<ColorImage>,
    pub depths: Vec<DepthMap>,
    pub cameras: Vec<FrameCamera>,
}

/// Render one frame of an analytic scene: first-hit surface color and
/// depth per pixel center.
pub fn trace_frame(field: &AnalyticField, camera: &FrameCamera) -> Result<(ColorImage, DepthMap)> {
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let pixels: Vec<(Vector3<f64>, f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let px = Vector2::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let ray = camera.ray(px, (0.0, SCENE_FAR))?;
            Ok(match field.first_hit(&ray) {
                Some((t, k)) => (field.primitives[k].color_at(&ray.at(t)), t),
                None => (Vector3::zeros(), ray.t_far),
            })
        })
        .collect::<Result<_>>()?;
    let image = ColorImage::from_data(w, h, pixels.iter().map(|p| p.0).collect())?;
    let depth = DepthMap {
        width: w,
        height: h,
        data: pixels.iter().map(|p| p.1).collect(),
    };
    Ok((image, depth))
}

/// Mean ray depth over the image of `camera`.
pub fn mean_depth(field: &AnalyticField, camera: &FrameCamera) -> Result<f64> {
    let (_, depth) = trace_frame(field, camera)?;
    Ok(depth.data.iter().sum::<f64>() / depth.data.len() as f64)
}

/// Pixels of `camera` whose first hit is a primitive other than the
/// background, in row-major order.
pub fn foreground_pixels(spec: &SceneSpec, frame: usize, camera: &FrameCamera) -> Result<Vec<(usize, usize)>> {
    let field = spec.field_at(frame);
    let foreground = spec.primitives.len();
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let ray = camera.ray(Vector2::new(x as f64 + 0.5, y as f64 + 0.5), (0.0, SCENE_FAR))?;
            if matches!(field.first_hit(&ray), Some((_, k)) if k < foreground) {
                out.push((x, y));
            }
        }
    }
    Ok(out)
}

/// Ray-trace every frame of `spec` from the rig's cameras.
pub fn generate(spec: &SceneSpec, rig: &Rig) -> Result<Dataset> {
    spec.validate()?;
    let reference = FrameCamera::new(rig.intrinsics()?, Pose::identity());
    let baseline = rig.baseline_fraction * mean_depth(&spec.field_at(0), &reference)?;
    let cameras = rig.cameras(spec.frame_count, baseline)?;
    let mut images = Vec::with_capacity(spec.frame_count);
    let mut depths = Vec::with_capacity(spec.frame_count);
    for (frame, cam) in cameras.iter().enumerate() {
        let (img, depth) = trace_frame(&spec.field_at(frame), cam)?;
        images.push(img);
        depths.push(depth);
    }
    Ok(Dataset {
        meta: DatasetMeta {
            frame_count: spec.frame_count,
            width: rig.width,
            height: rig.height,
            units: "scene".into(),
            near: rig.near,
        },
        images,
        depths,
        cameras,
    })
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.meta.frame_count
    }

    pub fn ndc(&self) -> Result<NdcFrame> {
        let first = self
            .cameras
            .first()
            .ok_or_else(|| Error::InvalidScene("dataset has no cameras".into()))?;
        NdcFrame::from_camera(&first.intrinsics, self.meta.near)
    }

    /// Ground-truth depth of every pixel as an NDC ray parameter, using the
    /// stored cameras.
    pub fn ndc_depths(&self) -> Result<Vec<DepthMap>> {
        let ndc = self.ndc()?;
        self.depths
            .iter()
            .zip(&self.cameras)
            .map(|(d, cam)| {
                let mut out = DepthMap::new(d.width, d.height, 0.0);
                for y in 0..d.height {
                    for x in 0..d.width {
                        let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                        let ray = cam.ray(px, (0.0, SCENE_FAR))?;
                        let z = ray.at(d.get(x, y)).z;
                        out.set(x, y, ndc.depth_to_t(z).clamp(0.0, 1.0));
                    }
                }
                Ok(out)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.meta.frame_count;
        check_len("dataset images", self.images.len(), n)?;
        check_len("dataset depths", self.depths.len(), n)?;
        check_len("dataset cameras", self.cameras.len(), n)?;
        let (w, h) = (self.meta.width, self.meta.height);
        for f in 0..n {
            let dims = [
                (self.images[f].width, self.images[f].height),
                (self.depths[f].width, self.depths[f].height),
                (self.cameras[f].intrinsics.width, self.cameras[f].intrinsics.height),
            ];
            if dims.iter().any(|&d| d != (w, h)) {
                return Err(Error::InvalidScene(format!(
                    "frame {f} dimensions {dims:?} differ from {w}x{h}"
                )));
            }
        }
        Ok(())
    }

    fn frame_path(dir: &Path, sub: &str, frame: usize, ext: &str) -> PathBuf {
        dir.join(sub).join(format!("{frame:03}.{ext}"))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        for f in 0..self.meta.frame_count {
            self.images[f].save_png(&Self::frame_path(dir, "frames", f, "png"))?;
            self.depths[f].save_pfm(&Self::frame_path(dir, "depth", f, "pfm"))?;
        }
        CameraFile::from_cameras(&self.cameras)?.save(&dir.join("cameras.json"))?;
        write_json(&dir.join("meta.json"), &self.meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
        let cameras = CameraFile::load(&dir.join("cameras.json"))?.to_cameras()?;
        let mut images = Vec::with_capacity(meta.frame_count);
        let mut depths = Vec::with_capacity(meta.frame_count);
        for f in 0..meta.frame_count {
            let png = Self::frame_path(dir, "frames", f, "png");
            if !png.exists() {
                return Err(Error::MissingFrameFile {
                    what: "image",
                    frame: f,
                    path: png,
                });
            }
            let pfm = Self::frame_path(dir, "depth", f, "pfm");
            if !pfm.exists() {
                return Err(Error::MissingFrameFile {
                    what: "depth map",
                    frame: f,
                    path: pfm,
                });
            }
            images.push(ColorImage::load_png(&png)?);
            depths.push(DepthMap::load_pfm(&pfm)?);
        }
        let ds = Self {
            meta,
            images,
            depths,
            cameras,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Least-squares scale and shift mapping a relative depth map onto sparse
/// metric references `(x, y, depth)`. Returns `(aligned, scale, shift)`.
pub fn align_depth(
    relative: &DepthMap,
    refs: &[(usize, usize, f64)],
) -> Result<(DepthMap, f64, f64)> {
    if refs.len() < 2 {
        return Err(Error::Degenerate(format!(
            "alignment needs at least 2 reference points, got {}",
            refs.len()
        )));
    }
    for &(x, y, _) in refs {
        if x >= relative.width || y >= relative.height {
            return Err(Error::PixelOutOfBounds {
                x: x as f64,
                y: y as f64,
                width: relative.width,
                height: relative.height,
            });
        }
    }
    let n = refs.len() as f64;
    let rel: Vec<f64> = refs.iter().map(|&(x, y, _)| relative.get(x, y)).collect();
    let mean_r = rel.iter().sum::<f64>() / n;
    let mean_m = refs.iter().map(|r| r.2).sum::<f64>() / n;
    let mut srr = 0.0;
    let mut srm = 0.0;
    for (r, &(_, _, m)) in rel.iter().zip(refs) {
        srr += (r - mean_r) * (r - mean_r);
        srm += (r - mean_r) * (m - mean_m);
    }
    if !(srr > 1e-300) {
        return Err(Error::Degenerate(
            "relative depth is constant over the reference points".into(),
        ));
    }
    let scale = srm / srr;
    let shift = mean_m - scale * mean_r;
    let aligned = DepthMap {
        width: relative.width,
        height: relative.height,
        data: relative.data.iter().map(|r| scale * r + shift).collect(),
    };
    Ok((aligned, scale, shift))
}

/// Options for baking an analytic scene into a voxel grid over NDC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BakeOptions {
    pub resolution: [usize; 3],
    /// Raw density per unit of NDC-scaled signed distance inside a surface.
    pub sharpness: f64,
    /// Clamp on the raw density parameter.
    pub clamp: f64,
}

impl Default for BakeOptions {
    fn default() -> Self {
        Self {
            resolution: [64, 64, 64],
            sharpness: 5e6,
            clamp: 5e4,
        }
    }
}

/// A grid over the NDC cube approximating `spec`: raw density is the
/// signed distance (scaled to NDC depth units, negated and clamped) and raw
/// color is the logit of the nearest surface's color. Static scenes give a
/// single-frame grid.
pub fn bake_grid(spec: &SceneSpec, ndc: &NdcFrame, opts: &BakeOptions) -> Result<GridField<f32>> {
    spec.validate()?;
    let frames = if spec.is_static() { 1 } else { spec.frame_count };
    let mut grid = GridField::<f32>::constant(opts.resolution, Aabb::NDC, frames, -opts.clamp, 0.0)?;
    for frame in 0..frames {
        let field = spec.field_at(frame);
        grid.fill_with(frame, |q| {
            let q = Vector3::new(q.x, q.y, q.z.min(1.0 - 1e-3));
            let p = ndc.unproject(&q);
            let Some((s, k)) = field.signed_distance(&p) else {
                return (-opts.clamp, [0.0; 3]);
            };
            let scale = 2.0 * ndc.near / (p.z * p.z);
            let raw = (-opts.sharpness * s * scale).clamp(-opts.clamp, opts.clamp);
            // nearest surface's color where the reference ray through p meets
            // it, so vertices in front of and behind a surface agree
            let prim = &field.primitives[k];
            let c = Ray::new(Vector3::zeros(), p.normalize(), 0.0, SCENE_FAR)
                .ok()
                .and_then(|ray| prim.first_hit(&ray).map(|t| ray.at(t)))
                .map_or_else(|| prim.color_at(&p), |hit| prim.color_at(&hit));
            (raw, [logit(c.x), logit(c.y), logit(c.z)])
        });
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::analytic_depth;

    fn single_sphere() -> SceneSpec {
        SceneSpec {
            primitives: vec![ScenePrimitive::fixed(Primitive::sphere(
                [0.0, 0.0, -4.0],
                1.0,
                10.0,
                [1.0, 1.0, 1.0],
            ))],
            background: Some(Background {
                depth: 8.0,
                material: Material {
                    sigma: 10.0,
                    color: [0.0, 0.0, 1.0],
                    texture: Texture::Solid,
                },
            }),
            frame_count: 1,
            bbox: SceneSpec::two_spheres().bbox,
        }
    }

    fn small_rig() -> Rig {
        Rig {
            width: 32,
            height: 24,
            focal: 32.0,
            ..Rig::default()
        }
    }

    #[test]
    fn centered_sphere_depth_disc() {
        let ds = generate(&single_sphere(), &small_rig()).unwrap();
        let d = &ds.depths[0];
        // center pixel ray is nearly along −z: depth ≈ 4 − 1
        assert!((d.get(16, 12) - 3.0).abs() < 0.01);
        // corner pixels see the background plane at z = −8
        let ray = ds.cameras[0].ray(Vector2::new(0.5, 0.5), (0.0, SCENE_FAR)).unwrap();
        assert!((ray.at(d.get(0, 0)).z + 8.0).abs() < 1e-9);
    }

    #[test]
    fn depth_equals_analytic_depth_everywhere() {
        let spec = SceneSpec::two_spheres();
        let ds = generate(&spec, &small_rig()).unwrap();
        for f in 0..spec.frame_count {
            let field = spec.field_at(f);
            for y in 0..24 {
                for x in 0..32 {
                    let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let ray = ds.cameras[f].ray(px, (0.0, SCENE_FAR)).unwrap();
                    assert_eq!(ds.depths[f].get(x, y), analytic_depth(&field, &ray));
                }
            }
        }
    }

    #[test]
    fn zero_baseline_shares_cameras() {
        let rig = Rig {
            baseline_fraction: 0.0,
            ..small_rig()
        };
        let ds = generate(&SceneSpec::two_spheres(), &rig).unwrap();
        assert!(ds.cameras.windows(2).all(|c| c[0] == c[1]));
    }

    #[test]
    fn moving_sphere_disc_translates() {
        let mut spec = single_sphere();
        spec.frame_count = 2;
        spec.primitives[0].velocity = [0.5, 0.0, 0.0];
        let rig = Rig {
            baseline_fraction: 0.0,
            ..small_rig()
        };
        let ds = generate(&spec, &rig).unwrap();
        for f in 0..2 {
            let field = spec.field_at(f);
            let ray = ds.cameras[f]
                .ray(Vector2::new(20.5, 12.5), (0.0, SCENE_FAR))
                .unwrap();
            assert_eq!(ds.depths[f].get(20, 12), analytic_depth(&field, &ray));
        }
        assert_ne!(ds.depths[0].get(20, 12), ds.depths[1].get(20, 12));
    }

    #[test]
    fn empty_spec_rejected() {
        let spec = SceneSpec {
            primitives: vec![],
            background: None,
            frame_count: 1,
            bbox: SceneSpec::two_spheres().bbox,
        };
        assert!(generate(&spec, &small_rig()).is_err());
    }

    #[test]
    fn align_depth_examples() {
        let metric = DepthMap {
            width: 3,
            height: 1,
            data: vec![2.0, 4.0, 7.0],
        };
        let refs: Vec<_> = (0..3).map(|x| (x, 0, metric.data[x])).collect();
        let (_, s, b) = align_depth(&metric, &refs).unwrap();
        assert!((s - 1.0).abs() < 1e-9 && b.abs() < 1e-9);

        let rel = DepthMap {
            data: metric.data.iter().map(|m| 2.0 * m - 3.0).collect(),
            ..metric.clone()
        };
        let (aligned, s, b) = align_depth(&rel, &refs).unwrap();
        assert!((s - 0.5).abs() < 1e-12 && (b - 1.5).abs() < 1e-12);
        for (a, m) in aligned.data.iter().zip(&metric.data) {
            assert!((a - m).abs() < 1e-9);
        }
        assert!(align_depth(&rel, &refs[..1]).is_err());
        let flat = DepthMap {
            data: vec![1.0; 3],
            ..metric
        };
        assert!(align_depth(&flat, &refs).is_err());
    }
}
