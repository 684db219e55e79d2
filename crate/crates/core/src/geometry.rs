//! Cameras, rays, residual pose/focal parameterization and the NDC warp.
//!
//! Conventions: camera-to-world poses, camera looking down its local `-z`
//! axis with `+y` up, pixel `(x, y)` measured from the top-left image corner
//! (pixel centers at half-integers).

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the unit-direction and orthonormality invariants.
pub const GEOMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    /// World-space ray; the direction must be unit length.
    pub fn new(
        origin: Vector3<f64>,
        direction: Vector3<f64>,
        t_near: f64,
        t_far: f64,
    ) -> Result<Self> {
        if (direction.norm() - 1.0).abs() > GEOMETRY_TOL {
            return Err(Error::InvalidRay(format!(
                "direction norm {} is not 1",
                direction.norm()
            )));
        }
        Self::with_bounds(origin, direction, t_near, t_far)
    }

    /// Ray whose direction is not normalized, e.g. an NDC ray whose parameter
    /// must span exactly `[0, 1]`.
    pub fn unnormalized(
        origin: Vector3<f64>,
        direction: Vector3<f64>,
        t_near: f64,
        t_far: f64,
    ) -> Result<Self> {
        if !(direction.norm() > 0.0) {
            return Err(Error::InvalidRay("zero direction".into()));
        }
        Self::with_bounds(origin, direction, t_near, t_far)
    }

    fn with_bounds(
        origin: Vector3<f64>,
        direction: Vector3<f64>,
        t_near: f64,
        t_far: f64,
    ) -> Result<Self> {
        if !(t_near >= 0.0 && t_far > t_near) {
            return Err(Error::InvalidRay(format!(
                "bounds [{t_near}, {t_far}] are not 0 <= near < far"
            )));
        }
        if !origin.iter().chain(direction.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidRay("non-finite origin or direction".into()));
        }
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub width: usize,
    pub height: usize,
    pub f_init: f64,
    pub delta_f: f64,
    pub principal_point: Vector2<f64>,
}

impl PinholeCamera {
    pub fn new(
        width: usize,
        height: usize,
        f_init: f64,
        principal_point: Vector2<f64>,
    ) -> Result<Self> {
        let cam = Self {
            width,
            height,
            f_init,
            delta_f: 0.0,
            principal_point,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Principal point at the image center.
    pub fn centered(width: usize, height: usize, f_init: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            f_init,
            Vector2::new(width as f64 / 2.0, height as f64 / 2.0),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("empty image".into()));
        }
        effective_focal(self)?;
        let (cx, cy) = (self.principal_point.x, self.principal_point.y);
        if !(cx >= 0.0 && cx <= self.width as f64 && cy >= 0.0 && cy <= self.height as f64) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside image"
            )));
        }
        Ok(())
    }

    pub fn with_delta_f(mut self, delta_f: f64) -> Self {
        self.delta_f = delta_f;
        self
    }
}

/// `f_init + delta_f`, rejecting non-positive focal lengths.
pub fn effective_focal(cam: &PinholeCamera) -> Result<f64> {
    let f = cam.f_init + cam.delta_f;
    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::InvalidCamera(format!("focal length {f} is not positive")));
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if !(ortho <= GEOMETRY_TOL) {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (max deviation {ortho:e})"
            )));
        }
        let det = self.rotation.determinant();
        if !((det - 1.0).abs() <= GEOMETRY_TOL) {
            return Err(Error::InvalidPose(format!("rotation determinant {det}")));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(())
    }

    /// `self · other` as rigid transforms.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle (radians) of `self⁻¹ · other`.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Learnable 6-DoF pose correction: axis-angle rotation then translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseResidual {
    pub xi: [f64; 6],
}

impl PoseResidual {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        Vector3::new(self.xi[0], self.xi[1], self.xi[2])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.xi[3], self.xi[4], self.xi[5])
    }

    /// The rigid transform `ΔP` this residual encodes.
    pub fn to_pose(&self) -> Pose {
        Pose {
            rotation: so3_exp(&self.rotation_vector()),
            translation: self.translation(),
        }
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues coefficients `a = sin θ/θ`, `b = (1 − cos θ)/θ²` and their
/// derivatives divided by θ, `a'/θ` and `b'/θ`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-3 {
        let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        let b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        let da = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0;
        let db = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0;
        (a, b, da, db)
    } else {
        let (s, c) = theta.sin_cos();
        let a = s / theta;
        let b = (1.0 - c) / t2;
        let da = (theta * c - s) / (t2 * theta);
        let db = (theta * s - 2.0 * (1.0 - c)) / (t2 * t2);
        (a, b, da, db)
    }
}

/// Exponential map from an axis-angle vector to a rotation matrix.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let (a, b, _, _) = rodrigues_coefficients(theta);
    Matrix3::identity() + k * a + k * k * b
}

/// `∂ so3_exp(ω) / ∂ω_i` for i = 0, 1, 2.
pub fn so3_exp_jacobians(omega: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta = omega.norm();
    let k = skew(omega);
    let k2 = k * k;
    let (a, b, da, db) = rodrigues_coefficients(theta);
    std::array::from_fn(|i| {
        let e = skew(&Vector3::ith(i, 1.0));
        e * a + (e * k + k * e) * b + k * (da * omega[i]) + k2 * (db * omega[i])
    })
}

/// `P = P_init · ΔP`.
pub fn compose_pose(pose: &Pose, residual: &PoseResidual) -> Pose {
    if residual.xi == [0.0; 6] {
        return *pose;
    }
    pose.compose(&residual.to_pose())
}

fn camera_direction(cam: &PinholeCamera, focal: f64, px: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(
        (px.x - cam.principal_point.x) / focal,
        -(px.y - cam.principal_point.y) / focal,
        -1.0,
    )
}

fn check_pixel(cam: &PinholeCamera, px: &Vector2<f64>) -> Result<()> {
    if !(px.x >= 0.0 && px.x <= cam.width as f64 && px.y >= 0.0 && px.y <= cam.height as f64) {
        return Err(Error::PixelOutOfBounds {
            x: px.x,
            y: px.y,
            width: cam.width,
            height: cam.height,
        });
    }
    Ok(())
}

/// Back-project pixel `px` through the camera into a unit-direction world ray.
pub fn pixel_ray(
    cam: &PinholeCamera,
    pose: &Pose,
    px: Vector2<f64>,
    bounds: (f64, f64),
) -> Result<Ray> {
    check_pixel(cam, &px)?;
    let focal = effective_focal(cam)?;
    let dir = (pose.rotation * camera_direction(cam, focal, &px)).normalize();
    Ray::new(pose.translation, dir, bounds.0, bounds.1)
}

/// Gradient with respect to one frame's camera residuals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraGrad {
    pub xi: [f64; 6],
    pub delta_f: f64,
}

impl CameraGrad {
    pub fn add(&mut self, other: &CameraGrad) {
        for (a, b) in self.xi.iter_mut().zip(other.xi) {
            *a += b;
        }
        self.delta_f += other.delta_f;
    }
}

/// A frame's camera: intrinsics (carrying `delta_f`), initial pose and the
/// learnable pose residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCamera {
    pub intrinsics: PinholeCamera,
    pub pose_init: Pose,
    pub residual: PoseResidual,
}

impl FrameCamera {
    pub fn new(intrinsics: PinholeCamera, pose_init: Pose) -> Self {
        Self {
            intrinsics,
            pose_init,
            residual: PoseResidual::zero(),
        }
    }

    pub fn pose(&self) -> Pose {
        compose_pose(&self.pose_init, &self.residual)
    }

    pub fn ray(&self, px: Vector2<f64>, bounds: (f64, f64)) -> Result<Ray> {
        pixel_ray(&self.intrinsics, &self.pose(), px, bounds)
    }

    /// Pull back gradients on a pixel ray's origin and unit direction onto
    /// the pose residual and focal residual.
    pub fn ray_backward(
        &self,
        px: Vector2<f64>,
        grad_origin: &Vector3<f64>,
        grad_direction: &Vector3<f64>,
    ) -> Result<CameraGrad> {
        let focal = effective_focal(&self.intrinsics)?;
        let r0 = self.pose_init.rotation;
        let omega = self.residual.rotation_vector();
        let r_res = so3_exp(&omega);
        let rotation = r0 * r_res;
        let dc = camera_direction(&self.intrinsics, focal, &px);
        let u = rotation * dc;
        let norm = u.norm();
        let d = u / norm;
        let grad_u = (grad_direction - d * d.dot(grad_direction)) / norm;

        // u = R0 · Exp(ω) · dc
        let grad_rotation = grad_u * dc.transpose();
        let grad_exp = r0.transpose() * grad_rotation;
        let jac = so3_exp_jacobians(&omega);
        let grad_dc = rotation.transpose() * grad_u;

        let mut out = CameraGrad::default();
        for i in 0..3 {
            out.xi[i] = grad_exp.component_mul(&jac[i]).sum();
        }
        // origin = R0 · v + t0
        let grad_v = r0.transpose() * grad_origin;
        out.xi[3..].copy_from_slice(grad_v.as_slice());
        let (ox, oy) = (
            px.x - self.intrinsics.principal_point.x,
            px.y - self.intrinsics.principal_point.y,
        );
        out.delta_f = grad_dc.x * (-ox / (focal * focal)) + grad_dc.y * (oy / (focal * focal));
        Ok(out)
    }
}

/// Rotation, translation and focal discrepancy between two cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraError {
    pub rotation_deg: f64,
    pub translation: f64,
    /// Effective focal difference in pixels.
    pub focal: f64,
}

/// Compare the effective pose and focal of `estimate` with `truth`.
pub fn camera_error(estimate: &FrameCamera, truth: &FrameCamera) -> Result<CameraError> {
    let (a, b) = (estimate.pose(), truth.pose());
    Ok(CameraError {
        rotation_deg: a.rotation_angle_to(&b).to_degrees(),
        translation: (a.translation - b.translation).norm(),
        focal: (effective_focal(&estimate.intrinsics)? - effective_focal(&truth.intrinsics)?).abs(),
    })
}

/// `truth` with its initial pose right-multiplied by a rotation of
/// `rotation_deg` about `axis` and shifted by `translation` (world frame),
/// and its initial focal scaled by `1 + focal_fraction`.
pub fn perturb_camera(
    truth: &FrameCamera,
    axis: &Vector3<f64>,
    rotation_deg: f64,
    translation: &Vector3<f64>,
    focal_fraction: f64,
) -> Result<FrameCamera> {
    let n = axis.norm();
    if !(n > 0.0) {
        return Err(Error::InvalidPose("zero rotation axis".into()));
    }
    let rotation = so3_exp(&(axis * (rotation_deg.to_radians() / n)));
    let mut cam = *truth;
    cam.pose_init = Pose::new(
        truth.pose_init.rotation * rotation,
        truth.pose_init.translation + translation,
    )?;
    cam.intrinsics.f_init *= 1.0 + focal_fraction;
    cam.intrinsics.validate()?;
    Ok(cam)
}

/// Parameters of the normalized-device-coordinate warp for forward-facing
/// scenes. The warp is defined in the world frame and uses one fixed
/// reference intrinsic for every frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdcFrame {
    pub focal: f64,
    pub width: f64,
    pub height: f64,
    pub near: f64,
}

impl NdcFrame {
    pub fn from_camera(cam: &PinholeCamera, near: f64) -> Result<Self> {
        if !(near > 0.0) {
            return Err(Error::InvalidRay(format!("near plane {near} must be positive")));
        }
        Ok(Self {
            focal: effective_focal(cam)?,
            width: cam.width as f64,
            height: cam.height as f64,
            near,
        })
    }

    fn ax(&self) -> f64 {
        2.0 * self.focal / self.width
    }

    fn ay(&self) -> f64 {
        2.0 * self.focal / self.height
    }

    /// World point to NDC: `(−a_x·x/z, −a_y·y/z, 1 + 2n/z)` with
    /// `a_x = 2f/W`, `a_y = 2f/H`. Valid for `z < 0`.
    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            -self.ax() * p.x / p.z,
            -self.ay() * p.y / p.z,
            1.0 + 2.0 * self.near / p.z,
        )
    }

    /// Inverse of [`NdcFrame::project`]: `z = 2n/(z' − 1)`,
    /// `x = −x'·z/a_x`, `y = −y'·z/a_y`. Valid for `z' < 1`.
    pub fn unproject(&self, q: &Vector3<f64>) -> Vector3<f64> {
        let z = 2.0 * self.near / (q.z - 1.0);
        Vector3::new(-q.x * z / self.ax(), -q.y * z / self.ay(), z)
    }

    /// NDC ray parameter of the world point at depth `z` (world z < 0) along
    /// any warped ray: `t = 1 + n/z`.
    pub fn depth_to_t(&self, z: f64) -> f64 {
        1.0 + self.near / z
    }

    /// Warp a world ray into NDC. The result has `t ∈ [0, 1]`: `t = 0` is the
    /// intersection with the near plane `z = −n` (NDC z = −1) and `t → 1`
    /// corresponds to infinite depth (NDC z = +1).
    pub fn warp(&self, ray: &Ray) -> Result<Ray> {
        let (o, d) = (ray.origin, ray.direction);
        if o.z < -self.near - GEOMETRY_TOL {
            return Err(Error::InvalidRay(format!(
                "origin z = {} lies behind the near plane z = {}",
                o.z, -self.near
            )));
        }
        if !(d.z < 0.0) {
            return Err(Error::InvalidRay("ray does not point toward -z".into()));
        }
        let s = -(self.near + o.z) / d.z;
        let p = o + d * s;
        let n = self.near;
        let origin = Vector3::new(self.ax() * p.x / n, self.ay() * p.y / n, -1.0);
        let direction = Vector3::new(
            -self.ax() * (d.x / d.z + p.x / n),
            -self.ay() * (d.y / d.z + p.y / n),
            2.0,
        );
        Ray::unnormalized(origin, direction, 0.0, 1.0)
    }

    /// Pull gradients on the NDC origin/direction back to the world ray's
    /// origin and direction.
    pub fn warp_backward(
        &self,
        ray: &Ray,
        grad_origin: &Vector3<f64>,
        grad_direction: &Vector3<f64>,
    ) -> (Vector3<f64>, Vector3<f64>) {
        let (o, d) = (ray.origin, ray.direction);
        let (n, ax, ay) = (self.near, self.ax(), self.ay());
        let s = -(n + o.z) / d.z;
        let ds_doz = -1.0 / d.z;
        let ds_ddz = -s / d.z;

        let g_px = ax / n * (grad_origin.x - grad_direction.x);
        let g_py = ay / n * (grad_origin.y - grad_direction.y);

        let mut g_o = Vector3::zeros();
        let mut g_d = Vector3::zeros();
        // p = o + s·d
        g_o.x = g_px;
        g_o.y = g_py;
        g_o.z = (g_px * d.x + g_py * d.y) * ds_doz;
        g_d.x = g_px * s - ax * grad_direction.x / d.z;
        g_d.y = g_py * s - ay * grad_direction.y / d.z;
        g_d.z = (g_px * d.x + g_py * d.y) * ds_ddz
            + ax * grad_direction.x * d.x / (d.z * d.z)
            + ay * grad_direction.y * d.y / (d.z * d.z);
        (g_o, g_d)
    }
}

/// Warp `ray` into NDC using `cam`'s effective focal length and image size.
pub fn to_ndc(ray: &Ray, cam: &PinholeCamera, near: f64) -> Result<Ray> {
    NdcFrame::from_camera(cam, near)?.warp(ray)
}

/// One frame in a camera file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub f_init: f64,
    pub principal_point: [f64; 2],
    /// Row-major camera-to-world rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

/// `cameras.json`: image size plus one record per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<CameraRecord>,
}

impl CameraRecord {
    pub fn from_camera(cam: &FrameCamera) -> Self {
        let r = cam.pose_init.rotation;
        Self {
            f_init: cam.intrinsics.f_init,
            principal_point: [cam.intrinsics.principal_point.x, cam.intrinsics.principal_point.y],
            rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            translation: [
                cam.pose_init.translation.x,
                cam.pose_init.translation.y,
                cam.pose_init.translation.z,
            ],
        }
    }

    pub fn to_camera(&self, width: usize, height: usize) -> Result<FrameCamera> {
        let intrinsics = PinholeCamera::new(
            width,
            height,
            self.f_init,
            Vector2::new(self.principal_point[0], self.principal_point[1]),
        )?;
        let rotation = Matrix3::from_row_slice(&self.rotation);
        let pose = Pose::new(rotation, Vector3::from(self.translation))?;
        Ok(FrameCamera::new(intrinsics, pose))
    }
}

impl CameraFile {
    pub fn from_cameras(cams: &[FrameCamera]) -> Result<Self> {
        let first = cams
            .first()
            .ok_or_else(|| Error::InvalidCamera("no cameras".into()))?;
        Ok(Self {
            width: first.intrinsics.width,
            height: first.intrinsics.height,
            frames: cams.iter().map(CameraRecord::from_camera).collect(),
        })
    }

    pub fn to_cameras(&self) -> Result<Vec<FrameCamera>> {
        self.frames
            .iter()
            .map(|r| r.to_camera(self.width, self.height))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CameraFile = serde_json::from_str(&text)
            .map_err(|e| Error::format("camera JSON", path, e.to_string()))?;
        file.to_cameras()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cam() -> PinholeCamera {
        PinholeCamera::centered(64, 48, 50.0).unwrap()
    }

    #[test]
    fn effective_focal_examples() {
        let c = cam().with_delta_f(0.0);
        assert_eq!(effective_focal(&PinholeCamera { f_init: 500.0, ..c }).unwrap(), 500.0);
        let c2 = PinholeCamera {
            f_init: 500.0,
            delta_f: -12.5,
            ..c
        };
        assert_eq!(effective_focal(&c2).unwrap(), 487.5);
        let c3 = PinholeCamera {
            f_init: 500.0,
            delta_f: -500.0,
            ..c
        };
        assert!(matches!(effective_focal(&c3), Err(Error::InvalidCamera(_))));
    }

    #[test]
    fn compose_pose_examples() {
        let p = Pose::new(so3_exp(&Vector3::new(0.1, -0.2, 0.3)), Vector3::new(1.0, 2.0, 3.0))
            .unwrap();
        assert_eq!(compose_pose(&p, &PoseResidual::zero()), p);

        let t = compose_pose(
            &Pose::identity(),
            &PoseResidual {
                xi: [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            },
        );
        assert_eq!(t.translation, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(t.rotation, Matrix3::identity());

        let r = compose_pose(
            &Pose::identity(),
            &PoseResidual {
                xi: [0.0, 0.0, PI, 0.0, 0.0, 0.0],
            },
        );
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        assert!((r.rotation - expected).amax() < 1e-12);
    }

    #[test]
    fn pixel_ray_examples() {
        let c = cam();
        let center = pixel_ray(&c, &Pose::identity(), Vector2::new(32.0, 24.0), (0.0, 10.0))
            .unwrap();
        assert!((center.direction - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);

        // one focal length to the right would be x = 82, outside a 64-wide
        // image; use a wider camera.
        let wide = PinholeCamera::centered(200, 48, 50.0).unwrap();
        let r = pixel_ray(&wide, &Pose::identity(), Vector2::new(150.0, 24.0), (0.0, 10.0))
            .unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((r.direction - Vector3::new(s, 0.0, -s)).norm() < 1e-15);

        let rot = so3_exp(&Vector3::new(0.0, 0.3, 0.0));
        let pose = Pose::new(rot, Vector3::new(0.5, 0.0, 0.0)).unwrap();
        let rr = pixel_ray(&wide, &pose, Vector2::new(150.0, 24.0), (0.0, 10.0)).unwrap();
        assert!((rr.direction - rot * Vector3::new(s, 0.0, -s)).norm() < 1e-15);
        assert_eq!(rr.origin, Vector3::new(0.5, 0.0, 0.0));

        assert!(matches!(
            pixel_ray(&c, &Pose::identity(), Vector2::new(-1.0, 3.0), (0.0, 1.0)),
            Err(Error::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn pixel_ray_directions_are_unit_on_grid() {
        let c = PinholeCamera::centered(16, 16, 12.0).unwrap();
        let pose = Pose::new(so3_exp(&Vector3::new(0.2, 0.1, -0.4)), Vector3::zeros()).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let r = pixel_ray(&c, &pose, px, (0.0, 1.0)).unwrap();
                assert!((r.direction.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ndc_examples() {
        let c = cam();
        let ndc = NdcFrame::from_camera(&c, 1.0).unwrap();
        let axis = Ray::new(Vector3::zeros(), Vector3::new(0.0, 0.0, -1.0), 0.0, 10.0).unwrap();
        let w = to_ndc(&axis, &c, 1.0).unwrap();
        assert_eq!(w.origin.z, -1.0);
        assert_eq!(w.at(1.0).z, 1.0);
        assert_eq!((w.t_near, w.t_far), (0.0, 1.0));

        // off-axis ray: NDC points along the warped ray must be the closed-form
        // projections of the world points.
        let d = Vector3::new(0.2, -0.1, -1.0).normalize();
        let o = Vector3::new(0.05, 0.02, 0.0);
        let world = Ray::new(o, d, 0.0, 10.0).unwrap();
        let warped = ndc.warp(&world).unwrap();
        for s in [1.5, 2.0, 5.0, 40.0] {
            let p = world.at(s);
            let q = ndc.project(&p);
            let t = ndc.depth_to_t(p.z);
            assert!((warped.at(t) - q).norm() < 1e-12, "s={s}");
        }

        let behind = Ray::new(Vector3::new(0.0, 0.0, -2.0), Vector3::new(0.0, 0.0, -1.0), 0.0, 1.0)
            .unwrap();
        assert!(matches!(ndc.warp(&behind), Err(Error::InvalidRay(_))));
    }

    #[test]
    fn camera_record_rejects_non_orthonormal_rotation() {
        let rec = CameraRecord {
            f_init: 10.0,
            principal_point: [4.0, 4.0],
            rotation: [1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation: [0.0; 3],
        };
        assert!(matches!(rec.to_camera(8, 8), Err(Error::InvalidPose(_))));
    }
}
