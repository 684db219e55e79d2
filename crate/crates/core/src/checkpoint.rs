//! Binary checkpoints: one line of JSON header followed by raw
//! little-endian f32 blobs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Aabb, GridField};
use crate::geometry::{CameraRecord, FrameCamera, NdcFrame, PoseResidual};

/// Per-frame camera state: the initial camera plus learned residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraState {
    #[serde(flatten)]
    pub record: CameraRecord,
    pub delta_f: f64,
    pub residual: PoseResidual,
}

impl CameraState {
    pub fn from_camera(cam: &FrameCamera) -> Self {
        Self {
            record: CameraRecord::from_camera(cam),
            delta_f: cam.intrinsics.delta_f,
            residual: cam.residual,
        }
    }

    pub fn to_camera(&self, width: usize, height: usize) -> Result<FrameCamera> {
        let mut cam = self.record.to_camera(width, height)?;
        cam.intrinsics.delta_f = self.delta_f;
        cam.residual = self.residual;
        Ok(cam)
    }
}

/// Adam moments for the camera residuals (`xi` then `delta_f` per frame).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraMoments {
    pub m: Vec<[f64; 7]>,
    pub v: Vec<[f64; 7]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub resolution: [usize; 3],
    pub bbox: Aabb,
    pub frame_count: usize,
    pub dtype: String,
    pub byte_order: String,
    pub blobs: Vec<BlobInfo>,
    pub iteration: u64,
    pub image_size: [usize; 2],
    pub cameras: Vec<CameraState>,
    pub adam_step: u64,
    pub camera_moments: CameraMoments,
    #[serde(default)]
    pub ndc: Option<NdcFrame>,
}

/// Everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub field: GridField<f32>,
    pub cameras: Vec<FrameCamera>,
    pub iteration: u64,
    pub adam_step: u64,
    /// Field Adam moments `(m_sigma, v_sigma, m_color, v_color)`; absent
    /// for a bare field.
    pub field_moments: Option<[Vec<f32>; 4]>,
    pub camera_moments: CameraMoments,
    /// Reconstruction frame the field lives in.
    pub ndc: Option<NdcFrame>,
}

const BLOB_NAMES: [&str; 6] = ["sigma", "color", "adam_m_sigma", "adam_v_sigma", "adam_m_color", "adam_v_color"];

impl Checkpoint {
    pub fn bare(field: GridField<f32>, cameras: Vec<FrameCamera>) -> Self {
        Self {
            field,
            cameras,
            iteration: 0,
            adam_step: 0,
            field_moments: None,
            camera_moments: CameraMoments::default(),
            ndc: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blobs: Vec<&[f32]> = vec![&self.field.sigma, &self.field.color];
        if let Some(m) = &self.field_moments {
            blobs.extend(m.iter().map(Vec::as_slice));
        }
        let (w, h) = self
            .cameras
            .first()
            .map_or((0, 0), |c| (c.intrinsics.width, c.intrinsics.height));
        let header = CheckpointHeader {
            resolution: self.field.resolution(),
            bbox: self.field.bbox(),
            frame_count: crate::field::RadianceField::frame_count(&self.field),
            dtype: "f32".into(),
            byte_order: "little".into(),
            blobs: blobs
                .iter()
                .zip(BLOB_NAMES)
                .map(|(b, name)| BlobInfo {
                    name: name.into(),
                    len: b.len(),
                })
                .collect(),
            iteration: self.iteration,
            image_size: [w, h],
            cameras: self.cameras.iter().map(CameraState::from_camera).collect(),
            adam_step: self.adam_step,
            camera_moments: self.camera_moments.clone(),
            ndc: self.ndc,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for b in blobs {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format("checkpoint", path, reason);
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[..split]).map_err(|e| bad(e.to_string()))?;
        if header.dtype != "f32" || header.byte_order != "little" {
            return Err(bad(format!(
                "unsupported dtype/byte order {}/{}",
                header.dtype, header.byte_order
            )));
        }
        let body = &bytes[split + 1..];
        let expected: usize = header.blobs.iter().map(|b| 4 * b.len).sum();
        if body.len() != expected {
            return Err(bad(format!(
                "expected {expected} bytes of parameters, found {}",
                body.len()
            )));
        }
        if !(header.blobs.len() == 2 || header.blobs.len() == 6) {
            return Err(bad(format!("unexpected blob count {}", header.blobs.len())));
        }
        let mut blobs = Vec::with_capacity(header.blobs.len());
        let mut offset = 0;
        for (info, name) in header.blobs.iter().zip(BLOB_NAMES) {
            if info.name != name {
                return Err(bad(format!("expected blob {name}, found {}", info.name)));
            }
            let chunk = &body[offset..offset + 4 * info.len];
            offset += 4 * info.len;
            blobs.push(
                chunk
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect::<Vec<f32>>(),
            );
        }
        let mut blobs = blobs.into_iter();
        let sigma = blobs.next().unwrap_or_default();
        let color = blobs.next().unwrap_or_default();
        let field = GridField::from_params(header.resolution, header.bbox, header.frame_count, sigma, color)?;
        let rest: Vec<Vec<f32>> = blobs.collect();
        let field_moments = match <[Vec<f32>; 4]>::try_from(rest) {
            Ok(m) => {
                for b in &m[..2] {
                    crate::error::check_len("sigma moments", b.len(), field.sigma.len())?;
                }
                for b in &m[2..] {
                    crate::error::check_len("color moments", b.len(), field.color.len())?;
                }
                Some(m)
            }
            Err(_) => None,
        };
        let [w, h] = header.image_size;
        let cameras = header
            .cameras
            .iter()
            .map(|c| c.to_camera(w, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            field,
            cameras,
            iteration: header.iteration,
            adam_step: header.adam_step,
            field_moments,
            camera_moments: header.camera_moments,
            ndc: header.ndc,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
