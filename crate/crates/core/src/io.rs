//! Image containers and the PNG, PFM and PGM codecs.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vector3<f64>>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, fill: Vector3<f64>) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<Vector3<f64>>) -> Result<Self> {
        crate::error::check_len("image pixels", data.len(), width * height)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: Vector3<f64>) {
        self.data[y * self.width + x] = v;
    }

    /// Luma with weights 0.299, 0.587, 0.114.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|c| 0.299 * c.x + 0.587 * c.y + 0.114 * c.z)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (p, c) in buf.pixels_mut().zip(&self.data) {
            *p = image::Rgb([quantize(c.x), quantize(c.y), quantize(c.z)]);
        }
        ensure_parent(path)?;
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| match e {
                image::ImageError::IoError(source) => Error::io(path, source),
                other => Error::format("PNG", path, other.to_string()),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .pixels()
            .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data,
        })
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major single-channel float image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Write as little-endian grayscale PFM (`Pf`, scale −1), rows stored
    /// bottom to top. Values are narrowed to f32.
    pub fn save_pfm(&self, path: &Path) -> Result<()> {
        let mut out = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        out.reserve(4 * self.data.len());
        for row in (0..self.height).rev() {
            for v in &self.data[row * self.width..(row + 1) * self.width] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        write_file(path, &out)
    }

    pub fn load_pfm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::format("PFM", path, reason.to_string());
        let (tokens, body) = header_tokens(&bytes, 4).ok_or_else(|| bad("truncated header"))?;
        if tokens[0] != "Pf" {
            return Err(bad(&format!("expected magic Pf, found {:?}", tokens[0])));
        }
        let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
        let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(bad("scale must be nonzero"));
        }
        let little = scale < 0.0;
        if body.len() != 4 * width * height {
            return Err(bad(&format!(
                "expected {} data bytes, found {}",
                4 * width * height,
                body.len()
            )));
        }
        let mut data = vec![0.0; width * height];
        for (i, chunk) in body.chunks_exact(4).enumerate() {
            let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            let (row, col) = (height - 1 - i / width, i % width);
            data[row * width + col] = v as f64;
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    /// Binary PGM (`P5`, maxval 255).
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        write_file(path, &out)
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::format("PGM", path, reason.to_string());
        let (tokens, body) = header_tokens(&bytes, 4).ok_or_else(|| bad("truncated header"))?;
        if tokens[0] != "P5" {
            return Err(bad(&format!("expected magic P5, found {:?}", tokens[0])));
        }
        let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
        if tokens[3] != "255" {
            return Err(bad("only maxval 255 is supported"));
        }
        if body.len() != width * height {
            return Err(bad(&format!(
                "expected {} data bytes, found {}",
                width * height,
                body.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data: body.to_vec(),
        })
    }
}

/// Split a Netpbm-style header into `count` whitespace-separated tokens
/// (skipping `#` comments) followed by exactly one whitespace byte.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, &[u8])> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return None;
    }
    Some((tokens, &bytes[i + 1..]))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::format("JSON", path, e.to_string()))
}
