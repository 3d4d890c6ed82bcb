//! Depth frames and hole filling.
//!
//! Binary layout (little-endian): 4-byte magic `DPTH`, `u32` width, `u32`
//! height, then `width * height` `f32` depths in meters, row-major. Invalid
//! pixels are written as 0.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::camera::{is_valid_depth, CameraIntrinsics};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    width: u32,
    height: u32,
    depth: Vec<f32>,
    pub intrinsics: CameraIntrinsics,
}

impl DepthFrame {
    pub fn new(width: u32, height: u32, depth: Vec<f32>, intrinsics: CameraIntrinsics) -> Result<Self> {
        intrinsics.validate()?;
        let expected = width as usize * height as usize;
        if depth.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} depth values ({width}x{height})"),
                actual: depth.len().to_string(),
            });
        }
        Ok(Self {
            width,
            height,
            depth,
            intrinsics,
        })
    }

    /// Frame with every pixel invalid.
    pub fn empty(width: u32, height: u32, intrinsics: CameraIntrinsics) -> Result<Self> {
        Self::new(width, height, vec![0.0; width as usize * height as usize], intrinsics)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.depth
    }

    /// Raw depth at an integer pixel, or `None` when out of bounds.
    pub fn get(&self, x: i64, y: i64) -> Option<f64> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return None;
        }
        Some(self.depth[y as usize * self.width as usize + x as usize] as f64)
    }

    pub fn set(&mut self, x: u32, y: u32, z: f32) {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) outside frame");
        self.depth[y as usize * self.width as usize + x as usize] = z;
    }

    /// Nearest integer pixel for `(u, v)`, if it falls inside the frame.
    pub fn pixel(&self, u: f64, v: f64) -> Option<(i64, i64)> {
        if !u.is_finite() || !v.is_finite() {
            return None;
        }
        let (x, y) = (u.round() as i64, v.round() as i64);
        self.get(x, y).map(|_| (x, y))
    }

    /// Depth at `(u, v)`; when that pixel is invalid, the mean of the valid
    /// depths in the square window of half-width `radius` around it. `None`
    /// when the window holds no valid depth.
    pub fn fill_depth(&self, u: f64, v: f64, radius: u32) -> Result<Option<f64>> {
        let (x, y) = self.pixel(u, v).ok_or_else(|| {
            Error::InvalidArgument(format!("pixel ({u}, {v}) outside {}x{} frame", self.width, self.height))
        })?;
        let center = self.get(x, y).unwrap_or(f64::NAN);
        if is_valid_depth(center) {
            return Ok(Some(center));
        }
        let r = radius as i64;
        let (mut sum, mut count) = (0.0, 0usize);
        for yy in y - r..=y + r {
            for xx in x - r..=x + r {
                if let Some(z) = self.get(xx, yy).filter(|z| is_valid_depth(*z)) {
                    sum += z;
                    count += 1;
                }
            }
        }
        Ok((count > 0).then(|| sum / count as f64))
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(DEPTH_MAGIC)?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        for &z in &self.depth {
            let z = if is_valid_depth(z as f64) { z } else { 0.0 };
            w.write_all(&z.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_from(mut r: impl Read, intrinsics: CameraIntrinsics) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Schema(format!("reading depth frame: {e}")))?;
        Self::from_bytes(&bytes, intrinsics)
    }

    pub fn from_bytes(bytes: &[u8], intrinsics: CameraIntrinsics) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Truncated("depth frame header".into()));
        }
        if &bytes[..4] != DEPTH_MAGIC {
            return Err(Error::Schema("depth frame magic mismatch".into()));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let n = width as usize * height as usize;
        let body = &bytes[12..];
        if body.len() < n * 4 {
            return Err(Error::Truncated(format!(
                "depth frame expects {n} values, found {}",
                body.len() / 4
            )));
        }
        if body.len() > n * 4 {
            return Err(Error::Schema("trailing bytes after depth frame".into()));
        }
        let depth = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(width, height, depth, intrinsics)
    }

    pub fn load(path: impl AsRef<Path>, intrinsics: CameraIntrinsics) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, intrinsics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: u32, h: u32) -> DepthFrame {
        DepthFrame::empty(w, h, CameraIntrinsics::centered(100.0, 100.0, w, h).unwrap()).unwrap()
    }

    #[test]
    fn valid_center_is_returned_unchanged() {
        let mut f = frame(8, 8);
        f.set(3, 4, 1.5);
        assert_eq!(f.fill_depth(3.2, 3.9, 2).unwrap(), Some(1.5));
    }

    #[test]
    fn hole_takes_window_mean() {
        let mut f = frame(9, 9);
        f.set(3, 4, 2.0);
        f.set(5, 4, 2.2);
        f.set(4, 6, 2.4);
        // Outside the radius-2 window.
        f.set(0, 0, 7.0);
        let z = f.fill_depth(4.0, 4.0, 2).unwrap().unwrap();
        let expected = (2.0f32 as f64 + 2.2f32 as f64 + 2.4f32 as f64) / 3.0;
        assert_eq!(z, expected);
        assert!((z - 2.2).abs() < 1e-6);
    }

    #[test]
    fn all_invalid_window_is_absent() {
        let mut f = frame(9, 9);
        f.set(8, 8, 3.0);
        f.set(4, 5, f32::NAN);
        f.set(3, 3, 9.5);
        assert_eq!(f.fill_depth(4.0, 4.0, 2).unwrap(), None);
    }

    #[test]
    fn window_is_clipped_at_borders() {
        let mut f = frame(4, 4);
        f.set(1, 1, 3.0);
        assert_eq!(f.fill_depth(0.0, 0.0, 5).unwrap(), Some(3.0));
    }

    #[test]
    fn outside_frame_is_an_error() {
        let f = frame(4, 4);
        assert!(f.fill_depth(-1.0, 0.0, 1).is_err());
        assert!(f.fill_depth(3.6, 0.0, 1).is_err());
    }

    #[test]
    fn binary_round_trip_zeroes_invalid_pixels() {
        let mut f = frame(3, 2);
        f.set(0, 0, 1.25);
        f.set(2, 1, f32::NAN);
        f.set(1, 1, -2.0);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 6 * 4);
        assert_eq!(&buf[..4], b"DPTH");
        let g = DepthFrame::from_bytes(&buf, f.intrinsics).unwrap();
        assert_eq!(g.data(), &[1.25, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            DepthFrame::from_bytes(&buf[..20], f.intrinsics),
            Err(Error::Truncated(_))
        ));
    }
}
