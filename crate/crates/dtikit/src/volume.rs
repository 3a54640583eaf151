//! Multi-channel 3D volume container and its two-file on-disk format:
//! a human-readable JSON header (`<stem>.hdr.json`) next to a little-endian
//! f32 payload (`<stem>.raw`).
//!
//! Linear index convention: `((z*Y + y)*X + x)*C + c` — x fastest among the
//! spatial axes, channel last. Identical volumes serialize to identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const DTYPE_F32LE: &str = "f32le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 4],
    pub voxel_size: [f64; 3],
    pub dtype: String,
    pub channel_names: Vec<String>,
}

impl VolumeHeader {
    /// Parses and validates a header document.
    pub fn parse(text: &str) -> Result<Self> {
        let header: VolumeHeader = serde_json::from_str(text)
            .map_err(|e| Error::format(format!("bad volume header: {e}")))?;
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dtype != DTYPE_F32LE {
            return Err(Error::format(format!(
                "unknown dtype tag {:?}, expected {:?}",
                self.dtype, DTYPE_F32LE
            )));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::format("volume dims must all be nonzero"));
        }
        if self.element_count().is_none() {
            return Err(Error::format("volume dims overflow"));
        }
        if self.channel_names.len() != self.dims[3] {
            return Err(Error::format(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.dims[3]
            )));
        }
        if self.voxel_size.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::format("voxel_size entries must be finite and positive"));
        }
        Ok(())
    }

    pub fn element_count(&self) -> Option<usize> {
        self.dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    dims: (usize, usize, usize, usize),
    pub voxel_size: [f64; 3],
    pub channel_names: Vec<String>,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(
        dims: (usize, usize, usize, usize),
        voxel_size: [f64; 3],
        channel_names: Vec<String>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let (x, y, z, c) = dims;
        let expect = x
            .checked_mul(y)
            .and_then(|v| v.checked_mul(z))
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::validation("volume dims overflow"))?;
        if x == 0 || y == 0 || z == 0 || c == 0 {
            return Err(Error::validation("volume dims must all be nonzero"));
        }
        if data.len() != expect {
            return Err(Error::validation(format!(
                "volume data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if channel_names.len() != c {
            return Err(Error::validation(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                c
            )));
        }
        Ok(Volume3D {
            dims,
            voxel_size,
            channel_names,
            data,
        })
    }

    pub fn zeros(
        dims: (usize, usize, usize, usize),
        voxel_size: [f64; 3],
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let len = dims.0 * dims.1 * dims.2 * dims.3;
        Self::new(dims, voxel_size, channel_names, vec![0.0; len])
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn channels(&self) -> usize {
        self.dims.3
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize, c: usize) -> usize {
        let (dx, dy, _, dc) = self.dims;
        ((z * dy + y) * dx + x) * dc + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f32 {
        self.data[self.index(x, y, z, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, c: usize, value: f32) {
        let idx = self.index(x, y, z, c);
        self.data[idx] = value;
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n == name)
    }

    /// Extracts one z-slice of one channel as an f64 matrix (rows = y).
    pub fn channel_slice(&self, c: usize, z: usize) -> Result<Mat> {
        let (dx, dy, dz, dc) = self.dims;
        if c >= dc || z >= dz {
            return Err(Error::validation(format!(
                "slice (channel {c}, z {z}) out of range for dims {:?}",
                self.dims
            )));
        }
        Ok(Mat::from_fn(dy, dx, |y, x| self.get(x, y, z, c) as f64))
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            dims: [self.dims.0, self.dims.1, self.dims.2, self.dims.3],
            voxel_size: self.voxel_size,
            dtype: DTYPE_F32LE.to_string(),
            channel_names: self.channel_names.clone(),
        }
    }

    /// Builds a volume from a validated header and a raw payload.
    pub fn from_header_and_payload(header: &VolumeHeader, payload: &[u8]) -> Result<Self> {
        header.validate()?;
        let count = header.element_count().unwrap();
        let expect_bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::format("payload size overflow"))?;
        if payload.len() != expect_bytes {
            return Err(Error::format(format!(
                "raw payload is {} bytes, header implies {}",
                payload.len(),
                expect_bytes
            )));
        }
        let mut data = Vec::with_capacity(count);
        for chunk in payload.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::validation("volume payload contains non-finite values"));
            }
            data.push(v);
        }
        Volume3D::new(
            (header.dims[0], header.dims[1], header.dims[2], header.dims[3]),
            header.voxel_size,
            header.channel_names.clone(),
            data,
        )
    }

    /// Writes `<stem>.hdr.json` and `<stem>.raw`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        if let Some(bad) = self.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "refusing to save volume containing non-finite value {bad}"
            )));
        }
        let header_path = stem_path(stem, "hdr.json");
        let raw_path = stem_path(stem, "raw");
        let header_text = serde_json::to_string_pretty(&self.header())
            .expect("header serialization cannot fail");
        fs::write(&header_path, header_text.as_bytes())
            .map_err(|e| Error::io(&header_path, e))?;
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&raw_path, &bytes).map_err(|e| Error::io(&raw_path, e))?;
        Ok(())
    }

    /// Reads the `<stem>.hdr.json` / `<stem>.raw` pair.
    pub fn load(stem: &Path) -> Result<Self> {
        let header_path = stem_path(stem, "hdr.json");
        let raw_path = stem_path(stem, "raw");
        let header_text =
            fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header = VolumeHeader::parse(&header_text)?;
        let payload = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        Volume3D::from_header_and_payload(&header, &payload)
    }
}

fn stem_path(stem: &Path, ext: &str) -> PathBuf {
    let mut name = stem.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(ext);
    stem.with_file_name(name)
}
