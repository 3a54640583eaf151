//! Binary PGM (P5) image output with a sidecar recording the value range
//! used for the 0..255 scaling.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Writes `path` as binary P5 (maxval 255, row-major) by linearly mapping
/// [min, max] of the image onto 0..255, and `<path>.range.txt` with the
/// min/max actually used. A constant image maps to all zeros.
pub fn write_pgm_scaled(path: &Path, img: &Mat) -> Result<()> {
    let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::validation("pgm source contains non-finite values"));
    }
    let span = hi - lo;
    let mut bytes = Vec::with_capacity(img.rows() * img.cols() + 32);
    bytes.extend_from_slice(format!("P5\n{} {}\n255\n", img.cols(), img.rows()).as_bytes());
    for &v in img.data() {
        let scaled = if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        bytes.push(scaled);
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let range_path = range_sidecar(path);
    let text = format!("min={lo:.9e}\nmax={hi:.9e}\n");
    fs::write(&range_path, text).map_err(|e| Error::io(&range_path, e))?;
    Ok(())
}

pub fn range_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".range.txt");
    path.with_file_name(name)
}
