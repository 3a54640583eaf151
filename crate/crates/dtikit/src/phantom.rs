//! Synthetic ground-truth tensor fields: curved fiber bundles with
//! cylindrically symmetric tensors inside a brain-like ellipsoid mask,
//! isotropic background elsewhere.
//!
//! Config file format (`key = value`, `#` comments):
//!
//! ```text
//! dims = 64,64,16
//! background_md = 0.0007
//! axial = 0.0017
//! radial = 0.0003
//! s0 = 1.0
//! seed = 42
//! # bundle = radius; x,y,z; x,y,z; ...   (control points in voxel units)
//! bundle = 6; 8,24,4; 32,40,8; 56,24,12
//! ```

use std::fs;
use std::path::Path;

use crate::dti::{Tensor3, TensorField};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BundleSpec {
    /// Tube radius in voxels.
    pub radius: f64,
    /// Catmull-Rom control points of the center path, voxel coordinates.
    pub control_points: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub dims: (usize, usize, usize),
    /// Isotropic diffusivity outside bundles, mm^2/s.
    pub background_md: f64,
    /// Diffusivity along the bundle tangent, mm^2/s.
    pub axial: f64,
    /// Diffusivity perpendicular to the tangent, mm^2/s.
    pub radial: f64,
    pub bundles: Vec<BundleSpec>,
    pub s0_value: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: (64, 64, 16),
            background_md: 0.7e-3,
            axial: 1.7e-3,
            radial: 0.3e-3,
            bundles: vec![
                BundleSpec {
                    radius: 6.0,
                    control_points: vec![[8.0, 24.0, 4.0], [32.0, 42.0, 8.0], [56.0, 24.0, 12.0]],
                },
                BundleSpec {
                    radius: 5.0,
                    control_points: vec![[26.0, 8.0, 11.0], [36.0, 32.0, 8.0], [26.0, 56.0, 5.0]],
                },
            ],
            s0_value: 1.0,
            seed: 42,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let (x, y, z) = self.dims;
        if x < 16 || y < 16 || z < 4 {
            return Err(Error::validation(format!(
                "phantom dims {:?} below the (16,16,4) minimum",
                self.dims
            )));
        }
        if !(self.background_md > 0.0 && self.axial > 0.0 && self.radial > 0.0) {
            return Err(Error::validation("diffusivities must be positive"));
        }
        if self.axial <= self.radial {
            return Err(Error::validation(format!(
                "axial diffusivity {} must exceed radial {}",
                self.axial, self.radial
            )));
        }
        if !(self.s0_value > 0.0 && self.s0_value.is_finite()) {
            return Err(Error::validation("s0 must be positive and finite"));
        }
        for (i, b) in self.bundles.iter().enumerate() {
            if b.control_points.len() < 2 {
                return Err(Error::validation(format!(
                    "bundle {i} needs at least 2 control points"
                )));
            }
            if !(b.radius > 0.0 && b.radius.is_finite()) {
                return Err(Error::validation(format!("bundle {i}: bad radius")));
            }
        }
        Ok(())
    }

    /// Parses the key=value config format documented at the top of this module.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PhantomConfig {
            bundles: Vec::new(),
            ..PhantomConfig::default()
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "dims" => {
                    let parts = parse_numbers(value, 3, lineno)?;
                    for p in &parts {
                        if *p < 0.0 || p.fract() != 0.0 || *p > 4096.0 {
                            return Err(Error::format(format!(
                                "line {}: dims must be small non-negative integers",
                                lineno + 1
                            )));
                        }
                    }
                    cfg.dims = (parts[0] as usize, parts[1] as usize, parts[2] as usize);
                }
                "background_md" => cfg.background_md = parse_number(value, lineno)?,
                "axial" => cfg.axial = parse_number(value, lineno)?,
                "radial" => cfg.radial = parse_number(value, lineno)?,
                "s0" => cfg.s0_value = parse_number(value, lineno)?,
                "seed" => {
                    cfg.seed = value.parse::<u64>().map_err(|_| {
                        Error::format(format!("line {}: seed must be a u64", lineno + 1))
                    })?
                }
                "bundle" => {
                    let mut parts = value.split(';');
                    let radius = parse_number(
                        parts
                            .next()
                            .ok_or_else(|| Error::format(format!("line {}: empty bundle", lineno + 1)))?,
                        lineno,
                    )?;
                    let mut control_points = Vec::new();
                    for chunk in parts {
                        let p = parse_numbers(chunk, 3, lineno)?;
                        control_points.push([p[0], p[1], p[2]]);
                    }
                    cfg.bundles.push(BundleSpec {
                        radius,
                        control_points,
                    });
                }
                other => {
                    return Err(Error::format(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn parse_number(tok: &str, lineno: usize) -> Result<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| Error::format(format!("line {}: bad number {:?}", lineno + 1, tok.trim())))?;
    if !v.is_finite() {
        return Err(Error::format(format!(
            "line {}: number must be finite",
            lineno + 1
        )));
    }
    Ok(v)
}

fn parse_numbers(tok: &str, n: usize, lineno: usize) -> Result<Vec<f64>> {
    let parts: Vec<f64> = tok
        .split(',')
        .map(|p| parse_number(p, lineno))
        .collect::<Result<_>>()?;
    if parts.len() != n {
        return Err(Error::format(format!(
            "line {}: expected {} comma-separated numbers",
            lineno + 1,
            n
        )));
    }
    Ok(parts)
}

/// Centripetal-free Catmull-Rom point and tangent through the control
/// points, with endpoint duplication.
fn catmull_rom(points: &[[f64; 3]], seg: usize, t: f64) -> ([f64; 3], [f64; 3]) {
    let n = points.len();
    let p0 = points[seg.saturating_sub(1)];
    let p1 = points[seg];
    let p2 = points[(seg + 1).min(n - 1)];
    let p3 = points[(seg + 2).min(n - 1)];
    let mut pos = [0.0; 3];
    let mut tan = [0.0; 3];
    for i in 0..3 {
        let a0 = -0.5 * p0[i] + 1.5 * p1[i] - 1.5 * p2[i] + 0.5 * p3[i];
        let a1 = p0[i] - 2.5 * p1[i] + 2.0 * p2[i] - 0.5 * p3[i];
        let a2 = -0.5 * p0[i] + 0.5 * p2[i];
        let a3 = p1[i];
        pos[i] = ((a0 * t + a1) * t + a2) * t + a3;
        tan[i] = (3.0 * a0 * t + 2.0 * a1) * t + a2;
    }
    (pos, tan)
}

struct PathSample {
    pos: [f64; 3],
    tangent: [f64; 3],
}

fn sample_path(points: &[[f64; 3]]) -> Vec<PathSample> {
    const STEPS_PER_SEGMENT: usize = 64;
    let mut samples = Vec::new();
    let segs = points.len() - 1;
    for seg in 0..segs {
        let last = if seg + 1 == segs {
            STEPS_PER_SEGMENT + 1
        } else {
            STEPS_PER_SEGMENT
        };
        for step in 0..last {
            let t = step as f64 / STEPS_PER_SEGMENT as f64;
            let (pos, mut tan) = catmull_rom(points, seg, t);
            let n = (tan[0] * tan[0] + tan[1] * tan[1] + tan[2] * tan[2]).sqrt();
            if n > 1e-12 {
                for v in tan.iter_mut() {
                    *v /= n;
                }
            } else {
                tan = [1.0, 0.0, 0.0];
            }
            samples.push(PathSample { pos, tangent: tan });
        }
    }
    samples
}

/// Builds the ground-truth tensor field for a config. Deterministic: the
/// geometry is a pure function of the config.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<TensorField> {
    cfg.validate()?;
    let (nx, ny, nz) = cfg.dims;
    let n = nx * ny * nz;

    // Per-voxel accumulated bundle tensors; overlaps are averaged.
    let mut sums = vec![Tensor3::default(); n];
    let mut counts = vec![0u32; n];

    for (bi, bundle) in cfg.bundles.iter().enumerate() {
        let samples = sample_path(&bundle.control_points);
        for s in &samples {
            let inside = s.pos[0] >= 0.0
                && s.pos[0] <= (nx - 1) as f64
                && s.pos[1] >= 0.0
                && s.pos[1] <= (ny - 1) as f64
                && s.pos[2] >= 0.0
                && s.pos[2] <= (nz - 1) as f64;
            if !inside {
                return Err(Error::validation(format!(
                    "bundle {bi} path leaves the volume at ({:.1}, {:.1}, {:.1})",
                    s.pos[0], s.pos[1], s.pos[2]
                )));
            }
        }
        // Nearest path sample per voxel, searched within each sample's cube.
        let mut best: Vec<(f64, u32)> = vec![(f64::INFINITY, 0); n];
        let r = bundle.radius;
        let reach = r.ceil() as i64;
        for (si, s) in samples.iter().enumerate() {
            let cx = s.pos[0].round() as i64;
            let cy = s.pos[1].round() as i64;
            let cz = s.pos[2].round() as i64;
            for dz in -reach..=reach {
                let z = cz + dz;
                if z < 0 || z >= nz as i64 {
                    continue;
                }
                for dy in -reach..=reach {
                    let y = cy + dy;
                    if y < 0 || y >= ny as i64 {
                        continue;
                    }
                    for dx in -reach..=reach {
                        let x = cx + dx;
                        if x < 0 || x >= nx as i64 {
                            continue;
                        }
                        let ddx = x as f64 - s.pos[0];
                        let ddy = y as f64 - s.pos[1];
                        let ddz = z as f64 - s.pos[2];
                        let d2 = ddx * ddx + ddy * ddy + ddz * ddz;
                        if d2 > r * r {
                            continue;
                        }
                        let idx = ((z as usize * ny) + y as usize) * nx + x as usize;
                        if d2 < best[idx].0 {
                            best[idx] = (d2, si as u32);
                        }
                    }
                }
            }
        }
        for idx in 0..n {
            if best[idx].0.is_finite() {
                let t = Tensor3::cylindrical(cfg.axial, cfg.radial, &samples[best[idx].1 as usize].tangent);
                sums[idx] = sums[idx].add(&t);
                counts[idx] += 1;
            }
        }
    }

    // Brain-like ellipsoid mask centered in the volume.
    let cx = (nx - 1) as f64 / 2.0;
    let cy = (ny - 1) as f64 / 2.0;
    let cz = (nz - 1) as f64 / 2.0;
    let rx = 0.48 * nx as f64;
    let ry = 0.48 * ny as f64;
    let rz = 0.48 * nz as f64;

    let mut tensors = vec![Tensor3::default(); n];
    let mut s0 = vec![0.0; n];
    let mut valid = vec![false; n];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = (z * ny + y) * nx + x;
                let ex = (x as f64 - cx) / rx;
                let ey = (y as f64 - cy) / ry;
                let ez = (z as f64 - cz) / rz;
                if ex * ex + ey * ey + ez * ez > 1.0 {
                    continue;
                }
                valid[idx] = true;
                s0[idx] = cfg.s0_value;
                tensors[idx] = if counts[idx] > 0 {
                    sums[idx].scale(1.0 / counts[idx] as f64)
                } else {
                    Tensor3::isotropic(cfg.background_md)
                };
            }
        }
    }
    TensorField::new(cfg.dims, [1.25, 1.25, 1.25], tensors, s0, valid)
}
