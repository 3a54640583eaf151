//! Diffusion gradient tables and the FSL-style `bvals`/`bvecs` text format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// b-value for the canonical six-direction shell, s/mm^2.
pub const CANONICAL_B: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEntry {
    /// Diffusion weighting, s/mm^2.
    pub b_value: f64,
    /// Unit encoding direction; the zero vector only for b = 0.
    pub direction: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientTable {
    entries: Vec<GradientEntry>,
}

impl GradientTable {
    /// Validates and wraps a list of entries. Directions for b > 0 must
    /// already be unit length (within 1e-6) and at least one b = 0 entry
    /// is required.
    pub fn new(entries: Vec<GradientEntry>) -> Result<Self> {
        if !entries.iter().any(|e| e.b_value == 0.0) {
            return Err(Error::validation(
                "gradient table needs at least one b=0 entry",
            ));
        }
        for (i, e) in entries.iter().enumerate() {
            if !e.b_value.is_finite() || e.b_value < 0.0 {
                return Err(Error::validation(format!(
                    "entry {i}: b-value {} is not a finite non-negative number",
                    e.b_value
                )));
            }
            if e.direction.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("entry {i}: non-finite direction")));
            }
            if e.b_value > 0.0 {
                let norm = norm3(&e.direction);
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::validation(format!(
                        "entry {i}: direction norm {norm} for b > 0 is not unit"
                    )));
                }
            }
        }
        Ok(GradientTable { entries })
    }

    /// Parses bvals (one whitespace-separated line of N numbers) and bvecs
    /// (three lines of N numbers: x, y, z rows). Directions with b > 0 are
    /// renormalized to unit length.
    pub fn parse(bvals_text: &str, bvecs_text: &str) -> Result<Self> {
        let bvals = parse_number_row(bvals_text, "bvals")?;
        let rows: Vec<&str> = bvecs_text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .collect();
        if rows.len() != 3 {
            return Err(Error::format(format!(
                "bvecs must have 3 rows (x, y, z), found {}",
                rows.len()
            )));
        }
        let xs = parse_number_row(rows[0], "bvecs row 1")?;
        let ys = parse_number_row(rows[1], "bvecs row 2")?;
        let zs = parse_number_row(rows[2], "bvecs row 3")?;
        if xs.len() != bvals.len() || ys.len() != bvals.len() || zs.len() != bvals.len() {
            return Err(Error::format(format!(
                "column count mismatch: bvals has {}, bvecs rows have {}/{}/{}",
                bvals.len(),
                xs.len(),
                ys.len(),
                zs.len()
            )));
        }
        let mut entries = Vec::with_capacity(bvals.len());
        for i in 0..bvals.len() {
            let b = bvals[i];
            let mut dir = [xs[i], ys[i], zs[i]];
            let norm = norm3(&dir);
            if b > 0.0 {
                if norm == 0.0 {
                    return Err(Error::validation(format!(
                        "entry {i}: zero direction with b = {b}"
                    )));
                }
                for v in dir.iter_mut() {
                    *v /= norm;
                }
            }
            entries.push(GradientEntry {
                b_value: b,
                direction: dir,
            });
        }
        GradientTable::new(entries)
    }

    pub fn load(bvals_path: &Path, bvecs_path: &Path) -> Result<Self> {
        let bvals = fs::read_to_string(bvals_path).map_err(|e| Error::io(bvals_path, e))?;
        let bvecs = fs::read_to_string(bvecs_path).map_err(|e| Error::io(bvecs_path, e))?;
        Self::parse(&bvals, &bvecs)
    }

    /// The classical dual-gradient six-direction scheme plus one b=0 entry:
    /// {(1,1,0),(1,-1,0),(1,0,1),(1,0,-1),(0,1,1),(0,1,-1)} / sqrt(2).
    pub fn canonical_six() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let dirs = [
            [s, s, 0.0],
            [s, -s, 0.0],
            [s, 0.0, s],
            [s, 0.0, -s],
            [0.0, s, s],
            [0.0, s, -s],
        ];
        let mut entries = vec![GradientEntry {
            b_value: 0.0,
            direction: [0.0; 3],
        }];
        entries.extend(dirs.iter().map(|&direction| GradientEntry {
            b_value: CANONICAL_B,
            direction,
        }));
        GradientTable { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GradientEntry] {
        &self.entries
    }

    pub fn b0_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.b_value == 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn dwi_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.b_value > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// True for the seven-channel acquisition this pipeline trains on:
    /// exactly six b=1000 entries plus one b=0 entry.
    pub fn is_seven_channel_protocol(&self) -> bool {
        self.entries.len() == 7
            && self.b0_indices().len() == 1
            && self
                .entries
                .iter()
                .filter(|e| e.b_value == CANONICAL_B)
                .count()
                == 6
    }

    /// Channel labels for volumes simulated from this table.
    pub fn channel_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| {
                if e.b_value == 0.0 {
                    "b0".to_string()
                } else {
                    format!(
                        "b{:.0}_x{:+.4}_y{:+.4}_z{:+.4}",
                        e.b_value, e.direction[0], e.direction[1], e.direction[2]
                    )
                }
            })
            .collect()
    }
}

fn parse_number_row(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::format(format!("{what}: cannot parse {tok:?} as a number")))
        })
        .collect()
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
