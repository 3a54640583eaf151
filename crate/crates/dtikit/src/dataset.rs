//! Paired training data: noisy normalized 7-channel inputs against
//! clean scaled FA/MD/AD targets, split train/val/test by z-slice.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dti::{compute_metrics, predict_signal, TensorField};
use crate::error::{Error, Result};
use crate::gradient::GradientTable;
use crate::noise::{add_rician, NoiseConfig};
use crate::volume::Volume3D;

/// Floor applied to the b=0 divisor during normalization.
pub const B0_FLOOR: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        for (name, v) in [("train", train), ("val", val), ("test", test)] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::validation(format!(
                    "{name} fraction {v} outside [0, 1]"
                )));
            }
        }
        if ((train + val + test) - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "split fractions sum to {}, expected 1",
                train + val + test
            )));
        }
        Ok(SplitFractions { train, val, test })
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!(
                "unknown split {other:?}, expected train|val|test"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SliceSplit {
    pub fn slices(&self, which: Split) -> &[usize] {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Largest-remainder assignment of z-slices to splits, interleaved so each
/// split sees slices from the whole volume.
fn assign_slices(nz: usize, fractions: &SplitFractions) -> SliceSplit {
    let quotas = [fractions.train, fractions.val, fractions.test];
    let mut assigned = [0usize; 3];
    let mut split = SliceSplit::default();
    for z in 0..nz {
        let mut best = 0;
        let mut best_deficit = f64::NEG_INFINITY;
        for (s, &q) in quotas.iter().enumerate() {
            let deficit = q * (z + 1) as f64 - assigned[s] as f64;
            if deficit > best_deficit + 1e-12 {
                best = s;
                best_deficit = deficit;
            }
        }
        assigned[best] += 1;
        match best {
            0 => split.train.push(z),
            1 => split.val.push(z),
            _ => split.test.push(z),
        }
    }
    split
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// Noisy 7-channel volume, each channel divided by the b=0 channel.
    pub input: Volume3D,
    /// Clean FA/MD/AD maps with MD and AD divided by `metric_scale`.
    pub target: Volume3D,
    /// Per-voxel brain mask inherited from the ground-truth field.
    pub mask: Vec<bool>,
    /// Divisor that brought MD and AD into [0, 1]; multiply to recover
    /// physical units.
    pub metric_scale: f64,
    pub split: SliceSplit,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    metric_scale: f64,
    split: SliceSplit,
}

/// Simulates the 7-channel acquisition from a ground-truth field, corrupts
/// it with Rician noise, and pairs it with the clean metric maps.
pub fn make_dataset(
    field: &TensorField,
    gtab: &GradientTable,
    noise: &NoiseConfig,
    split: &SplitFractions,
) -> Result<Dataset> {
    if !gtab.is_seven_channel_protocol() {
        return Err(Error::validation(
            "dataset assembly requires the 7-channel protocol (1x b=0 + 6x b=1000)",
        ));
    }
    let (nx, ny, nz) = field.dims();
    let n = nx * ny * nz;

    // Forward-simulate all channels.
    let mut dwi = Volume3D::zeros((nx, ny, nz, 7), field.voxel_size, gtab.channel_names())?;
    for idx in 0..n {
        let signals = predict_signal(field.tensor(idx), field.s0(idx), gtab);
        for (c, s) in signals.iter().enumerate() {
            dwi.data_mut()[idx * 7 + c] = *s as f32;
        }
    }
    let noisy = add_rician(&dwi, noise);

    // Normalize by the b=0 channel, floored.
    let b0 = gtab.b0_indices()[0];
    let mut input = noisy.clone();
    for idx in 0..n {
        let denom = noisy.data()[idx * 7 + b0].max(B0_FLOOR);
        for c in 0..7 {
            input.data_mut()[idx * 7 + c] = noisy.data()[idx * 7 + c] / denom;
        }
    }

    // Targets: metrics of the clean field, MD/AD rescaled into [0, 1].
    let metrics = compute_metrics(field)?;
    let mut scale: f64 = 0.0;
    for idx in 0..n {
        if field.is_valid(idx) {
            scale = scale
                .max(metrics.data()[idx * 3 + 1] as f64)
                .max(metrics.data()[idx * 3 + 2] as f64);
        }
    }
    if scale <= 0.0 {
        scale = 1.0;
    }
    let mut target = metrics.clone();
    for idx in 0..n {
        target.data_mut()[idx * 3 + 1] = (metrics.data()[idx * 3 + 1] as f64 / scale) as f32;
        target.data_mut()[idx * 3 + 2] = (metrics.data()[idx * 3 + 2] as f64 / scale) as f32;
    }

    Ok(Dataset {
        input,
        target,
        mask: field.valid_mask().to_vec(),
        metric_scale: scale,
        split: assign_slices(nz, split),
    })
}

impl Dataset {
    pub fn dims(&self) -> (usize, usize, usize) {
        let (x, y, z, _) = self.input.dims();
        (x, y, z)
    }

    /// Writes `<stem>_input.*`, `<stem>_target.*`, `<stem>_mask.*`, and
    /// `<stem>_meta.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        self.input.save(&suffixed(stem, "_input"))?;
        self.target.save(&suffixed(stem, "_target"))?;
        let (x, y, z) = self.dims();
        let mask_vol = Volume3D::new(
            (x, y, z, 1),
            self.input.voxel_size,
            vec!["mask".to_string()],
            self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )?;
        mask_vol.save(&suffixed(stem, "_mask"))?;
        let meta = DatasetMeta {
            metric_scale: self.metric_scale,
            split: self.split.clone(),
        };
        let path = suffixed(stem, "_meta.json");
        let text = serde_json::to_string_pretty(&meta).expect("meta serialization cannot fail");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let input = Volume3D::load(&suffixed(stem, "_input"))?;
        let target = Volume3D::load(&suffixed(stem, "_target"))?;
        let mask_vol = Volume3D::load(&suffixed(stem, "_mask"))?;
        let path = suffixed(stem, "_meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: DatasetMeta =
            serde_json::from_str(&text).map_err(|e| Error::format(format!("bad dataset meta: {e}")))?;
        if input.dims().0 != target.dims().0
            || input.dims().1 != target.dims().1
            || input.dims().2 != target.dims().2
            || mask_vol.voxel_count() != input.voxel_count()
        {
            return Err(Error::format("input/target/mask grids disagree"));
        }
        if input.channels() != 7 || target.channels() != 3 || mask_vol.channels() != 1 {
            return Err(Error::format("dataset volumes have unexpected channel counts"));
        }
        let mask = mask_vol.data().iter().map(|&v| v != 0.0).collect();
        Ok(Dataset {
            input,
            target,
            mask,
            metric_scale: meta.metric_scale,
            split: meta.split,
        })
    }
}

fn suffixed(stem: &Path, suffix: &str) -> PathBuf {
    let mut name = stem.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    stem.with_file_name(name)
}
