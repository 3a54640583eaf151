//! Rician corruption of magnitude images.
//!
//! Noise is drawn from a counter-based generator keyed by (seed, linear
//! element index), so results do not depend on evaluation order and are
//! reproducible voxel by voxel.

use crate::error::{Error, Result};
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Gaussian component standard deviation, signal units.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::validation(format!(
                "noise sigma must be finite and non-negative, got {sigma}"
            )));
        }
        Ok(NoiseConfig { sigma, seed })
    }
}

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Two independent standard normal deviates for a given (seed, counter)
/// pair. The counter consumes two splitmix positions so that adjacent
/// counters never share a draw.
pub fn gaussian_pair(seed: u64, counter: u64) -> (f64, f64) {
    let origin = mix64(seed ^ 0x5851_f42d_4c95_7f2d);
    let a = mix64(origin.wrapping_add(counter.wrapping_mul(2).wrapping_mul(GAMMA)));
    let b = mix64(origin.wrapping_add(counter.wrapping_mul(2).wrapping_add(1).wrapping_mul(GAMMA)));
    // u1 in (0, 1] keeps the log finite; u2 in [0, 1).
    let u1 = ((a >> 11) as f64 + 1.0) / 9007199254740992.0;
    let u2 = (b >> 11) as f64 / 9007199254740992.0;
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Magnitude of a complex signal with Gaussian noise on both channels:
/// sqrt((s + n1)^2 + n2^2).
pub fn rician_sample(signal: f64, sigma: f64, seed: u64, counter: u64) -> f64 {
    let (n1, n2) = gaussian_pair(seed, counter);
    let re = signal + sigma * n1;
    let im = sigma * n2;
    (re * re + im * im).sqrt()
}

/// Applies Rician corruption elementwise; the counter is the element's
/// linear index, so the result is independent of traversal order.
pub fn add_rician(v: &Volume3D, cfg: &NoiseConfig) -> Volume3D {
    let mut out = v.clone();
    for (i, value) in out.data_mut().iter_mut().enumerate() {
        *value = rician_sample(*value as f64, cfg.sigma, cfg.seed, i as u64) as f32;
    }
    out
}
