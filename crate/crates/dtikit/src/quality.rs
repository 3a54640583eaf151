//! Image quality metrics: MSE, PSNR, and single-scale SSIM.
//!
//! PSNR peak is the reference image's dynamic range (max - min), not a fixed
//! constant; SSIM uses an 11x11 Gaussian window (sigma 1.5) with valid-region
//! convolution and L equal to the same reference range. Both definitions are
//! repeated in every CSV this crate emits.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Comment line prepended to emitted CSVs so the metric definitions travel
/// with the numbers.
pub const CSV_METRIC_NOTE: &str =
    "# psnr peak = max(ref)-min(ref); ssim: 11x11 gaussian window sigma=1.5, K1=0.01, K2=0.03, L=peak, valid-region\n";

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean squared difference over all elements.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    mse_masked(a, b, None)
}

/// Mean squared difference restricted to `mask` when given.
pub fn mse_masked(a: &[f64], b: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "mse shape mismatch: {} vs {} elements",
            a.len(),
            b.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != a.len() {
            return Err(Error::validation("mse mask length mismatch"));
        }
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..a.len() {
        if mask.map_or(true, |m| m[i]) {
            let d = a[i] - b[i];
            acc += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::validation("mse over an empty selection"));
    }
    Ok(acc / count as f64)
}

fn range(values: &[f64], mask: Option<&[bool]>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if mask.map_or(true, |m| m[i]) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// Peak signal-to-noise ratio in dB; +inf when the images are identical.
pub fn psnr(reference: &[f64], test: &[f64]) -> Result<f64> {
    psnr_masked(reference, test, None)
}

pub fn psnr_masked(reference: &[f64], test: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let err = mse_masked(reference, test, mask)?;
    let (lo, hi) = range(reference, mask);
    let peak = hi - lo;
    if peak <= 0.0 {
        return Err(Error::validation(
            "psnr undefined for a constant reference image",
        ));
    }
    Ok(psnr_value(peak, err))
}

/// 10 log10(peak^2 / mse); +inf at mse 0. E.g. peak 1, mse 0.01 -> 20 dB.
pub fn psnr_value(peak: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        return f64::INFINITY;
    }
    20.0 * peak.log10() - 10.0 * mse.log10()
}

fn gaussian_window_1d() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *wi;
    }
    for wi in w.iter_mut() {
        *wi /= sum;
    }
    w
}

/// Valid-region separable convolution with the 1D Gaussian in both axes.
fn blur_valid(img: &Mat, w: &[f64; SSIM_WINDOW]) -> Mat {
    let rows = img.rows();
    let cols = img.cols();
    let out_cols = cols - SSIM_WINDOW + 1;
    let mut horiz = Mat::zeros(rows, out_cols);
    for i in 0..rows {
        for j in 0..out_cols {
            let mut acc = 0.0;
            for t in 0..SSIM_WINDOW {
                acc += w[t] * img[(i, j + t)];
            }
            horiz[(i, j)] = acc;
        }
    }
    let out_rows = rows - SSIM_WINDOW + 1;
    let mut out = Mat::zeros(out_rows, out_cols);
    for i in 0..out_rows {
        for j in 0..out_cols {
            let mut acc = 0.0;
            for t in 0..SSIM_WINDOW {
                acc += w[t] * horiz[(i + t, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Mean local structural similarity between two 2D images.
///
/// The reference image fixes the dynamic range L.
pub fn ssim(reference: &Mat, test: &Mat) -> Result<f64> {
    if reference.rows() != test.rows() || reference.cols() != test.cols() {
        return Err(Error::validation(format!(
            "ssim shape mismatch: {}x{} vs {}x{}",
            reference.rows(),
            reference.cols(),
            test.rows(),
            test.cols()
        )));
    }
    if reference.rows() < SSIM_WINDOW || reference.cols() < SSIM_WINDOW {
        return Err(Error::validation(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let (lo, hi) = range(reference.data(), None);
    let l = hi - lo;
    let c1 = (SSIM_K1 * l) * (SSIM_K1 * l);
    let c2 = (SSIM_K2 * l) * (SSIM_K2 * l);

    let w = gaussian_window_1d();
    let mu_x = blur_valid(reference, &w);
    let mu_y = blur_valid(test, &w);
    let xx = Mat::from_fn(reference.rows(), reference.cols(), |i, j| {
        reference[(i, j)] * reference[(i, j)]
    });
    let yy = Mat::from_fn(test.rows(), test.cols(), |i, j| test[(i, j)] * test[(i, j)]);
    let xy = Mat::from_fn(test.rows(), test.cols(), |i, j| {
        reference[(i, j)] * test[(i, j)]
    });
    let m_xx = blur_valid(&xx, &w);
    let m_yy = blur_valid(&yy, &w);
    let m_xy = blur_valid(&xy, &w);

    let mut acc = 0.0;
    let rows = mu_x.rows();
    let cols = mu_x.cols();
    for i in 0..rows {
        for j in 0..cols {
            let mx = mu_x[(i, j)];
            let my = mu_y[(i, j)];
            let var_x = m_xx[(i, j)] - mx * mx;
            let var_y = m_yy[(i, j)] - my * my;
            let cov = m_xy[(i, j)] - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
            acc += num / den;
        }
    }
    Ok(acc / (rows * cols) as f64)
}
