//! Singular value decomposition by one-sided Jacobi rotations, plus rank
//! truncation and the singular-value sensitivity map used by the training
//! loss gradient.
//!
//! Everything runs in f64 regardless of storage precision. The factor sign
//! convention (first nonzero component of each left singular vector made
//! positive, right vector slaved to it) makes repeated calls on the same
//! input bitwise identical.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::quality;

/// Convergence threshold for column orthogonalization, relative to the
/// geometric mean of the column norms.
const JACOBI_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 64;

#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// m x r, orthonormal columns.
    pub u: Mat,
    /// r singular values, descending, non-negative.
    pub sigma: Vec<f64>,
    /// n x r, orthonormal columns.
    pub v: Mat,
}

impl SvdFactors {
    pub fn rank_bound(&self) -> usize {
        self.sigma.len()
    }

    /// Reassembles u * diag(sigma) * v^T.
    pub fn reconstruct(&self) -> Mat {
        let m = self.u.rows();
        let n = self.v.rows();
        let r = self.sigma.len();
        let mut out = Mat::zeros(m, n);
        for k in 0..r {
            let s = self.sigma[k];
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let us = self.u[(i, k)] * s;
                for j in 0..n {
                    out[(i, j)] += us * self.v[(j, k)];
                }
            }
        }
        out
    }
}

/// Decomposes `a` into orthonormal factors and descending singular values.
pub fn svd(a: &Mat) -> Result<SvdFactors> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::validation("svd of an empty matrix"));
    }
    if !a.is_finite() {
        return Err(Error::validation("svd input contains non-finite values"));
    }

    let transposed = a.rows() < a.cols();
    let work = if transposed { a.transpose() } else { a.clone() };
    let m = work.rows();
    let n = work.cols();

    // Column-major working copies of A and V.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| work[(i, j)]).collect())
        .collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut a2 = 0.0;
                    let mut b2 = 0.0;
                    let mut ab = 0.0;
                    for i in 0..m {
                        a2 += cp[i] * cp[i];
                        b2 += cq[i] * cq[i];
                        ab += cp[i] * cq[i];
                    }
                    (a2, b2, ab)
                };
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; order them descending.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut sigma = Vec::with_capacity(n);
    let mut u = Mat::zeros(m, n);
    let mut v = Mat::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        sigma.push(norms[j]);
        if norms[j] > 0.0 {
            for i in 0..m {
                u[(i, k)] = cols[j][i] / norms[j];
            }
        }
        for i in 0..n {
            v[(i, k)] = vcols[j][i];
        }
    }
    complete_zero_columns(&mut u, &sigma);
    apply_sign_convention(&mut u, &mut v);

    Ok(if transposed {
        SvdFactors { u: v, sigma, v: u }
    } else {
        SvdFactors { u, sigma, v }
    })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let len = cols[p].len();
    for i in 0..len {
        let vp = cols[p][i];
        let vq = cols[q][i];
        cols[p][i] = c * vp - s * vq;
        cols[q][i] = s * vp + c * vq;
    }
}

/// Columns whose singular value is exactly zero carry no direction; fill
/// them with an orthonormal completion so u^T u = I still holds.
fn complete_zero_columns(u: &mut Mat, sigma: &[f64]) {
    let m = u.rows();
    for k in 0..sigma.len() {
        if sigma[k] > 0.0 {
            continue;
        }
        for cand in 0..m {
            let mut r = vec![0.0; m];
            r[cand] = 1.0;
            for j in 0..sigma.len() {
                if j == k || (sigma[j] == 0.0 && j > k) {
                    continue;
                }
                let dot: f64 = (0..m).map(|i| u[(i, j)] * r[i]).sum();
                for i in 0..m {
                    r[i] -= dot * u[(i, j)];
                }
            }
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.5 {
                for i in 0..m {
                    u[(i, k)] = r[i] / norm;
                }
                break;
            }
        }
    }
}

fn apply_sign_convention(u: &mut Mat, v: &mut Mat) {
    for k in 0..u.cols() {
        let mut flip = false;
        for i in 0..u.rows() {
            let val = u[(i, k)];
            if val != 0.0 {
                flip = val < 0.0;
                break;
            }
        }
        if flip {
            for i in 0..u.rows() {
                u[(i, k)] = -u[(i, k)];
            }
            for i in 0..v.rows() {
                v[(i, k)] = -v[(i, k)];
            }
        }
    }
}

/// Best rank-k approximation: sum of the k leading rank-one terms.
pub fn truncate(f: &SvdFactors, k: usize) -> Result<Mat> {
    let r = f.sigma.len();
    if k < 1 || k > r {
        return Err(Error::validation(format!(
            "truncation rank {k} outside 1..={r}"
        )));
    }
    let m = f.u.rows();
    let n = f.v.rows();
    let mut out = Mat::zeros(m, n);
    for idx in 0..k {
        let s = f.sigma[idx];
        for i in 0..m {
            let us = f.u[(i, idx)] * s;
            for j in 0..n {
                out[(i, j)] += us * f.v[(j, idx)];
            }
        }
    }
    Ok(out)
}

/// Adjoint of the singular-value map: sum_k w_k u_k v_k^T.
///
/// For degenerate singular values this is one valid subgradient choice.
pub fn sv_sensitivity(f: &SvdFactors, weights: &[f64]) -> Result<Mat> {
    let r = f.sigma.len();
    if weights.len() != r {
        return Err(Error::validation(format!(
            "weight vector length {} does not match rank bound {}",
            weights.len(),
            r
        )));
    }
    let m = f.u.rows();
    let n = f.v.rows();
    let mut out = Mat::zeros(m, n);
    for k in 0..r {
        let w = weights[k];
        if w == 0.0 {
            continue;
        }
        for i in 0..m {
            let uw = f.u[(i, k)] * w;
            for j in 0..n {
                out[(i, j)] += uw * f.v[(j, k)];
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSweepRow {
    pub k: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Reconstructs `noisy` at each requested rank and scores it against `clean`.
pub fn rank_sweep(clean: &Mat, noisy: &Mat, ks: &[usize]) -> Result<Vec<RankSweepRow>> {
    if clean.rows() != noisy.rows() || clean.cols() != noisy.cols() {
        return Err(Error::validation(format!(
            "rank_sweep shape mismatch: {}x{} vs {}x{}",
            clean.rows(),
            clean.cols(),
            noisy.rows(),
            noisy.cols()
        )));
    }
    let factors = svd(noisy)?;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let recon = truncate(&factors, k)?;
        let psnr = quality::psnr(clean.data(), recon.data())?;
        let ssim = quality::ssim(clean, &recon)?;
        rows.push(RankSweepRow { k, psnr, ssim });
    }
    Ok(rows)
}

/// CSV rendering of a rank sweep, one row per rank, 6 decimal places.
pub fn rank_sweep_csv(rows: &[RankSweepRow]) -> String {
    let mut out = String::from(quality::CSV_METRIC_NOTE);
    out.push_str("k,psnr,ssim\n");
    for row in rows {
        out.push_str(&format!("{},{:.6},{:.6}\n", row.k, row.psnr, row.ssim));
    }
    out
}
