//! Diffusion-tensor forward model, log-linear OLS fitting, symmetric 3x3
//! eigendecomposition, and the FA/MD/AD scalar maps.

use crate::error::{Error, Result};
use crate::gradient::GradientTable;
use crate::mat::Mat;
use crate::svd;
use crate::volume::Volume3D;

/// Symmetric 3x3 diffusion tensor, mm^2/s.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tensor3 {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl Tensor3 {
    pub fn isotropic(d: f64) -> Self {
        Tensor3 {
            xx: d,
            yy: d,
            zz: d,
            ..Default::default()
        }
    }

    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Self {
        Tensor3 {
            xx: m[0][0],
            yy: m[1][1],
            zz: m[2][2],
            xy: m[0][1],
            xz: m[0][2],
            yz: m[1][2],
        }
    }

    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    /// Quadratic form g^T D g.
    pub fn quad_form(&self, g: &[f64; 3]) -> f64 {
        self.xx * g[0] * g[0]
            + self.yy * g[1] * g[1]
            + self.zz * g[2] * g[2]
            + 2.0 * (self.xy * g[0] * g[1] + self.xz * g[0] * g[2] + self.yz * g[1] * g[2])
    }

    /// radial * I + (axial - radial) * t t^T for a unit tangent t.
    pub fn cylindrical(axial: f64, radial: f64, t: &[f64; 3]) -> Self {
        let d = axial - radial;
        Tensor3 {
            xx: radial + d * t[0] * t[0],
            yy: radial + d * t[1] * t[1],
            zz: radial + d * t[2] * t[2],
            xy: d * t[0] * t[1],
            xz: d * t[0] * t[2],
            yz: d * t[1] * t[2],
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Tensor3 {
            xx: self.xx * c,
            yy: self.yy * c,
            zz: self.zz * c,
            xy: self.xy * c,
            xz: self.xz * c,
            yz: self.yz * c,
        }
    }

    pub fn add(&self, other: &Tensor3) -> Self {
        Tensor3 {
            xx: self.xx + other.xx,
            yy: self.yy + other.yy,
            zz: self.zz + other.zz,
            xy: self.xy + other.xy,
            xz: self.xz + other.xz,
            yz: self.yz + other.yz,
        }
    }

    pub fn max_abs(&self) -> f64 {
        [self.xx, self.yy, self.zz, self.xy, self.xz, self.yz]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn components(&self) -> [f64; 6] {
        [self.xx, self.yy, self.zz, self.xy, self.xz, self.yz]
    }
}

/// Eigendecomposition of a symmetric 3x3 tensor, eigenvalues descending,
/// eigenvectors orthonormal.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub lambda: [f64; 3],
    pub vectors: [[f64; 3]; 3],
}

impl EigenSystem {
    /// Reassembles sum_i lambda_i e_i e_i^T.
    pub fn reconstruct(&self) -> Tensor3 {
        let mut m = [[0.0; 3]; 3];
        for k in 0..3 {
            let e = self.vectors[k];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += self.lambda[k] * e[i] * e[j];
                }
            }
        }
        Tensor3::from_matrix(&m)
    }
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Eigenvalues by the trigonometric closed form for symmetric 3x3 matrices.
fn analytic_eigenvalues(t: &Tensor3) -> [f64; 3] {
    let q = (t.xx + t.yy + t.zz) / 3.0;
    let p1 = t.xy * t.xy + t.xz * t.xz + t.yz * t.yz;
    let p2 = (t.xx - q).powi(2) + (t.yy - q).powi(2) + (t.zz - q).powi(2) + 2.0 * p1;
    if p2 == 0.0 {
        return [q, q, q];
    }
    let p = (p2 / 6.0).sqrt();
    let b = [
        [(t.xx - q) / p, t.xy / p, t.xz / p],
        [t.xy / p, (t.yy - q) / p, t.yz / p],
        [t.xz / p, t.yz / p, (t.zz - q) / p],
    ];
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let l2 = 3.0 * q - l1 - l3;
    [l1, l2, l3]
}

/// Cyclic Jacobi iteration; robust fallback for near-degenerate spectra.
fn jacobi_eigen3(t: &Tensor3) -> EigenSystem {
    let mut a = t.to_matrix();
    let mut v = [[0.0; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..64 {
        let off = a[0][1].abs().max(a[0][2].abs()).max(a[1][2].abs());
        let scale = (0..3).fold(0.0f64, |m, i| m.max(a[i][i].abs())).max(off);
        if off <= 1e-16 * scale.max(1e-300) {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t_rot = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
            let c = 1.0 / (1.0 + t_rot * t_rot).sqrt();
            let s = c * t_rot;
            for i in 0..3 {
                let aip = a[i][p];
                let aiq = a[i][q];
                a[i][p] = c * aip - s * aiq;
                a[i][q] = s * aip + c * aiq;
            }
            for j in 0..3 {
                let apj = a[p][j];
                let aqj = a[q][j];
                a[p][j] = c * apj - s * aqj;
                a[q][j] = s * apj + c * aqj;
            }
            for i in 0..3 {
                let vip = v[i][p];
                let viq = v[i][q];
                v[i][p] = c * vip - s * viq;
                v[i][q] = s * vip + c * viq;
            }
        }
    }
    let mut pairs: Vec<(f64, [f64; 3])> = (0..3)
        .map(|k| (a[k][k], [v[0][k], v[1][k], v[2][k]]))
        .collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    EigenSystem {
        lambda: [pairs[0].0, pairs[1].0, pairs[2].0],
        vectors: [pairs[0].1, pairs[1].1, pairs[2].1],
    }
}

fn eigenvector_for(t: &Tensor3, lambda: f64) -> Option<[f64; 3]> {
    let m = t.to_matrix();
    let rows = [
        [m[0][0] - lambda, m[0][1], m[0][2]],
        [m[1][0], m[1][1] - lambda, m[1][2]],
        [m[2][0], m[2][1], m[2][2] - lambda],
    ];
    let candidates = [
        cross(&rows[0], &rows[1]),
        cross(&rows[0], &rows[2]),
        cross(&rows[1], &rows[2]),
    ];
    let mut best = candidates[0];
    let mut best_norm = norm3(&best);
    for c in &candidates[1..] {
        let n = norm3(c);
        if n > best_norm {
            best = *c;
            best_norm = n;
        }
    }
    let row_scale = rows
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |s, v| s.max(v.abs()));
    if best_norm <= 1e-8 * row_scale * row_scale {
        return None;
    }
    Some([best[0] / best_norm, best[1] / best_norm, best[2] / best_norm])
}

/// Symmetric 3x3 eigendecomposition with descending eigenvalues.
///
/// Uses the characteristic-polynomial closed form and falls back to Jacobi
/// iteration when the analytic discriminant indicates (near-)repeated
/// eigenvalues, or when the cross-product eigenvectors degenerate.
pub fn eig_symmetric3(t: &Tensor3) -> EigenSystem {
    let scale = t.max_abs();
    if scale == 0.0 {
        return EigenSystem {
            lambda: [0.0; 3],
            vectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
    }
    let l = analytic_eigenvalues(t);
    // Discriminant of the characteristic cubic, made dimensionless.
    let disc = ((l[0] - l[1]) * (l[1] - l[2]) * (l[0] - l[2])).powi(2) / scale.powi(6);
    if disc < 1e-12 {
        return jacobi_eigen3(t);
    }
    let v1 = eigenvector_for(t, l[0]);
    let v2 = eigenvector_for(t, l[1]);
    match (v1, v2) {
        (Some(e1), Some(mut e2)) => {
            // Enforce orthogonality against the leading vector, then complete
            // the right-handed triple.
            let d = dot3(&e1, &e2);
            for i in 0..3 {
                e2[i] -= d * e1[i];
            }
            let n2 = norm3(&e2);
            if n2 < 1e-8 {
                return jacobi_eigen3(t);
            }
            for v in e2.iter_mut() {
                *v /= n2;
            }
            let e3 = cross(&e1, &e2);
            EigenSystem {
                lambda: l,
                vectors: [e1, e2, e3],
            }
        }
        _ => jacobi_eigen3(t),
    }
}

/// Per-voxel tensor field with the non-diffusion-weighted signal level.
#[derive(Clone, Debug)]
pub struct TensorField {
    dims: (usize, usize, usize),
    pub voxel_size: [f64; 3],
    tensors: Vec<Tensor3>,
    s0: Vec<f64>,
    valid: Vec<bool>,
}

pub const TENSOR_CHANNELS: [&str; 7] = ["dxx", "dyy", "dzz", "dxy", "dxz", "dyz", "s0"];

impl TensorField {
    pub fn new(
        dims: (usize, usize, usize),
        voxel_size: [f64; 3],
        tensors: Vec<Tensor3>,
        s0: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        if tensors.len() != n || s0.len() != n || valid.len() != n {
            return Err(Error::validation("tensor field component length mismatch"));
        }
        if s0.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation("s0 must be finite and non-negative"));
        }
        Ok(TensorField {
            dims,
            voxel_size,
            tensors,
            s0,
            valid,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.tensors.len()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.0 + x
    }

    pub fn tensor(&self, idx: usize) -> &Tensor3 {
        &self.tensors[idx]
    }

    pub fn s0(&self, idx: usize) -> f64 {
        self.s0[idx]
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid[idx]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Number of valid voxels whose tensor has a negative eigenvalue.
    pub fn psd_violations(&self) -> usize {
        self.tensors
            .iter()
            .zip(self.valid.iter())
            .filter(|(t, &v)| v && eig_symmetric3(t).lambda[2] < 0.0)
            .count()
    }

    /// Packs the field into a 7-channel volume (6 tensor components + s0).
    pub fn to_volume(&self) -> Result<Volume3D> {
        let (x, y, z) = self.dims;
        let names = TENSOR_CHANNELS.iter().map(|s| s.to_string()).collect();
        let mut vol = Volume3D::zeros((x, y, z, 7), self.voxel_size, names)?;
        for idx in 0..self.voxel_count() {
            let comps = self.tensors[idx].components();
            for (c, comp) in comps.iter().enumerate() {
                vol.data_mut()[idx * 7 + c] = *comp as f32;
            }
            vol.data_mut()[idx * 7 + 6] = self.s0[idx] as f32;
        }
        Ok(vol)
    }

    /// Rebuilds a field from a 7-channel volume; voxels with s0 = 0 are
    /// treated as invalid.
    pub fn from_volume(vol: &Volume3D) -> Result<Self> {
        let (x, y, z, c) = vol.dims();
        if c != 7 {
            return Err(Error::validation(format!(
                "tensor volume must have 7 channels, found {c}"
            )));
        }
        let n = x * y * z;
        let mut tensors = Vec::with_capacity(n);
        let mut s0 = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for idx in 0..n {
            let d = &vol.data()[idx * 7..idx * 7 + 7];
            tensors.push(Tensor3 {
                xx: d[0] as f64,
                yy: d[1] as f64,
                zz: d[2] as f64,
                xy: d[3] as f64,
                xz: d[4] as f64,
                yz: d[5] as f64,
            });
            let s = d[6] as f64;
            s0.push(s.max(0.0));
            valid.push(s > 0.0);
        }
        TensorField::new((x, y, z), vol.voxel_size, tensors, s0, valid)
    }
}

/// Log-linear design matrix: one row per b > 0 entry,
/// b * (gx^2, gy^2, gz^2, 2 gx gy, 2 gx gz, 2 gy gz).
pub struct DesignMatrix {
    matrix: Mat,
    pinv: Mat,
    pub condition: f64,
}

impl DesignMatrix {
    pub fn from_gradient_table(gtab: &GradientTable) -> Result<Self> {
        let dwi = gtab.dwi_indices();
        if dwi.len() < 6 {
            return Err(Error::validation(format!(
                "need at least 6 b>0 entries to fit a tensor, found {}",
                dwi.len()
            )));
        }
        let mut matrix = Mat::zeros(dwi.len(), 6);
        for (row, &i) in dwi.iter().enumerate() {
            let e = &gtab.entries()[i];
            let b = e.b_value;
            let [gx, gy, gz] = e.direction;
            matrix[(row, 0)] = b * gx * gx;
            matrix[(row, 1)] = b * gy * gy;
            matrix[(row, 2)] = b * gz * gz;
            matrix[(row, 3)] = 2.0 * b * gx * gy;
            matrix[(row, 4)] = 2.0 * b * gx * gz;
            matrix[(row, 5)] = 2.0 * b * gy * gz;
        }
        let f = svd::svd(&matrix)?;
        let smax = f.sigma[0];
        let smin = f.sigma[5];
        if smin <= 1e-12 * smax {
            return Err(Error::validation(
                "singular design matrix: gradient directions do not span tensor space",
            ));
        }
        // pinv = V diag(1/sigma) U^T
        let mut vs = Mat::zeros(6, 6);
        for i in 0..6 {
            for k in 0..6 {
                vs[(i, k)] = f.v[(i, k)] / f.sigma[k];
            }
        }
        let pinv = vs.matmul(&f.u.transpose())?;
        Ok(DesignMatrix {
            matrix,
            pinv,
            condition: smax / smin,
        })
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    /// Least-squares solve of A d = y (exact when A is square).
    pub fn solve(&self, y: &[f64]) -> Result<[f64; 6]> {
        let d = self.pinv.matvec(y)?;
        Ok([d[0], d[1], d[2], d[3], d[4], d[5]])
    }
}

/// Forward model: entry i is s0 * exp(-b_i g_i^T D g_i).
pub fn predict_signal(tensor: &Tensor3, s0: f64, gtab: &GradientTable) -> Vec<f64> {
    gtab.entries()
        .iter()
        .map(|e| s0 * (-e.b_value * tensor.quad_form(&e.direction)).exp())
        .collect()
}

/// Ordinary least squares tensor fit in log-signal space, with S0 fixed to
/// the mean of the b=0 channels. Voxels with any non-positive signal are
/// flagged invalid and zero-filled rather than failing the whole volume.
pub fn fit_tensor_ols(dwi: &Volume3D, gtab: &GradientTable) -> Result<TensorField> {
    let (x, y, z, c) = dwi.dims();
    if c != gtab.len() {
        return Err(Error::validation(format!(
            "volume has {c} channels but gradient table has {} entries",
            gtab.len()
        )));
    }
    let b0 = gtab.b0_indices();
    if b0.is_empty() {
        return Err(Error::validation("gradient table has no b=0 entry"));
    }
    let design = DesignMatrix::from_gradient_table(gtab)?;
    let dwi_idx = gtab.dwi_indices();

    let n = x * y * z;
    let mut tensors = vec![Tensor3::default(); n];
    let mut s0_out = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut rhs = vec![0.0; dwi_idx.len()];
    for idx in 0..n {
        let signals = &dwi.data()[idx * c..(idx + 1) * c];
        if signals.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            continue;
        }
        let s0: f64 = b0.iter().map(|&i| signals[i] as f64).sum::<f64>() / b0.len() as f64;
        for (row, &i) in dwi_idx.iter().enumerate() {
            rhs[row] = (s0 / signals[i] as f64).ln();
        }
        let d = design.solve(&rhs)?;
        tensors[idx] = Tensor3 {
            xx: d[0],
            yy: d[1],
            zz: d[2],
            xy: d[3],
            xz: d[4],
            yz: d[5],
        };
        s0_out[idx] = s0;
        valid[idx] = true;
    }
    TensorField::new((x, y, z), dwi.voxel_size, tensors, s0_out, valid)
}

pub const METRIC_CHANNELS: [&str; 3] = ["FA", "MD", "AD"];

/// FA from eigenvalues, clamping negatives to zero first so the result
/// stays in [0, 1]; zero when the (clamped) tensor vanishes.
pub fn fa_from_eigenvalues(lambda: &[f64; 3]) -> f64 {
    let c = [lambda[0].max(0.0), lambda[1].max(0.0), lambda[2].max(0.0)];
    let s2 = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
    if s2 < 1e-20 {
        return 0.0;
    }
    let md = (c[0] + c[1] + c[2]) / 3.0;
    let dev = (c[0] - md).powi(2) + (c[1] - md).powi(2) + (c[2] - md).powi(2);
    (1.5 * dev / s2).sqrt().min(1.0)
}

/// Per-voxel FA/MD/AD maps as a 3-channel volume.
///
/// MD and AD keep raw (possibly negative) eigenvalues; only the FA formula
/// sees them clamped.
pub fn compute_metrics(field: &TensorField) -> Result<Volume3D> {
    let (x, y, z) = field.dims();
    let names = METRIC_CHANNELS.iter().map(|s| s.to_string()).collect();
    let mut vol = Volume3D::zeros((x, y, z, 3), field.voxel_size, names)?;
    for idx in 0..field.voxel_count() {
        let eig = eig_symmetric3(field.tensor(idx));
        let md = (eig.lambda[0] + eig.lambda[1] + eig.lambda[2]) / 3.0;
        let ad = eig.lambda[0];
        let fa = fa_from_eigenvalues(&eig.lambda);
        vol.data_mut()[idx * 3] = fa as f32;
        vol.data_mut()[idx * 3 + 1] = md as f32;
        vol.data_mut()[idx * 3 + 2] = ad as f32;
    }
    Ok(vol)
}
