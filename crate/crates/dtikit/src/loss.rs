//! The training objective: a normalized L2 data term plus a
//! singular-value alignment regularizer, with its exact gradient and the
//! adaptive weighting controller.
//!
//! For a P x P x 3 patch pair, per channel c the regularizer compares
//! the descending singular-value vectors of the prediction and the ground
//! truth; the data term is the usual relative squared error over the
//! whole patch:
//!
//! ```text
//! total = |gt - pred|^2 / |gt|^2
//!       + lambda * (1/3) * sum_c |sv(gt_c) - sv(pred_c)|^2 / |sv(gt_c)|^2
//! ```

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::svd;

/// Dense patch with shape (P, P, C); element (y, x, c) sits at
/// ((y * P + x) * C + c), matching the volume layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    size: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Patch {
    pub fn zeros(size: usize, channels: usize) -> Self {
        Patch {
            size,
            channels,
            data: vec![0.0; size * size * channels],
        }
    }

    pub fn from_vec(size: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size * channels {
            return Err(Error::validation(format!(
                "patch data length {} does not match {size}x{size}x{channels}",
                data.len()
            )));
        }
        Ok(Patch {
            size,
            channels,
            data,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.size + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.size + x) * self.channels + c] = v;
    }

    /// One channel as a P x P matrix (rows = y).
    pub fn channel_mat(&self, c: usize) -> Mat {
        Mat::from_fn(self.size, self.size, |y, x| self.get(y, x, c))
    }

    pub fn set_channel(&mut self, c: usize, m: &Mat) {
        for y in 0..self.size {
            for x in 0..self.size {
                self.set(y, x, c, m[(y, x)]);
            }
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub data_term: f64,
    pub reg_term: f64,
    pub lambda: f64,
    pub total: f64,
}

fn check_pair(pred: &Patch, gt: &Patch) -> Result<()> {
    if pred.size != gt.size || pred.channels != gt.channels {
        return Err(Error::validation(format!(
            "patch shape mismatch: {}x{}x{} vs {}x{}x{}",
            pred.size, pred.size, pred.channels, gt.size, gt.size, gt.channels
        )));
    }
    Ok(())
}

/// Loss evaluation; errors if the ground truth (or any of its channels)
/// has zero norm, which would make the normalizations undefined.
pub fn svd_reg_loss(pred: &Patch, gt: &Patch, lambda: f64) -> Result<LossBreakdown> {
    check_pair(pred, gt)?;
    let gt_norm_sq = gt.norm_sq();
    if gt_norm_sq <= 0.0 {
        return Err(Error::validation("svd_reg_loss: ground-truth patch has zero norm"));
    }
    let mut diff_sq = 0.0;
    for (p, g) in pred.data.iter().zip(gt.data.iter()) {
        diff_sq += (p - g) * (p - g);
    }
    let data_term = diff_sq / gt_norm_sq;

    let mut reg_term = 0.0;
    for c in 0..gt.channels {
        let gt_sv = svd::svd(&gt.channel_mat(c))?.sigma;
        let pred_sv = svd::svd(&pred.channel_mat(c))?.sigma;
        let gt_sv_sq: f64 = gt_sv.iter().map(|s| s * s).sum();
        if gt_sv_sq <= 0.0 {
            return Err(Error::validation(format!(
                "svd_reg_loss: ground-truth channel {c} has zero singular values"
            )));
        }
        let mut num = 0.0;
        for (a, b) in gt_sv.iter().zip(pred_sv.iter()) {
            num += (a - b) * (a - b);
        }
        reg_term += num / gt_sv_sq;
    }
    reg_term /= gt.channels as f64;

    let total = data_term + lambda * reg_term;
    Ok(LossBreakdown {
        data_term,
        reg_term,
        lambda,
        total,
    })
}

/// Loss, gradient, and per-term gradient norms from a single SVD pass.
#[derive(Clone, Debug)]
pub struct LossEvaluation {
    pub breakdown: LossBreakdown,
    /// Gradient of the total loss with respect to the prediction.
    pub gradient: Patch,
    /// Norm of the unweighted data-term gradient.
    pub data_grad_norm: f64,
    /// Norm of the unweighted regularizer gradient.
    pub reg_grad_norm: f64,
}

/// Evaluates the loss together with its exact gradient.
///
/// The data part is 2 (pred - gt) / |gt|^2; the regularizer contributes
/// per channel (2 / (3 |sv(gt_c)|^2)) * sum_k (sv_k(pred) - sv_k(gt))
/// u_k v_k^T with u, v from the prediction's SVD (a subgradient when
/// singular values are degenerate).
pub fn svd_reg_loss_eval(pred: &Patch, gt: &Patch, lambda: f64) -> Result<LossEvaluation> {
    check_pair(pred, gt)?;
    let gt_norm_sq = gt.norm_sq();
    if gt_norm_sq <= 0.0 {
        return Err(Error::validation("svd_reg_loss: ground-truth patch has zero norm"));
    }
    let mut data_grad = Patch::zeros(pred.size, pred.channels);
    let mut diff_sq = 0.0;
    for i in 0..data_grad.data.len() {
        let d = pred.data[i] - gt.data[i];
        diff_sq += d * d;
        data_grad.data[i] = 2.0 * d / gt_norm_sq;
    }
    let data_term = diff_sq / gt_norm_sq;

    let mut reg_term = 0.0;
    let mut reg_grad = Patch::zeros(pred.size, pred.channels);
    for c in 0..gt.channels {
        let gt_sv = svd::svd(&gt.channel_mat(c))?.sigma;
        let gt_sv_sq: f64 = gt_sv.iter().map(|s| s * s).sum();
        if gt_sv_sq <= 0.0 {
            return Err(Error::validation(format!(
                "svd_reg_loss: ground-truth channel {c} has zero singular values"
            )));
        }
        let pred_f = svd::svd(&pred.channel_mat(c))?;
        let weights: Vec<f64> = pred_f
            .sigma
            .iter()
            .zip(gt_sv.iter())
            .map(|(p, g)| p - g)
            .collect();
        reg_term += weights.iter().map(|w| w * w).sum::<f64>() / gt_sv_sq;
        let dir = svd::sv_sensitivity(&pred_f, &weights)?;
        let scale = 2.0 / (gt.channels as f64 * gt_sv_sq);
        for y in 0..pred.size {
            for x in 0..pred.size {
                reg_grad.set(y, x, c, scale * dir[(y, x)]);
            }
        }
    }
    reg_term /= gt.channels as f64;

    let mut gradient = Patch::zeros(pred.size, pred.channels);
    let mut data_sq = 0.0;
    let mut reg_sq = 0.0;
    for i in 0..gradient.data.len() {
        data_sq += data_grad.data[i] * data_grad.data[i];
        reg_sq += reg_grad.data[i] * reg_grad.data[i];
        gradient.data[i] = data_grad.data[i] + lambda * reg_grad.data[i];
    }
    Ok(LossEvaluation {
        breakdown: LossBreakdown {
            data_term,
            reg_term,
            lambda,
            total: data_term + lambda * reg_term,
        },
        gradient,
        data_grad_norm: data_sq.sqrt(),
        reg_grad_norm: reg_sq.sqrt(),
    })
}

/// Gradient of the total loss with respect to the prediction.
pub fn svd_reg_loss_grad(pred: &Patch, gt: &Patch, lambda: f64) -> Result<Patch> {
    Ok(svd_reg_loss_eval(pred, gt, lambda)?.gradient)
}

/// Gradient-norm ratio balancing for the regularizer weight.
///
/// Both norms are smoothed with an exponential moving average (decay
/// `beta`); the new weight is `rho * ema_data / ema_reg`, clamped to the
/// configured interval. While the regularizer gradient has no signal
/// (ema below 1e-12) the weight stays where it is.
#[derive(Clone, Debug)]
pub struct LambdaController {
    pub rho: f64,
    pub beta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    lambda: f64,
    ema_data: Option<f64>,
    ema_reg: Option<f64>,
}

impl LambdaController {
    pub fn new(rho: f64, beta: f64, lambda_min: f64, lambda_max: f64, lambda0: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::validation(format!("rho {rho} outside (0, 1)")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::validation(format!("beta {beta} outside [0, 1)")));
        }
        if lambda_min > lambda_max {
            return Err(Error::validation("lambda_min above lambda_max"));
        }
        Ok(LambdaController {
            rho,
            beta,
            lambda_min,
            lambda_max,
            lambda: lambda0,
            ema_data: None,
            ema_reg: None,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Feeds one pair of gradient norms and returns the updated weight.
    pub fn adapt(&mut self, grad_data_norm: f64, grad_reg_norm: f64) -> f64 {
        self.ema_data = Some(match self.ema_data {
            Some(e) => self.beta * e + (1.0 - self.beta) * grad_data_norm,
            None => grad_data_norm,
        });
        self.ema_reg = Some(match self.ema_reg {
            Some(e) => self.beta * e + (1.0 - self.beta) * grad_reg_norm,
            None => grad_reg_norm,
        });
        let ema_reg = self.ema_reg.unwrap();
        if ema_reg < 1e-12 {
            return self.lambda;
        }
        let raw = self.rho * self.ema_data.unwrap() / (ema_reg + 1e-12);
        self.lambda = raw.clamp(self.lambda_min, self.lambda_max);
        self.lambda
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seeded_patch(size: usize, channels: usize, seed: u64) -> Patch {
        let mut state = seed.wrapping_mul(2).wrapping_add(1);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let data = (0..size * size * channels).map(|_| next() + 0.05).collect();
        Patch::from_vec(size, channels, data).unwrap()
    }

    #[test]
    fn zero_at_identity() {
        let p = seeded_patch(8, 3, 4);
        let l = svd_reg_loss(&p, &p, 0.7).unwrap();
        assert_eq!(l.data_term, 0.0);
        assert!(l.reg_term < 1e-24);
        assert!(l.total < 1e-24);
    }

    #[test]
    fn lambda_zero_total_equals_data_term() {
        let p = seeded_patch(8, 3, 5);
        let q = seeded_patch(8, 3, 6);
        let l = svd_reg_loss(&p, &q, 0.0).unwrap();
        assert_eq!(l.total, l.data_term);
    }

    #[test]
    fn breakdown_identity_holds() {
        let p = seeded_patch(8, 3, 7);
        let q = seeded_patch(8, 3, 8);
        let l = svd_reg_loss(&p, &q, 0.35).unwrap();
        assert!((l.total - (l.data_term + l.lambda * l.reg_term)).abs() < 1e-12);
        assert!(l.data_term >= 0.0 && l.reg_term >= 0.0 && l.total >= 0.0);
    }

    #[test]
    fn zero_norm_gt_rejected() {
        let z = Patch::zeros(8, 3);
        let p = seeded_patch(8, 3, 9);
        assert!(svd_reg_loss(&p, &z, 1.0).is_err());
        assert!(svd_reg_loss_grad(&p, &z, 1.0).is_err());
    }

    #[test]
    fn zero_channel_gt_rejected() {
        let mut gt = seeded_patch(8, 3, 10);
        for y in 0..8 {
            for x in 0..8 {
                gt.set(y, x, 1, 0.0);
            }
        }
        let p = seeded_patch(8, 3, 11);
        assert!(svd_reg_loss(&p, &gt, 1.0).is_err());
    }

    #[test]
    fn constructed_spectrum_shift_matches_reg_term() {
        // Build pred from gt's own factors with shifted singular values;
        // the regularizer must equal the normalized shift energy.
        let gt = seeded_patch(8, 3, 21);
        let mut pred = Patch::zeros(8, 3);
        let mut expect = 0.0;
        for c in 0..3 {
            let f = crate::svd::svd(&gt.channel_mat(c)).unwrap();
            // Small descending-order-preserving, non-negative shift.
            let delta: Vec<f64> = (0..f.sigma.len())
                .map(|k| 0.01 / (1.0 + k as f64))
                .collect();
            let shifted: Vec<f64> = f.sigma.iter().zip(delta.iter()).map(|(s, d)| s + d).collect();
            let rebuilt = crate::svd::sv_sensitivity(&f, &shifted).unwrap();
            pred.set_channel(c, &rebuilt);
            let gt_sq: f64 = f.sigma.iter().map(|s| s * s).sum();
            expect += delta.iter().map(|d| d * d).sum::<f64>() / gt_sq;
        }
        expect /= 3.0;
        let l = svd_reg_loss(&pred, &gt, 1.0).unwrap();
        assert!(
            (l.reg_term - expect).abs() < 1e-9,
            "reg {} vs oracle {}",
            l.reg_term,
            expect
        );
    }

    #[test]
    fn reg_zero_does_not_imply_equality() {
        // A transposed diagonal layout shares singular values but differs
        // entrywise.
        let mut gt = Patch::zeros(11, 1);
        let mut pred = Patch::zeros(11, 1);
        for i in 0..11 {
            gt.set(i, i, 0, (i + 1) as f64);
            pred.set(10 - i, 10 - i, 0, (i + 1) as f64);
        }
        let l = svd_reg_loss(&pred, &gt, 1.0).unwrap();
        assert!(l.reg_term < 1e-20);
        assert!(l.data_term > 0.1);
    }

    #[test]
    fn grad_zero_at_identity() {
        let p = seeded_patch(8, 3, 30);
        let g = svd_reg_loss_grad(&p, &p, 1.0).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn grad_lambda_zero_is_pure_data_gradient() {
        let p = seeded_patch(8, 3, 31);
        let q = seeded_patch(8, 3, 32);
        let g = svd_reg_loss_grad(&p, &q, 0.0).unwrap();
        let norm_sq = q.norm_sq();
        for i in 0..g.data().len() {
            let expect = 2.0 * (p.data()[i] - q.data()[i]) / norm_sq;
            assert!((g.data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_matches_central_differences() {
        let lambdas = [0.0, 0.1, 1.0];
        for case in 0..6u64 {
            let lambda = lambdas[case as usize % 3];
            let pred = seeded_patch(8, 3, 100 + case);
            let gt = seeded_patch(8, 3, 200 + case);
            let analytic = svd_reg_loss_grad(&pred, &gt, lambda).unwrap();
            let h = 1e-6;
            let mut num = Patch::zeros(8, 3);
            let mut probe = pred.clone();
            for i in 0..pred.data().len() {
                let orig = probe.data()[i];
                probe.data_mut()[i] = orig + h;
                let fp = svd_reg_loss(&probe, &gt, lambda).unwrap().total;
                probe.data_mut()[i] = orig - h;
                let fm = svd_reg_loss(&probe, &gt, lambda).unwrap().total;
                probe.data_mut()[i] = orig;
                num.data_mut()[i] = (fp - fm) / (2.0 * h);
            }
            let mut diff_sq = 0.0;
            let mut ref_sq = 0.0;
            for i in 0..num.data().len() {
                diff_sq += (num.data()[i] - analytic.data()[i]).powi(2);
                ref_sq += num.data()[i].powi(2);
            }
            let rel = (diff_sq / ref_sq.max(1e-300)).sqrt();
            assert!(rel < 1e-5, "lambda {lambda}: rel gradient error {rel}");
        }
    }

    #[test]
    fn combined_eval_agrees_with_separate_ops() {
        let pred = seeded_patch(8, 3, 70);
        let gt = seeded_patch(8, 3, 71);
        for lambda in [0.0, 0.3, 2.0] {
            let eval = svd_reg_loss_eval(&pred, &gt, lambda).unwrap();
            let b = svd_reg_loss(&pred, &gt, lambda).unwrap();
            assert!((eval.breakdown.total - b.total).abs() < 1e-14);
            assert!((eval.breakdown.data_term - b.data_term).abs() < 1e-14);
            assert!((eval.breakdown.reg_term - b.reg_term).abs() < 1e-14);
            let g = svd_reg_loss_grad(&pred, &gt, lambda).unwrap();
            for (a, b) in eval.gradient.data().iter().zip(g.data().iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn monotone_in_lambda() {
        let pred = seeded_patch(8, 3, 50);
        let gt = seeded_patch(8, 3, 51);
        let mut prev = svd_reg_loss(&pred, &gt, 0.0).unwrap().total;
        for lambda in [0.01, 0.1, 0.5, 1.0, 5.0] {
            let l = svd_reg_loss(&pred, &gt, lambda).unwrap();
            assert!(l.reg_term > 0.0);
            assert!(l.total >= prev);
            prev = l.total;
        }
    }

    #[test]
    fn data_term_scale_property() {
        // pred = c * gt with lambda 0 gives (c - 1)^2.
        let gt = seeded_patch(8, 3, 60);
        for c in [0.5, 1.5, 2.0] {
            let pred =
                Patch::from_vec(8, 3, gt.data().iter().map(|v| c * v).collect()).unwrap();
            let l = svd_reg_loss(&pred, &gt, 0.0).unwrap();
            assert!((l.data_term - (c - 1.0) * (c - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn controller_follows_ratio_rule() {
        let mut ctl = LambdaController::new(0.5, 0.0, 0.0, 100.0, 0.1).unwrap();
        // beta 0 means no smoothing: lambda = rho * d / r.
        let l = ctl.adapt(1.0, 10.0);
        assert!((l - 0.05).abs() < 1e-12);
    }

    #[test]
    fn controller_holds_lambda_without_reg_signal() {
        let mut ctl = LambdaController::new(0.1, 0.9, 1e-4, 10.0, 0.25).unwrap();
        for _ in 0..5 {
            assert_eq!(ctl.adapt(1.0, 0.0), 0.25);
        }
    }

    #[test]
    fn controller_clamps() {
        let mut ctl = LambdaController::new(0.9, 0.0, 1e-4, 10.0, 0.1).unwrap();
        assert_eq!(ctl.adapt(1e9, 1e-6), 10.0);
        let mut ctl2 = LambdaController::new(0.1, 0.0, 1e-4, 10.0, 0.1).unwrap();
        assert_eq!(ctl2.adapt(1e-9, 1.0), 1e-4);
    }

    proptest! {
        #[test]
        fn loss_zero_at_identity_forall(seed in 1u64..500, lambda in 0.0f64..5.0) {
            let p = seeded_patch(6, 3, seed);
            let l = svd_reg_loss(&p, &p, lambda).unwrap();
            prop_assert!(l.total < 1e-20);
        }

        #[test]
        fn controller_always_in_bounds(d in 0.0f64..1e6, r in 1e-9f64..1e6) {
            let mut ctl = LambdaController::new(0.1, 0.9, 1e-4, 10.0, 0.1).unwrap();
            let l = ctl.adapt(d, r);
            prop_assert!((1e-4..=10.0).contains(&l));
        }
    }
}
