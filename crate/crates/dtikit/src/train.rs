//! Mini-batch training of the patch estimator with Adam-style moment
//! scaling and the singular-value regularized loss, plus slice-level
//! evaluation against the clean metric maps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::loss::{svd_reg_loss, svd_reg_loss_eval, LambdaController, Patch};
use crate::mat::Mat;
use crate::model::{DenseLayer, EstimatorModel, INPUT_CHANNELS, OUTPUT_CHANNELS};
use crate::quality;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Patches whose ground truth falls below this norm (overall or per
/// channel) cannot be scored by the loss and are excluded from training.
const PATCH_NORM_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum LambdaMode {
    Fixed(f64),
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveParams {
    pub rho: f64,
    pub beta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_init: f64,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        AdaptiveParams {
            rho: 0.1,
            beta: 0.9,
            lambda_min: 1e-4,
            lambda_max: 10.0,
            lambda_init: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub hidden: Vec<usize>,
    pub lambda: LambdaMode,
    pub adaptive: AdaptiveParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 8,
            patch_size: 32,
            hidden: vec![256, 256],
            lambda: LambdaMode::Adaptive,
            adaptive: AdaptiveParams::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patch_size == 0 {
            return Err(Error::validation(
                "epochs, batch size, and patch size must be positive",
            ));
        }
        if let LambdaMode::Fixed(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::validation("fixed lambda must be finite and >= 0"));
            }
        }
        let a = &self.adaptive;
        if !(a.rho > 0.0 && a.rho < 1.0) {
            return Err(Error::validation("adaptive rho must lie in (0, 1)"));
        }
        if a.lambda_min > a.lambda_max {
            return Err(Error::validation("lambda_min above lambda_max"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_total: f64,
    pub val_data: f64,
    pub val_reg: f64,
    pub lambda: f64,
    pub val_psnr: f64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from(quality::CSV_METRIC_NOTE);
    out.push_str("epoch,train_total,val_data,val_reg,lambda,val_psnr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train_total, r.val_data, r.val_reg, r.lambda, r.val_psnr
        ));
    }
    out
}

/// One input/target patch pair with its tile position.
#[derive(Clone, Debug)]
pub struct PatchPair {
    pub input: Patch,
    pub target: Patch,
    pub z: usize,
    pub ty: usize,
    pub tx: usize,
}

/// Non-overlapping tiling of the given slices into P x P patch pairs.
/// The grid must divide evenly.
pub fn extract_patches(ds: &Dataset, patch_size: usize, slices: &[usize]) -> Result<Vec<PatchPair>> {
    let (nx, ny, nz) = ds.dims();
    if patch_size == 0 || nx % patch_size != 0 || ny % patch_size != 0 {
        return Err(Error::validation(format!(
            "patch size {patch_size} does not tile the {nx}x{ny} slice grid"
        )));
    }
    let mut out = Vec::new();
    for &z in slices {
        if z >= nz {
            return Err(Error::validation(format!("slice {z} out of range")));
        }
        for ty in 0..ny / patch_size {
            for tx in 0..nx / patch_size {
                let mut input = Patch::zeros(patch_size, INPUT_CHANNELS);
                let mut target = Patch::zeros(patch_size, OUTPUT_CHANNELS);
                for py in 0..patch_size {
                    for px in 0..patch_size {
                        let (x, y) = (tx * patch_size + px, ty * patch_size + py);
                        for c in 0..INPUT_CHANNELS {
                            input.set(py, px, c, ds.input.get(x, y, z, c) as f64);
                        }
                        for c in 0..OUTPUT_CHANNELS {
                            target.set(py, px, c, ds.target.get(x, y, z, c) as f64);
                        }
                    }
                }
                out.push(PatchPair {
                    input,
                    target,
                    z,
                    ty,
                    tx,
                });
            }
        }
    }
    Ok(out)
}

/// Keeps only patches the loss can score: nonzero target norm overall and
/// per channel.
pub fn filter_trainable(patches: Vec<PatchPair>) -> Vec<PatchPair> {
    patches
        .into_iter()
        .filter(|p| {
            if p.target.norm_sq() <= PATCH_NORM_FLOOR {
                return false;
            }
            (0..OUTPUT_CHANNELS).all(|c| p.target.channel_mat(c).frob_norm() > PATCH_NORM_FLOOR)
        })
        .collect()
}

struct AdamState {
    m: Vec<DenseLayer>,
    v: Vec<DenseLayer>,
    step: usize,
}

impl AdamState {
    fn new(model: &EstimatorModel) -> Self {
        AdamState {
            m: model.zero_gradients(),
            v: model.zero_gradients(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut EstimatorModel, grads: &[DenseLayer], lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - ADAM_BETA1.powf(t);
        let bias2 = 1.0 - ADAM_BETA2.powf(t);
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let (gm, gv) = (&mut self.m[li], &mut self.v[li]);
            let gw = grads[li].w.data();
            for (i, wv) in layer.w.data_mut().iter_mut().enumerate() {
                let g = gw[i];
                let m = ADAM_BETA1 * gm.w.data()[i] + (1.0 - ADAM_BETA1) * g;
                let v = ADAM_BETA2 * gv.w.data()[i] + (1.0 - ADAM_BETA2) * g * g;
                gm.w.data_mut()[i] = m;
                gv.w.data_mut()[i] = v;
                *wv -= lr * (m / bias1) / ((v / bias2).sqrt() + ADAM_EPS);
            }
            for (i, bv) in layer.b.iter_mut().enumerate() {
                let g = grads[li].b[i];
                let m = ADAM_BETA1 * gm.b[i] + (1.0 - ADAM_BETA1) * g;
                let v = ADAM_BETA2 * gv.b[i] + (1.0 - ADAM_BETA2) * g * g;
                gm.b[i] = m;
                gv.b[i] = v;
                *bv -= lr * (m / bias1) / ((v / bias2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Curated patch sets for one training run.
pub struct TrainData {
    pub train: Vec<PatchPair>,
    pub val: Vec<PatchPair>,
    /// Full (unfiltered) validation tiling used for PSNR reconstruction.
    pub val_tiles: Vec<PatchPair>,
    pub val_slices: Vec<usize>,
    pub grid: (usize, usize, usize),
}

/// Splits the dataset into trainable patches and validation tiles.
pub fn prepare(ds: &Dataset, patch_size: usize) -> Result<TrainData> {
    let train = filter_trainable(extract_patches(ds, patch_size, &ds.split.train)?);
    let val_tiles = extract_patches(ds, patch_size, &ds.split.val)?;
    let val = filter_trainable(val_tiles.clone());
    if train.is_empty() {
        return Err(Error::validation(
            "no trainable patches: every training patch has a zero-norm target channel",
        ));
    }
    Ok(TrainData {
        train,
        val,
        val_tiles,
        val_slices: ds.split.val.clone(),
        grid: ds.dims(),
    })
}

/// Reconstructs full slices by tiling model outputs and scores the
/// aggregate PSNR over all three channels against the targets.
fn tiled_psnr(model: &EstimatorModel, tiles: &[PatchPair]) -> Result<f64> {
    if tiles.is_empty() {
        return Ok(f64::INFINITY);
    }
    let mut pred_all = Vec::new();
    let mut gt_all = Vec::new();
    for tile in tiles {
        let out = model.forward(&tile.input)?;
        pred_all.extend_from_slice(out.data());
        gt_all.extend_from_slice(tile.target.data());
    }
    quality::psnr(&gt_all, &pred_all)
}

/// Core optimization loop over prepared patch sets. Returns the
/// best-validation epoch snapshot together with the full history.
pub fn train_prepared(data: &TrainData, cfg: &TrainConfig) -> Result<(EstimatorModel, Vec<HistoryRow>)> {
    cfg.validate()?;
    let mut model = EstimatorModel::new(cfg.patch_size, &cfg.hidden, cfg.seed)?;
    let mut adam = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_6e64);
    let mut controller = match cfg.lambda {
        LambdaMode::Fixed(_) => None,
        LambdaMode::Adaptive => Some(LambdaController::new(
            cfg.adaptive.rho,
            cfg.adaptive.beta,
            cfg.adaptive.lambda_min,
            cfg.adaptive.lambda_max,
            cfg.adaptive.lambda_init,
        )?),
    };
    let mut lambda = match cfg.lambda {
        LambdaMode::Fixed(l) => l,
        LambdaMode::Adaptive => cfg.adaptive.lambda_init,
    };

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    // Best-validation checkpoint: the returned model is the epoch snapshot
    // with the highest validation PSNR (earliest on ties), not the last.
    let mut best: Option<(f64, usize, f64, EstimatorModel)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        let mut epoch_grad_data = 0.0;
        let mut epoch_grad_reg = 0.0;
        let mut epoch_terms = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.zero_gradients();
            let mut batch_loss = 0.0;
            for &pi in batch {
                let pair = &data.train[pi];
                let trace = model.forward_trace(pair.input.data())?;
                let pred = Patch::from_vec(
                    cfg.patch_size,
                    OUTPUT_CHANNELS,
                    trace.last().unwrap().clone(),
                )?;
                let eval = svd_reg_loss_eval(&pred, &pair.target, lambda)?;
                if !eval.breakdown.total.is_finite() {
                    return Err(Error::numeric(format!(
                        "training diverged at epoch {epoch}: loss {:?} (lambda {lambda}, lr {})",
                        eval.breakdown, cfg.learning_rate
                    )));
                }
                batch_loss += eval.breakdown.total;
                model.backprop(&trace, eval.gradient.data(), &mut grads)?;
                if controller.is_some() {
                    epoch_grad_data += eval.data_grad_norm;
                    epoch_grad_reg += eval.reg_grad_norm;
                    epoch_terms += 1;
                }
            }
            // Mean gradient over the batch, fixed reduction order.
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                for v in g.w.data_mut() {
                    *v *= scale;
                }
                for v in g.b.iter_mut() {
                    *v *= scale;
                }
            }
            adam.update(&mut model, &grads, cfg.learning_rate);
            epoch_loss += batch_loss * scale;
            epoch_batches += 1;
        }
        let train_total = epoch_loss / epoch_batches.max(1) as f64;
        if !train_total.is_finite() {
            return Err(Error::numeric(format!(
                "training diverged at epoch {epoch}: mean loss {train_total}"
            )));
        }

        // Validation terms at the lambda used this epoch.
        let (mut val_data, mut val_reg) = (0.0, 0.0);
        for pair in &data.val {
            let pred = model.forward(&pair.input)?;
            let b = svd_reg_loss(&pred, &pair.target, lambda)?;
            val_data += b.data_term;
            val_reg += b.reg_term;
        }
        let nval = data.val.len().max(1) as f64;
        val_data /= nval;
        val_reg /= nval;
        let val_psnr = tiled_psnr(&model, &data.val_tiles)?;
        history.push(HistoryRow {
            epoch,
            train_total,
            val_data,
            val_reg,
            lambda,
            val_psnr,
        });
        if !data.val_tiles.is_empty() && best.as_ref().map_or(true, |(b, ..)| val_psnr > *b) {
            best = Some((val_psnr, epoch, lambda, model.clone()));
        }

        if let Some(ctl) = controller.as_mut() {
            if epoch_terms > 0 {
                lambda = ctl.adapt(
                    epoch_grad_data / epoch_terms as f64,
                    epoch_grad_reg / epoch_terms as f64,
                );
            }
        }
    }
    let (final_lambda, trained_epochs, mut model) = match best {
        Some((_, epoch, l, snapshot)) => (l, epoch, snapshot),
        None => (lambda, cfg.epochs, model),
    };
    model.lambda = final_lambda;
    model.seed = cfg.seed;
    model.epochs_trained = trained_epochs;
    Ok((model, history))
}

/// Trains the configured estimator on a dataset's train split, reporting
/// validation terms per epoch.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(EstimatorModel, Vec<HistoryRow>)> {
    let data = prepare(ds, cfg.patch_size)?;
    train_prepared(&data, cfg)
}

/// Voxelwise three-layer MLP baseline: P = 1 with two tanh hidden layers.
/// The singular-value regularizer is vacuous on 1x1 patches, so any
/// nonzero or adaptive lambda is rejected.
pub fn baseline_qdl(ds: &Dataset, cfg: &TrainConfig) -> Result<(EstimatorModel, Vec<HistoryRow>)> {
    if cfg.patch_size != 1 {
        return Err(Error::validation("baseline_qdl requires patch size 1"));
    }
    match cfg.lambda {
        LambdaMode::Fixed(l) if l == 0.0 => {}
        _ => {
            return Err(Error::validation(
                "the regularizer is undefined at P=1; baseline_qdl requires lambda fixed at 0",
            ))
        }
    }
    let cfg = TrainConfig {
        hidden: vec![150, 150],
        ..cfg.clone()
    };
    train(ds, &cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub channel: String,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(quality::CSV_METRIC_NOTE);
    out.push_str("channel,mse,psnr,ssim\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6e},{:.6},{:.6}\n",
            r.channel, r.mse, r.psnr, r.ssim
        ));
    }
    out
}

/// Reconstructs the chosen split's slices with the model and scores each
/// metric channel plus a 3-channel aggregate. Returns exactly 4 rows:
/// FA, MD, AD, aggregate.
pub fn evaluate(model: &EstimatorModel, ds: &Dataset, split: Split) -> Result<Vec<EvalRow>> {
    evaluate_with(ds, split, model.patch_size, |input| model.forward(input))
}

/// Evaluation against an arbitrary predictor; `evaluate` and tests share
/// this path.
pub fn evaluate_with(
    ds: &Dataset,
    split: Split,
    patch_size: usize,
    mut predictor: impl FnMut(&Patch) -> Result<Patch>,
) -> Result<Vec<EvalRow>> {
    let slices = ds.split.slices(split);
    if slices.is_empty() {
        return Err(Error::validation("requested split has no slices"));
    }
    let tiles = extract_patches(ds, patch_size, slices)?;
    let (nx, ny, _) = ds.dims();

    // Stitch predictions back into per-slice channel images.
    let mut pred_slices: Vec<Vec<Mat>> = slices
        .iter()
        .map(|_| (0..OUTPUT_CHANNELS).map(|_| Mat::zeros(ny, nx)).collect())
        .collect();
    let mut gt_slices: Vec<Vec<Mat>> = pred_slices.clone();
    let slice_pos: std::collections::HashMap<usize, usize> =
        slices.iter().enumerate().map(|(i, &z)| (z, i)).collect();
    for tile in &tiles {
        let pred = predictor(&tile.input)?;
        let si = slice_pos[&tile.z];
        for c in 0..OUTPUT_CHANNELS {
            for py in 0..patch_size {
                for px in 0..patch_size {
                    let (x, y) = (tile.tx * patch_size + px, tile.ty * patch_size + py);
                    pred_slices[si][c][(y, x)] = pred.get(py, px, c);
                    gt_slices[si][c][(y, x)] = tile.target.get(py, px, c);
                }
            }
        }
    }

    let mut rows = Vec::with_capacity(4);
    let mut agg_pred = Vec::new();
    let mut agg_gt = Vec::new();
    let mut agg_ssim = 0.0;
    for (c, name) in crate::dti::METRIC_CHANNELS.iter().enumerate() {
        let mut pred_all = Vec::new();
        let mut gt_all = Vec::new();
        let mut ssim_sum = 0.0;
        for si in 0..slices.len() {
            pred_all.extend_from_slice(pred_slices[si][c].data());
            gt_all.extend_from_slice(gt_slices[si][c].data());
            ssim_sum += quality::ssim(&gt_slices[si][c], &pred_slices[si][c])?;
        }
        let ssim = ssim_sum / slices.len() as f64;
        rows.push(EvalRow {
            channel: name.to_string(),
            mse: quality::mse(&gt_all, &pred_all)?,
            psnr: quality::psnr(&gt_all, &pred_all)?,
            ssim,
        });
        agg_ssim += ssim;
        agg_pred.extend_from_slice(&pred_all);
        agg_gt.extend_from_slice(&gt_all);
    }
    rows.push(EvalRow {
        channel: "aggregate".to_string(),
        mse: quality::mse(&agg_gt, &agg_pred)?,
        psnr: quality::psnr(&agg_gt, &agg_pred)?,
        ssim: agg_ssim / OUTPUT_CHANNELS as f64,
    });
    Ok(rows)
}
