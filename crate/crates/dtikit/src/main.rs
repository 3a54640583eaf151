//! Command-line pipeline: phantom generation, acquisition simulation,
//! tensor fitting, metric maps, rank sweeps, training, and evaluation.
//!
//! Exit codes: 0 success, 2 usage/validation problems, 3 runtime or
//! numeric failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dtikit::dataset::{make_dataset, Split, SplitFractions};
use dtikit::dti::{compute_metrics, fit_tensor_ols, TensorField};
use dtikit::error::{Error, Result};
use dtikit::gradient::GradientTable;
use dtikit::mat::Mat;
use dtikit::model::EstimatorModel;
use dtikit::noise::{add_rician, NoiseConfig};
use dtikit::pgm::write_pgm_scaled;
use dtikit::phantom::{generate_phantom, PhantomConfig};
use dtikit::svd::{rank_sweep, rank_sweep_csv};
use dtikit::train::{
    baseline_qdl, eval_csv, evaluate, extract_patches, history_csv, train, LambdaMode,
    TrainConfig,
};
use dtikit::volume::Volume3D;

#[derive(Parser)]
#[command(
    name = "dtikit",
    version,
    about = "Six-direction diffusion MRI simulation, tensor fitting, and regularized estimator training",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth tensor field.
    Phantom {
        /// key=value phantom description; built-in default when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output stem; writes <stem>.hdr.json and <stem>.raw (7 channels).
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the 7-channel acquisition from a phantom.
    Simulate {
        /// Stem of a 7-channel tensor volume produced by `phantom`.
        #[arg(long)]
        phantom: PathBuf,
        #[command(flatten)]
        gradients: GradientArgs,
        /// Rician noise level (Gaussian sigma per channel).
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// OLS tensor fit of a DWI volume.
    Fit {
        /// Stem of the DWI volume.
        #[arg(long)]
        dwi: PathBuf,
        #[command(flatten)]
        gradients: GradientArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// FA/MD/AD maps of a fitted or generated tensor volume.
    Metrics {
        /// Stem of a 7-channel tensor volume.
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank sweep of a noisy FA slice against its clean counterpart.
    SvdSweep {
        /// Stem of the clean metrics volume (must contain an FA channel).
        #[arg(long)]
        clean: PathBuf,
        /// Stem of the noisy metrics volume.
        #[arg(long)]
        noisy: PathBuf,
        /// z index of the slice to analyze.
        #[arg(long)]
        slice: usize,
        /// Comma-separated ranks, e.g. 5,20,40.
        #[arg(long, value_parser = parse_ks)]
        ks: Ks,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// When set, writes |clean - recon| error maps as PGM per rank.
        #[arg(long)]
        pgm_dir: Option<PathBuf>,
    },
    /// Train the patch estimator on a phantom-derived dataset.
    Train {
        #[command(flatten)]
        data: DatasetArgs,
        /// Regularizer weight: a number or the word `adaptive`.
        #[arg(long, default_value = "adaptive", value_parser = parse_lambda)]
        lambda: LambdaArg,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 32)]
        patch: usize,
        /// Voxelwise three-layer MLP baseline (forces patch 1, lambda 0).
        #[arg(long, default_value_t = false)]
        qdl: bool,
        /// Weight init / shuffling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output stem; writes <stem>.ckpt and <stem>.history.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained checkpoint on one dataset split.
    Eval {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which split to score.
        #[arg(long, default_value = "val")]
        subset: String,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-channel |GT - prediction| residual volume and mid-slice PGMs.
    Residuals {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output stem for the residual volume and PGM images.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GradientArgs {
    /// FSL-style b-values file; canonical 6-direction protocol when omitted.
    #[arg(long, requires = "bvecs")]
    bvals: Option<PathBuf>,
    /// FSL-style directions file (3 rows).
    #[arg(long, requires = "bvals")]
    bvecs: Option<PathBuf>,
}

impl GradientArgs {
    fn load(&self) -> Result<GradientTable> {
        match (&self.bvals, &self.bvecs) {
            (Some(bvals), Some(bvecs)) => {
                require_file(bvals)?;
                require_file(bvecs)?;
                GradientTable::load(bvals, bvecs)
            }
            _ => Ok(GradientTable::canonical_six()),
        }
    }
}

#[derive(Args)]
struct DatasetArgs {
    /// Stem of the ground-truth tensor volume from `phantom`.
    #[arg(long)]
    phantom: PathBuf,
    #[command(flatten)]
    gradients: GradientArgs,
    /// Rician noise level used to corrupt the simulated inputs.
    #[arg(long, default_value_t = 0.04)]
    sigma: f64,
    /// Noise seed (dataset identity).
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// train,val,test z-slice fractions.
    #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_split)]
    split: SplitFractions,
}

impl DatasetArgs {
    fn build(&self) -> Result<dtikit::dataset::Dataset> {
        let field = load_tensor_volume(&self.phantom)?;
        let gtab = self.gradients.load()?;
        let noise = NoiseConfig::new(self.sigma, self.noise_seed)?;
        make_dataset(&field, &gtab, &noise, &self.split)
    }
}

#[derive(Clone)]
struct Ks(Vec<usize>);

fn parse_ks(s: &str) -> std::result::Result<Ks, String> {
    let ks: std::result::Result<Vec<usize>, _> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad rank {t:?}")))
        .collect();
    let ks = ks?;
    if ks.is_empty() {
        return Err("need at least one rank".to_string());
    }
    Ok(Ks(ks))
}

#[derive(Clone)]
enum LambdaArg {
    Fixed(f64),
    Adaptive,
}

fn parse_lambda(s: &str) -> std::result::Result<LambdaArg, String> {
    if s == "adaptive" {
        return Ok(LambdaArg::Adaptive);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| format!("lambda must be a number or `adaptive`, got {s:?}"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("lambda must be finite and >= 0, got {v}"));
    }
    Ok(LambdaArg::Fixed(v))
}

fn parse_split(s: &str) -> std::result::Result<SplitFractions, String> {
    let parts: std::result::Result<Vec<f64>, _> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad fraction {t:?}")))
        .collect();
    let parts = parts?;
    if parts.len() != 3 {
        return Err("split needs exactly three fractions".to_string());
    }
    SplitFractions::new(parts[0], parts[1], parts[2]).map_err(|e| e.to_string())
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::validation(format!(
            "file not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn require_volume(stem: &Path) -> Result<()> {
    let mut header = stem.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    header.push(".hdr.json");
    let header_path = stem.with_file_name(header);
    if !header_path.is_file() {
        return Err(Error::validation(format!(
            "volume not found: {} (missing {})",
            stem.display(),
            header_path.display()
        )));
    }
    Ok(())
}

fn load_tensor_volume(stem: &Path) -> Result<TensorField> {
    require_volume(stem)?;
    TensorField::from_volume(&Volume3D::load(stem)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { config, out } => {
            let cfg = match config {
                Some(path) => {
                    require_file(&path)?;
                    PhantomConfig::load(&path)?
                }
                None => PhantomConfig::default(),
            };
            let field = generate_phantom(&cfg)?;
            field.to_volume()?.save(&out)?;
            eprintln!(
                "phantom: {}x{}x{} voxels, {} bundles -> {}",
                cfg.dims.0,
                cfg.dims.1,
                cfg.dims.2,
                cfg.bundles.len(),
                out.display()
            );
        }
        Command::Simulate {
            phantom,
            gradients,
            sigma,
            seed,
            out,
        } => {
            let field = load_tensor_volume(&phantom)?;
            let gtab = gradients.load()?;
            if !gtab.is_seven_channel_protocol() {
                return Err(Error::validation(format!(
                    "simulation requires the 7-channel protocol (1x b=0 + 6x b=1000); \
                     the supplied table has {} entries ({} at b=0)",
                    gtab.len(),
                    gtab.b0_indices().len()
                )));
            }
            let noise = NoiseConfig::new(sigma, seed)?;
            let (nx, ny, nz) = field.dims();
            let mut dwi =
                Volume3D::zeros((nx, ny, nz, gtab.len()), field.voxel_size, gtab.channel_names())?;
            for idx in 0..field.voxel_count() {
                let signals =
                    dtikit::dti::predict_signal(field.tensor(idx), field.s0(idx), &gtab);
                for (c, s) in signals.iter().enumerate() {
                    dwi.data_mut()[idx * gtab.len() + c] = *s as f32;
                }
            }
            let noisy = add_rician(&dwi, &noise);
            noisy.save(&out)?;
            eprintln!("simulate: sigma {sigma}, seed {seed} -> {}", out.display());
        }
        Command::Fit { dwi, gradients, out } => {
            require_volume(&dwi)?;
            let vol = Volume3D::load(&dwi)?;
            let gtab = gradients.load()?;
            let field = fit_tensor_ols(&vol, &gtab)?;
            let invalid = field.valid_mask().iter().filter(|&&v| !v).count();
            let psd = field.psd_violations();
            field.to_volume()?.save(&out)?;
            eprintln!(
                "fit: {} voxels, {invalid} invalid, {psd} non-PSD -> {}",
                field.voxel_count(),
                out.display()
            );
        }
        Command::Metrics { tensor, out } => {
            let field = load_tensor_volume(&tensor)?;
            compute_metrics(&field)?.save(&out)?;
            eprintln!("metrics: FA/MD/AD -> {}", out.display());
        }
        Command::SvdSweep {
            clean,
            noisy,
            slice,
            ks,
            out,
            pgm_dir,
        } => {
            require_volume(&clean)?;
            require_volume(&noisy)?;
            let clean_vol = Volume3D::load(&clean)?;
            let noisy_vol = Volume3D::load(&noisy)?;
            let fa_clean = fa_slice(&clean_vol, slice)?;
            let fa_noisy = fa_slice(&noisy_vol, slice)?;
            let rows = rank_sweep(&fa_clean, &fa_noisy, &ks.0)?;
            write_text(&out, &rank_sweep_csv(&rows))?;
            if let Some(dir) = pgm_dir {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let factors = dtikit::svd::svd(&fa_noisy)?;
                for &k in &ks.0 {
                    let recon = dtikit::svd::truncate(&factors, k)?;
                    let err = Mat::from_fn(recon.rows(), recon.cols(), |i, j| {
                        (fa_clean[(i, j)] - recon[(i, j)]).abs()
                    });
                    write_pgm_scaled(&dir.join(format!("error_k{k}.pgm")), &err)?;
                }
            }
            eprintln!("svd-sweep: {} ranks -> {}", ks.0.len(), out.display());
        }
        Command::Train {
            data,
            lambda,
            lr,
            epochs,
            batch,
            patch,
            qdl,
            seed,
            out,
        } => {
            let ds = data.build()?;
            let lambda_mode = match lambda {
                LambdaArg::Fixed(v) => LambdaMode::Fixed(v),
                LambdaArg::Adaptive => LambdaMode::Adaptive,
            };
            let cfg = TrainConfig {
                learning_rate: lr,
                epochs,
                batch_size: batch,
                patch_size: if qdl { 1 } else { patch },
                lambda: lambda_mode,
                seed,
                ..Default::default()
            };
            let (model, history) = if qdl {
                baseline_qdl(&ds, &cfg)?
            } else {
                train(&ds, &cfg)?
            };
            let ckpt = out.with_extension("ckpt");
            model.save(&ckpt)?;
            let hist_path = history_path(&out);
            write_text(&hist_path, &history_csv(&history))?;
            eprintln!(
                "train: {} epochs, final lambda {:.6} -> {} / {}",
                epochs,
                model.lambda,
                ckpt.display(),
                hist_path.display()
            );
        }
        Command::Eval {
            data,
            checkpoint,
            subset,
            out,
        } => {
            require_file(&checkpoint)?;
            let model = EstimatorModel::load(&checkpoint)?;
            let ds = data.build()?;
            let split: Split = subset.parse()?;
            let rows = evaluate(&model, &ds, split)?;
            write_text(&out, &eval_csv(&rows))?;
            eprintln!("eval: {subset} split -> {}", out.display());
        }
        Command::Residuals {
            data,
            checkpoint,
            out,
        } => {
            require_file(&checkpoint)?;
            let model = EstimatorModel::load(&checkpoint)?;
            let ds = data.build()?;
            let (nx, ny, nz) = ds.dims();
            let all: Vec<usize> = (0..nz).collect();
            let tiles = extract_patches(&ds, model.patch_size, &all)?;
            let names = dtikit::dti::METRIC_CHANNELS
                .iter()
                .map(|n| format!("residual_{n}"))
                .collect();
            let mut residual = Volume3D::zeros((nx, ny, nz, 3), ds.input.voxel_size, names)?;
            for tile in &tiles {
                let pred = model.forward(&tile.input)?;
                for c in 0..3 {
                    for py in 0..model.patch_size {
                        for px in 0..model.patch_size {
                            let x = tile.tx * model.patch_size + px;
                            let y = tile.ty * model.patch_size + py;
                            let diff =
                                (tile.target.get(py, px, c) - pred.get(py, px, c)).abs();
                            residual.set(x, y, tile.z, c, diff as f32);
                        }
                    }
                }
            }
            residual.save(&out)?;
            let mid = nz / 2;
            for (c, name) in dtikit::dti::METRIC_CHANNELS.iter().enumerate() {
                let img = residual.channel_slice(c, mid)?;
                let path = out.with_extension(format!("{}.pgm", name.to_lowercase()));
                write_pgm_scaled(&path, &img)?;
            }
            eprintln!("residuals: mid-slice z={mid} PGMs + volume -> {}", out.display());
        }
    }
    Ok(())
}

fn fa_slice(vol: &Volume3D, z: usize) -> Result<Mat> {
    let c = vol
        .channel_index("FA")
        .ok_or_else(|| Error::validation("volume has no FA channel; run `metrics` first"))?;
    let (_, _, nz, _) = vol.dims();
    if z >= nz {
        return Err(Error::validation(format!(
            "slice {z} out of range (volume has {nz} slices)"
        )));
    }
    vol.channel_slice(c, z)
}

fn history_path(stem: &Path) -> PathBuf {
    let mut name = stem.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".history.csv");
    stem.with_file_name(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
