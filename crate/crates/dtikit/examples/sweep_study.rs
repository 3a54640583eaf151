//! Scratch study: rank-sweep margin (best-k PSNR minus full-rank PSNR)
//! for candidate phantom geometries.

use dtikit::dti::compute_metrics;
use dtikit::noise::{add_rician, NoiseConfig};
use dtikit::phantom::{generate_phantom, BundleSpec, PhantomConfig};
use dtikit::svd::rank_sweep;
use dtikit::volume::Volume3D;

fn study(name: &str, cfg: &PhantomConfig, z: usize, seeds: &[u64]) {
    let field = generate_phantom(cfg).unwrap();
    let metrics = compute_metrics(&field).unwrap();
    let fa = metrics.channel_index("FA").unwrap();
    let clean = metrics.channel_slice(fa, z).unwrap();
    let (nx, ny, _) = field.dims();
    let ks: Vec<usize> = (1..=nx.min(ny)).collect();
    for &seed in seeds {
        let mut vol = Volume3D::zeros((nx, ny, 1, 1), [1.0; 3], vec!["FA".into()]).unwrap();
        for y in 0..ny {
            for x in 0..nx {
                vol.set(x, y, 0, 0, clean[(y, x)] as f32);
            }
        }
        let noisy_vol = add_rician(&vol, &NoiseConfig::new(0.04, seed).unwrap());
        let noisy = noisy_vol.channel_slice(0, 0).unwrap();
        let rows = rank_sweep(&clean, &noisy, &ks).unwrap();
        let best = rows
            .iter()
            .max_by(|a, b| a.psnr.partial_cmp(&b.psnr).unwrap())
            .unwrap();
        let full = rows.last().unwrap();
        println!(
            "{name} seed {seed}: best k={} psnr {:.3} vs full {:.3} margin {:+.3}",
            best.k,
            best.psnr,
            full.psnr,
            best.psnr - full.psnr
        );
    }
}

fn main() {
    // Single broad bundle, 64x64 (the near-miss from the first pass).
    study(
        "C(64, single broad)",
        &PhantomConfig {
            dims: (64, 64, 16),
            bundles: vec![BundleSpec {
                radius: 12.0,
                control_points: vec![[4.0, 28.0, 8.0], [32.0, 40.0, 8.0], [59.0, 28.0, 8.0]],
            }],
            ..Default::default()
        },
        8,
        &[505, 1, 2],
    );
    // Single very broad, gently curved bundle at 128x128.
    study(
        "E(128, single broad)",
        &PhantomConfig {
            dims: (128, 128, 16),
            bundles: vec![BundleSpec {
                radius: 24.0,
                control_points: vec![[8.0, 56.0, 8.0], [64.0, 80.0, 8.0], [119.0, 56.0, 8.0]],
            }],
            ..Default::default()
        },
        8,
        &[505, 1, 2],
    );
    // Broad straight bundle at 64x64 (constant tangent, two-level FA).
    study(
        "F(64, straight broad)",
        &PhantomConfig {
            dims: (64, 64, 16),
            bundles: vec![BundleSpec {
                radius: 12.0,
                control_points: vec![[4.0, 32.0, 8.0], [59.0, 32.0, 8.0]],
            }],
            ..Default::default()
        },
        8,
        &[505, 1, 2],
    );
    // Two broad gently curved bundles at 128x128.
    study(
        "G(128, two broad)",
        &PhantomConfig {
            dims: (128, 128, 16),
            bundles: vec![
                BundleSpec {
                    radius: 20.0,
                    control_points: vec![[8.0, 44.0, 8.0], [64.0, 64.0, 8.0], [119.0, 44.0, 8.0]],
                },
                BundleSpec {
                    radius: 16.0,
                    control_points: vec![[44.0, 8.0, 8.0], [56.0, 64.0, 8.0], [44.0, 119.0, 8.0]],
                },
            ],
            ..Default::default()
        },
        8,
        &[505, 1, 2],
    );
}
