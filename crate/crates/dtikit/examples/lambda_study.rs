//! Scratch study: regularizer margin over seeds and epoch counts.
//! Usage: cargo run --example lambda_study -- <lambdaA|adaptive> <epochs> <seed>...

use dtikit::dataset::{make_dataset, Split, SplitFractions};
use dtikit::gradient::GradientTable;
use dtikit::noise::NoiseConfig;
use dtikit::phantom::{generate_phantom, PhantomConfig};
use dtikit::train::{evaluate, train, LambdaMode, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arm_a = if args[0] == "adaptive" {
        LambdaMode::Adaptive
    } else {
        LambdaMode::Fixed(args[0].parse().unwrap())
    };
    let epochs: usize = args[1].parse().unwrap();
    let seeds: Vec<u64> = args[2..].iter().map(|s| s.parse().unwrap()).collect();
    let field = generate_phantom(&PhantomConfig::default()).unwrap();
    let gtab = GradientTable::canonical_six();
    let mut rows = Vec::new();
    for &seed in &seeds {
        let ds = make_dataset(
            &field,
            &gtab,
            &NoiseConfig::new(0.04, 100 + seed).unwrap(),
            &SplitFractions::default(),
        )
        .unwrap();
        let base = TrainConfig {
            epochs,
            seed,
            ..Default::default()
        };
        let (ma, ha) = train(
            &ds,
            &TrainConfig {
                lambda: arm_a.clone(),
                ..base.clone()
            },
        )
        .unwrap();
        let (mz, hz) = train(
            &ds,
            &TrainConfig {
                lambda: LambdaMode::Fixed(0.0),
                ..base
            },
        )
        .unwrap();
        let pa = evaluate(&ma, &ds, Split::Val).unwrap()[3].psnr;
        let pz = evaluate(&mz, &ds, Split::Val).unwrap()[3].psnr;
        let ca: Vec<String> = ha.iter().map(|r| format!("{:.4}", r.val_psnr)).collect();
        let cz: Vec<String> = hz.iter().map(|r| format!("{:.4}", r.val_psnr)).collect();
        println!("traj {seed} a {}", ca.join(","));
        println!("traj {seed} z {}", cz.join(","));
        println!("seed {seed}: adaptive {pa:.4} lambda0 {pz:.4} margin {:+.4}", pa - pz);
        rows.push((pa, pz));
    }
    let ma: f64 = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let mz: f64 = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    println!("epochs {epochs}: mean adaptive {ma:.4} lambda0 {mz:.4} margin {:+.4}", ma - mz);
}
