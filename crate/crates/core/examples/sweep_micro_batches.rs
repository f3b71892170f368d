//! Accuracy against the number of micro-batches M under a tight budget. At a
//! fixed expected batch, more micro-batches lower the per-record sampling
//! rate, which buys a smaller noise scale for the same (eps, delta).
//!
//! `cargo run --release --example sweep_micro_batches`

use dpfp::data::gaussian_blobs;
use dpfp::trainer::{train_dpfp, Seeds};
use dpfp::TrainConfig;

fn main() -> dpfp::Result<()> {
    let (train, dev) = gaussian_blobs(2000, 20, 2, 3.0, 7)?;
    for m in [1, 2, 8, 32] {
        let mut accs = Vec::new();
        let mut sigma = 0.0;
        for s in 0..5 {
            let config = TrainConfig {
                epsilon: 0.03,
                delta: Some(1.0 / 4000.0),
                micro_batches: m,
                learning_rate: 1e-2,
                seeds: Seeds::DEFAULT.offset(s),
                ..TrainConfig::default()
            };
            let (_, metrics) = train_dpfp(&config, &train, Some(&dev))?;
            accs.push(metrics.final_accuracy.unwrap_or(f64::NAN));
            sigma = metrics.sigma.unwrap_or(0.0);
        }
        let (mean, std) = dpfp::cli::mean_std(&accs);
        println!("M={m:<3} sigma={sigma:<8.4} accuracy {mean:.3} ± {std:.3}");
    }
    Ok(())
}
