//! Trains the desk-scale model with DP-FP on synthetic Gaussian blobs and
//! prints per-epoch dev accuracy and the privacy spent.
//!
//! `cargo run --release --example train_dpfp`

use dpfp::data::gaussian_blobs;
use dpfp::trainer::train_dpfp;
use dpfp::TrainConfig;

fn main() -> dpfp::Result<()> {
    let (train, dev) = gaussian_blobs(2000, 20, 2, 3.0, 7)?;
    let config = TrainConfig {
        epsilon: 3.0,
        delta: Some(1.0 / 4000.0),
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let (_, metrics) = train_dpfp(&config, &train, Some(&dev))?;
    for (k, v) in metrics.summary_lines() {
        println!("{k}={v}");
    }
    Ok(())
}
