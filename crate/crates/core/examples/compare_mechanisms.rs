//! DP-FP, DP-SGD and non-private training on the same data, budget and seeds.
//!
//! `cargo run --release --example compare_mechanisms`

use dpfp::data::gaussian_blobs;
use dpfp::trainer::{train, Seeds};
use dpfp::{Mode, TrainConfig};

fn main() -> dpfp::Result<()> {
    let (train_set, dev) = gaussian_blobs(2000, 20, 2, 3.0, 7)?;
    for mode in [Mode::Dpfp, Mode::Dpsgd, Mode::Nonprivate] {
        let mut accs = Vec::new();
        let mut sigma = None;
        for s in 0..5 {
            let config = TrainConfig {
                mode,
                delta: Some(1.0 / 4000.0),
                learning_rate: 1e-2,
                seeds: Seeds::DEFAULT.offset(s),
                ..TrainConfig::default()
            };
            let (_, m) = train(&config, &train_set, Some(&dev))?;
            accs.push(m.reported_accuracy.unwrap_or(f64::NAN));
            sigma = m.sigma;
        }
        let (mean, std) = dpfp::cli::mean_std(&accs);
        println!("{mode:<10} accuracy {mean:.3} ± {std:.3}  sigma {sigma:?}");
    }
    Ok(())
}
