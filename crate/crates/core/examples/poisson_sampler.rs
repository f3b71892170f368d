//! Draws Poisson micro-batches: each record joins each micro-batch
//! independently with probability `p = B / (M D)`.
//!
//! `cargo run --example poisson_sampler`

use dpfp::sampler::{draw_step, rate_from_batch, SamplerConfig};

fn main() -> dpfp::Result<()> {
    let (d, batch, m) = (1000, 32.0, 4);
    let p = rate_from_batch(batch, m, d)?;
    let cfg = SamplerConfig::new(d, m, p, 29)?;
    println!("p = {p}, expected records per step = {}", cfg.expected_step_size());
    for t in 0..3 {
        let sizes: Vec<usize> = draw_step(&cfg, t).iter().map(|b| b.len()).collect();
        println!("step {t}: micro-batch sizes {sizes:?}");
    }
    Ok(())
}
