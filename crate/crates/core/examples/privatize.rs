//! Clips and noises a single representation vector, the per-record
//! mechanism that DP-FP applies in the forward pass.
//!
//! `cargo run --example privatize`

use dpfp::{clip_l2, privatize, NoiseSpec, RepresentationVector};

fn main() -> dpfp::Result<()> {
    let rep = RepresentationVector::new(vec![3.0, 4.0, 0.0, 0.0]);
    let clip = 1.0;
    let clipped = clip_l2(&rep, clip)?;
    println!("input   {:?} |v| = {}", rep.as_slice(), rep.norm());
    println!("clipped {:?} |v| = {}", clipped.as_slice(), clipped.norm());

    for seed in 0..3 {
        let noisy = privatize(&rep, clip, &NoiseSpec::new(0.5, rep.len(), seed)?)?;
        println!("seed {seed}  {:?}", noisy.as_slice());
    }
    Ok(())
}
