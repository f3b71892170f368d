//! Calibrates the noise scale for an SST-2-sized fine-tuning run and compares
//! the per-coordinate noise power of DP-FP with DP-SGD at a matched budget.
//!
//! `cargo run --example calibrate`

use dpfp::accountant::{calibrate_sigma_dpfp, calibrate_sigma_dpsgd, CompositionSchedule, PrivacyBudget};
use dpfp::sampler::rate_from_batch;

fn main() -> dpfp::Result<()> {
    let (d, batch, m, epochs) = (67_349usize, 32.0, 32usize, 3.0);
    let budget = PrivacyBudget::new(1.73, 1.0 / (2.0 * d as f64))?;
    let steps = (epochs * d as f64 / batch).ceil() as u64;

    let p = rate_from_batch(batch, m, d)?;
    let fp = calibrate_sigma_dpfp(budget, &CompositionSchedule::new(steps, m as u64, p, 1.0)?)?;
    let sgd = calibrate_sigma_dpsgd(budget, steps, rate_from_batch(batch, 1, d)?, 1.0)?;

    println!("D={d} B={batch} M={m} T={steps} (eps, delta)=({}, {:.3e})", budget.epsilon(), budget.delta());
    println!("dpfp : p={p:.3e} sigma={:.6} mu_total={:.6}", fp.sigma, fp.mu_total.value());
    println!("dpsgd: p={:.3e} sigma={:.6} mu_total={:.6}", batch / d as f64, sgd.sigma, sgd.mu_total.value());
    println!("noise power ratio sigma^2 / sigma_sgd^2 = {:.5}", (fp.sigma / sgd.sigma).powi(2));

    // The ratio approaches 1/M when mu_total is small next to p sqrt(T M).
    let (p, steps, mu_total) = (0.001, 1000, 0.01);
    let fp = dpfp::accountant::sigma_for_mu_total(
        dpfp::GdpParameter::new(mu_total)?,
        &CompositionSchedule::new(steps, m as u64, p, 1.0)?,
    )?;
    let sgd = dpfp::accountant::sigma_for_mu_total(
        dpfp::GdpParameter::new(mu_total)?,
        &CompositionSchedule::dpsgd(steps, p * m as f64, 1.0)?,
    )?;
    println!("mu_total={mu_total}, p={p}, T={steps}: ratio {:.5} vs 1/M = {:.5}", (fp / sgd).powi(2), 1.0 / m as f64);
    Ok(())
}
