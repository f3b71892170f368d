//! The inverse query: privacy spent by a given noise scale, as a curve of
//! (eps, delta) pairs.
//!
//! `cargo run --example account`

use dpfp::accountant::{compose_mu_dpfp, delta_from_mu, epsilon_from_mu, CompositionSchedule, GdpParameter};

fn main() -> dpfp::Result<()> {
    let schedule = CompositionSchedule::new(169, 32, 32.0 / (32.0 * 1800.0), 1.0)?;
    for sigma in [0.3, 0.5, 1.0] {
        let mu = compose_mu_dpfp(GdpParameter::from_mechanism(1.0, sigma)?, &schedule)?;
        let eps = epsilon_from_mu(mu, 1e-5)?;
        println!("sigma={sigma}: mu_total={:.4}  eps(delta=1e-5)={eps:.3}  delta(eps=1)={:.3e}", mu.value(), delta_from_mu(1.0, mu)?);
    }
    Ok(())
}
