//! Gaussian-DP privacy accounting.
//!
//! A Gaussian mechanism with L2 sensitivity `C` and per-coordinate noise
//! `sigma` is `mu`-GDP with `mu = C / sigma`. Its `(epsilon, delta)` profile is
//!
//! ```text
//! delta(eps; mu) = Phi(-eps/mu + mu/2) - e^eps * Phi(-eps/mu - mu/2)
//! ```
//!
//! Under Poisson subsampling at rate `p` and `n` invocations, the central
//! limit theorem gives a single composed parameter
//! `mu_total = p * sqrt(n * (e^{mu^2} - 1))`. For DP-FP `n = T * M`
//! (steps times micro-batches); for DP-SGD `n = T`.
//!
//! Calibration runs the other way: invert the profile for `mu_total`, then
//! invert the composition in closed form for `sigma`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower end of the bracket searched by [`mu_from_budget`].
pub const MU_BRACKET_LO: f64 = 1e-10;
/// Upper end of the bracket searched by [`mu_from_budget`].
pub const MU_BRACKET_HI: f64 = 100.0;

/// Target `(epsilon, delta)` a run must not exceed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// A Gaussian-DP parameter `mu >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct GdpParameter(f64);

impl GdpParameter {
    pub const ZERO: GdpParameter = GdpParameter(0.0);

    pub fn new(mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mu must be finite and >= 0, got {mu}"
            )));
        }
        Ok(Self(mu))
    }

    /// `mu = clip / sigma` of a single Gaussian mechanism invocation.
    pub fn from_mechanism(clip: f64, sigma: f64) -> Result<Self> {
        if !(clip > 0.0 && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clip and sigma must be positive, got clip={clip}, sigma={sigma}"
            )));
        }
        Self::new(clip / sigma)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `(T, M, p, C)`: steps, micro-batches per step, per-record sampling rate
/// and L2 clip threshold.
///
/// `sample_rate = 0` is accepted so degenerate sweeps compose to zero cost,
/// and `clip = +inf` describes an unclipped (non-private) run; calibration
/// rejects both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositionSchedule {
    steps: u64,
    micro_batches: u64,
    sample_rate: f64,
    clip: f64,
}

impl CompositionSchedule {
    pub fn new(steps: u64, micro_batches: u64, sample_rate: f64, clip: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if micro_batches == 0 {
            return Err(Error::InvalidArgument("micro_batches must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&sample_rate) {
            return Err(Error::InvalidArgument(format!(
                "sample_rate must lie in [0, 1], got {sample_rate}"
            )));
        }
        if clip.is_nan() || clip <= 0.0 {
            return Err(Error::InvalidArgument(format!("clip must be > 0, got {clip}")));
        }
        Ok(Self {
            steps,
            micro_batches,
            sample_rate,
            clip,
        })
    }

    /// DP-SGD schedule: one Poisson batch per step at rate `sample_rate`.
    pub fn dpsgd(steps: u64, sample_rate: f64, clip: f64) -> Result<Self> {
        Self::new(steps, 1, sample_rate, clip)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn micro_batches(&self) -> u64 {
        self.micro_batches
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    /// Total number of composed mechanism invocations, `T * M`.
    pub fn rounds(&self) -> u64 {
        self.steps * self.micro_batches
    }

    /// The same schedule truncated to its first `steps` steps.
    pub fn truncated(&self, steps: u64) -> Self {
        Self { steps, ..*self }
    }
}

/// Calibrated noise scale and the budget it realizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub sigma: f64,
    pub mu_total: GdpParameter,
    pub achieved_budget: PrivacyBudget,
}

/// Standard normal c.d.f. `Phi(t)`.
pub fn standard_normal_cdf(t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("standard_normal_cdf({t})")));
    }
    Ok(phi(t))
}

fn phi(t: f64) -> f64 {
    0.5 * libm::erfc(-t * std::f64::consts::FRAC_1_SQRT_2)
}

/// `delta(eps; mu)`, the Gaussian-DP privacy profile. Exactly 0 at `mu = 0`.
pub fn delta_from_mu(epsilon: f64, mu: GdpParameter) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    Ok(profile(epsilon, mu.value()))
}

fn profile(epsilon: f64, mu: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let ratio = epsilon / mu;
    let head = phi(-ratio + 0.5 * mu);
    let tail = phi(-ratio - 0.5 * mu);
    let scaled_tail = if tail == 0.0 {
        0.0
    } else if epsilon < 700.0 {
        epsilon.exp() * tail
    } else {
        (epsilon + tail.ln()).exp()
    };
    (head - scaled_tail).max(0.0)
}

/// Inverts the privacy profile: the unique `mu` with `delta(eps; mu) = delta`.
///
/// Bisection over `[MU_BRACKET_LO, MU_BRACKET_HI]`, run until the bracket
/// collapses to adjacent floats.
pub fn mu_from_budget(budget: PrivacyBudget) -> Result<GdpParameter> {
    let (eps, target) = (budget.epsilon(), budget.delta());
    let unachievable = || Error::BudgetUnachievable {
        epsilon: eps,
        delta: target,
        mu_lo: MU_BRACKET_LO,
        mu_hi: MU_BRACKET_HI,
    };
    if target >= profile(eps, MU_BRACKET_HI) || target < profile(eps, MU_BRACKET_LO) {
        return Err(unachievable());
    }
    let (mut lo, mut hi) = (MU_BRACKET_LO, MU_BRACKET_HI);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if profile(eps, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = if (profile(eps, lo) - target).abs() <= (profile(eps, hi) - target).abs() {
        lo
    } else {
        hi
    };
    GdpParameter::new(best)
}

/// Smallest `epsilon` with `delta(eps; mu) <= delta`, by bisection.
///
/// Used for the inverse "what did this run spend" query.
pub fn epsilon_from_mu(mu: GdpParameter, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let mu = mu.value();
    if profile(0.0, mu) <= delta {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while profile(hi, mu) > delta {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidArgument(format!(
                "no finite epsilon reaches delta {delta} at mu {mu}"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if profile(mid, mu) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `p * sqrt(rounds * (e^{mu^2} - 1))` for an arbitrary number of rounds.
pub fn compose_rounds(mu_step: GdpParameter, sample_rate: f64, rounds: u64) -> Result<GdpParameter> {
    compose(mu_step, sample_rate, rounds)
}

fn compose(mu_step: GdpParameter, sample_rate: f64, rounds: u64) -> Result<GdpParameter> {
    let mu = mu_step.value();
    if mu == 0.0 || sample_rate == 0.0 {
        return Ok(GdpParameter::ZERO);
    }
    let growth = (mu * mu).exp_m1();
    if !growth.is_finite() {
        return Err(Error::CompositionOverflow(mu));
    }
    GdpParameter::new(sample_rate * (rounds as f64 * growth).sqrt())
}

/// CLT composition over the `T * M` subsampled micro-batch mechanisms of a
/// DP-FP run.
pub fn compose_mu_dpfp(mu_step: GdpParameter, schedule: &CompositionSchedule) -> Result<GdpParameter> {
    compose(mu_step, schedule.sample_rate(), schedule.rounds())
}

/// CLT composition over the `T` subsampled batches of a DP-SGD run.
pub fn compose_mu_dpsgd(mu_step: GdpParameter, steps: u64, sample_rate: f64) -> Result<GdpParameter> {
    if !(0.0..=1.0).contains(&sample_rate) {
        return Err(Error::InvalidArgument(format!(
            "sample_rate must lie in [0, 1], got {sample_rate}"
        )));
    }
    compose(mu_step, sample_rate, steps)
}

/// Closed-form inverse of the composition: the per-coordinate `sigma` whose
/// `T * M`-fold composition at rate `p` is exactly `mu_total`.
pub fn sigma_for_mu_total(mu_total: GdpParameter, schedule: &CompositionSchedule) -> Result<f64> {
    let mu_total = mu_total.value();
    if !schedule.clip().is_finite() {
        return Err(Error::InvalidArgument("an unbounded clip threshold cannot be calibrated".into()));
    }
    if mu_total == 0.0 {
        return Err(Error::BudgetTooSmall(mu_total));
    }
    let p = schedule.sample_rate();
    if p == 0.0 {
        return Err(Error::InvalidArgument(
            "sample_rate = 0 composes to zero cost for every sigma; nothing to calibrate".into(),
        ));
    }
    let ratio = mu_total / (p * (schedule.rounds() as f64).sqrt());
    let per_step_sq = (ratio * ratio).ln_1p();
    let sigma = schedule.clip() / per_step_sq.sqrt();
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::BudgetTooSmall(mu_total));
    }
    Ok(sigma)
}

fn calibrate(budget: PrivacyBudget, schedule: &CompositionSchedule) -> Result<CalibrationResult> {
    let mu_total = mu_from_budget(budget)?;
    let sigma = sigma_for_mu_total(mu_total, schedule)?;
    let realized = compose_mu_dpfp(GdpParameter::from_mechanism(schedule.clip(), sigma)?, schedule)?;
    let achieved_delta = profile(budget.epsilon(), realized.value());
    Ok(CalibrationResult {
        sigma,
        mu_total,
        achieved_budget: PrivacyBudget::new(budget.epsilon(), achieved_delta)?,
    })
}

/// Calibrates the representation noise of a DP-FP run to `budget`.
pub fn calibrate_sigma_dpfp(budget: PrivacyBudget, schedule: &CompositionSchedule) -> Result<CalibrationResult> {
    calibrate(budget, schedule)
}

/// Calibrates the gradient noise of a DP-SGD run (`M = 1`) to `budget`.
pub fn calibrate_sigma_dpsgd(
    budget: PrivacyBudget,
    steps: u64,
    sample_rate: f64,
    clip: f64,
) -> Result<CalibrationResult> {
    calibrate(budget, &CompositionSchedule::dpsgd(steps, sample_rate, clip)?)
}

/// Step counter that stops a run once its schedule is spent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    schedule: CompositionSchedule,
    steps_taken: u64,
    budget: PrivacyBudget,
}

impl BudgetLedger {
    pub fn new(schedule: CompositionSchedule, budget: PrivacyBudget) -> Self {
        Self {
            schedule,
            steps_taken: 0,
            budget,
        }
    }

    /// Records one step. Returns the number of steps remaining.
    pub fn spend(&mut self) -> Result<u64> {
        if self.steps_taken >= self.schedule.steps() {
            return Err(Error::BudgetExhausted {
                steps: self.schedule.steps(),
            });
        }
        self.steps_taken += 1;
        Ok(self.remaining())
    }

    pub fn remaining(&self) -> u64 {
        self.schedule.steps() - self.steps_taken
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == 0
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn schedule(&self) -> &CompositionSchedule {
        &self.schedule
    }

    pub fn budget(&self) -> PrivacyBudget {
        self.budget
    }

    /// Composed `mu` of the steps taken so far at per-invocation `mu_step`.
    pub fn mu_spent(&self, mu_step: GdpParameter) -> Result<GdpParameter> {
        if self.steps_taken == 0 {
            return Ok(GdpParameter::ZERO);
        }
        compose_mu_dpfp(mu_step, &self.schedule.truncated(self.steps_taken))
    }
}
