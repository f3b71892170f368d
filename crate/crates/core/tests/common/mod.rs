//! Shared test support: an arbitrary-precision reference for the Gaussian
//! tail quantities, a finite-difference gradient checker and the desk-scale
//! dataset.
#![allow(dead_code)]

use dpfp::data::{gaussian_blobs, Dataset};
use dpfp::model::{self, ModelDims, ModelParams, Sample};
use dpfp::{mechanism, RepresentationVector};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub mod oracle {
    //! Fixed-point arithmetic on `BigInt` with `PREC` fractional bits. Inputs
    //! are converted from `f64` exactly; every series runs until its terms
    //! vanish at working precision, so results are exact to far beyond `f64`.

    use super::*;

    pub const PREC: usize = 400;

    #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
    pub struct Fx(pub BigInt);

    impl Fx {
        pub fn one() -> Self {
            Fx(BigInt::one() << PREC)
        }

        pub fn zero() -> Self {
            Fx(BigInt::zero())
        }

        pub fn int(n: i64) -> Self {
            Fx(BigInt::from(n) << PREC)
        }

        /// Exact conversion of a finite double.
        pub fn from_f64(x: f64) -> Self {
            assert!(x.is_finite());
            if x == 0.0 {
                return Self::zero();
            }
            let bits = x.to_bits();
            let sign = if bits >> 63 == 1 { -1 } else { 1 };
            let exp = ((bits >> 52) & 0x7ff) as i64;
            let frac = bits & ((1u64 << 52) - 1);
            let (mant, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
            let m = BigInt::from(sign) * BigInt::from(mant);
            let shift = e + PREC as i64;
            Fx(if shift >= 0 { m << shift as usize } else { m >> (-shift) as usize })
        }

        pub fn to_f64(&self) -> f64 {
            // Keep 64 significant bits, then scale by an exact power of two.
            let bits = self.0.bits() as i64;
            let drop = (bits - 64).max(0);
            let top = (&self.0 >> drop as usize).to_f64().unwrap();
            top * 2f64.powi((drop - PREC as i64) as i32)
        }

        pub fn add(&self, o: &Fx) -> Fx {
            Fx(&self.0 + &o.0)
        }

        pub fn sub(&self, o: &Fx) -> Fx {
            Fx(&self.0 - &o.0)
        }

        pub fn neg(&self) -> Fx {
            Fx(-&self.0)
        }

        pub fn mul(&self, o: &Fx) -> Fx {
            Fx((&self.0 * &o.0) >> PREC)
        }

        pub fn div(&self, o: &Fx) -> Fx {
            Fx((&self.0 << PREC) / &o.0)
        }

        pub fn div_int(&self, n: i64) -> Fx {
            Fx(&self.0 / BigInt::from(n))
        }

        pub fn is_negative(&self) -> bool {
            self.0.is_negative()
        }

        pub fn is_tiny(&self) -> bool {
            self.0.abs() <= BigInt::from(1)
        }
    }

    pub fn sqrt(x: &Fx) -> Fx {
        assert!(!x.is_negative());
        Fx((&x.0 << PREC).sqrt())
    }

    pub fn exp(x: &Fx) -> Fx {
        // exp(x) = exp(x / 2^s)^(2^s) with |x / 2^s| < 1/2.
        let mut s = 0;
        let mut r = x.clone();
        while r.0.abs() > (BigInt::one() << (PREC - 1)) {
            r = Fx(&r.0 >> 1);
            s += 1;
        }
        let mut sum = Fx::one();
        let mut term = Fx::one();
        let mut n = 1;
        loop {
            term = term.mul(&r).div_int(n);
            if term.is_tiny() {
                break;
            }
            sum = sum.add(&term);
            n += 1;
        }
        for _ in 0..s {
            sum = sum.mul(&sum);
        }
        sum
    }

    /// `2 atanh(z) = ln((1 + z) / (1 - z))` for `|z| <= 1/3`.
    fn two_atanh(z: &Fx) -> Fx {
        let z2 = z.mul(z);
        let mut power = z.clone();
        let mut sum = Fx::zero();
        let mut k = 1;
        loop {
            let term = power.div_int(k);
            if term.is_tiny() {
                break;
            }
            sum = sum.add(&term);
            power = power.mul(&z2);
            k += 2;
        }
        Fx(sum.0 << 1)
    }

    pub fn ln2() -> Fx {
        two_atanh(&Fx::one().div_int(3))
    }

    pub fn ln(x: &Fx) -> Fx {
        assert!(x.0.is_positive());
        // x = m * 2^k with m in [1, 2).
        let mut k: i64 = 0;
        let mut m = x.clone();
        let one = Fx::one();
        let two = Fx::int(2);
        while m >= two {
            m = Fx(&m.0 >> 1);
            k += 1;
        }
        while m < one {
            m = Fx(&m.0 << 1);
            k -= 1;
        }
        let z = m.sub(&one).div(&m.add(&one));
        two_atanh(&z).add(&Fx(ln2().0 * BigInt::from(k)))
    }

    fn atan_inv(n: i64) -> Fx {
        // atan(1/n) = sum (-1)^j / ((2j + 1) n^(2j+1))
        let mut power = Fx::one().div_int(n);
        let n2 = n * n;
        let mut sum = Fx::zero();
        let mut j = 0;
        loop {
            let term = power.div_int(2 * j + 1);
            if term.is_tiny() {
                break;
            }
            sum = if j % 2 == 0 { sum.add(&term) } else { sum.sub(&term) };
            power = power.div_int(n2);
            j += 1;
        }
        sum
    }

    pub fn pi() -> Fx {
        let a = atan_inv(5);
        let b = atan_inv(239);
        Fx(a.0 * BigInt::from(16) - b.0 * BigInt::from(4))
    }

    /// Taylor series of erf; only called for |x| <= 8.
    pub fn erf(x: &Fx) -> Fx {
        let x2 = x.mul(x);
        let mut term = x.clone(); // x^(2n+1) / n!
        let mut sum = Fx::zero();
        let mut n: i64 = 0;
        loop {
            let t = term.div_int(2 * n + 1);
            if t.is_tiny() && n > 0 {
                break;
            }
            sum = if n % 2 == 0 { sum.add(&t) } else { sum.sub(&t) };
            n += 1;
            term = term.mul(&x2).div_int(n);
        }
        Fx(sum.0 << 1).div(&sqrt(&pi()))
    }

    /// Standard normal CDF. Saturates for |t| > 11, where the tail is below
    /// 2e-28.
    pub fn phi(t: &Fx) -> Fx {
        let bound = Fx::int(11);
        if *t > bound {
            return Fx::one();
        }
        if *t < bound.neg() {
            return Fx::zero();
        }
        let x = t.div(&sqrt(&Fx::int(2)));
        Fx((Fx::one().add(&erf(&x))).0 >> 1)
    }

    /// `delta(eps; mu) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)`.
    pub fn profile(epsilon: f64, mu: f64) -> f64 {
        let eps = Fx::from_f64(epsilon);
        let mu = Fx::from_f64(mu);
        let ratio = eps.div(&mu);
        let half = Fx(&mu.0 >> 1);
        let a = ratio.neg().add(&half);
        let b = ratio.neg().sub(&half);
        phi(&a).sub(&exp(&eps).mul(&phi(&b))).to_f64()
    }

    /// `p * sqrt(rounds * (e^{mu^2} - 1))`.
    pub fn compose(mu: f64, p: f64, rounds: u64) -> f64 {
        let mu = Fx::from_f64(mu);
        let inner = exp(&mu.mul(&mu)).sub(&Fx::one());
        let scaled = Fx(inner.0 * BigInt::from(rounds));
        Fx::from_f64(p).mul(&sqrt(&scaled)).to_f64()
    }

    /// `C / sqrt(ln(1 + (mu_tot / (p sqrt(rounds)))^2))`.
    pub fn sigma(mu_total: f64, p: f64, rounds: u64, clip: f64) -> Fx {
        let denom = Fx::from_f64(p).mul(&sqrt(&Fx::int(rounds as i64)));
        let r = Fx::from_f64(mu_total).div(&denom);
        let l = ln(&Fx::one().add(&r.mul(&r)));
        Fx::from_f64(clip).div(&sqrt(&l))
    }
}

/// `|a - b| <= rel * max(|a|, |b|)` or `|a - b| <= abs_floor`.
pub fn close(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (a - b).abs();
    diff <= rel * a.abs().max(b.abs()) || diff <= abs_floor
}

/// The default desk-scale corpus: 2000 records, 20 features, 2 classes,
/// separation 3.
pub fn desk_data(seed: u64) -> (Dataset, Dataset) {
    gaussian_blobs(2000, 20, 2, 3.0, seed).unwrap()
}

/// Relative tolerance of the finite-difference gradient check.
pub const FD_REL: f64 = 1e-4;
/// Absolute floor for coordinates whose true derivative is ~0.
pub const FD_ABS: f64 = 1e-7;
const FD_STEP: f64 = 1e-5;

/// A random small model, batch and mechanism setting.
pub struct GradCase {
    pub dims: ModelDims,
    pub params: ModelParams,
    pub inputs: Vec<(Vec<f64>, usize)>,
    pub clip: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl GradCase {
    pub fn batch(&self) -> Vec<Sample<'_>> {
        self.inputs.iter().map(|(x, y)| (x.as_slice(), *y)).collect()
    }

    pub fn noise_seeds(&self) -> Vec<u64> {
        (0..self.inputs.len()).map(|i| self.seed.wrapping_add(i as u64)).collect()
    }

    pub fn random(case_seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(case_seed);
        let dims = ModelDims::new(
            rng.random_range(1..=5),
            rng.random_range(1..=6),
            rng.random_range(1..=5),
            rng.random_range(2..=4),
        )
        .unwrap();
        let scale = rng.random_range(0.3..1.5);
        let values: Vec<f64> = (0..dims.total_params()).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let params = ModelParams::from_flat(dims, values).unwrap();
        let inputs: Vec<(Vec<f64>, usize)> = (0..rng.random_range(1..=4))
            .map(|_| {
                let x = (0..dims.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                (x, rng.random_range(0..dims.num_classes))
            })
            .collect();
        let sigma = if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.0..1.0) };
        // Keep every representation norm away from the clip kink.
        let norms: Vec<f64> = inputs
            .iter()
            .map(|(x, _)| model::encode(&params, x).unwrap().norm())
            .collect();
        let clip = loop {
            let c: f64 = if rng.random_bool(0.2) { f64::INFINITY } else { 10f64.powf(rng.random_range(-1.5..0.7)) };
            if norms.iter().all(|n| (n - c).abs() > 1e-3 * c) {
                break c;
            }
        };
        Self {
            dims,
            params,
            inputs,
            clip,
            sigma,
            seed: rng.random(),
        }
    }
}

/// Central differences of `f` at `params`, one coordinate at a time.
pub fn numeric_gradient(params: &ModelParams, f: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
    let mut probe = params.clone();
    (0..params.as_slice().len())
        .map(|j| {
            let x = params.as_slice()[j];
            let h = FD_STEP * x.abs().max(1.0);
            probe.as_mut_slice()[j] = x + h;
            let up = f(&probe);
            probe.as_mut_slice()[j] = x - h;
            let down = f(&probe);
            probe.as_mut_slice()[j] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn compare_gradients(what: &str, analytic: &[f64], numeric: &[f64]) -> Result<(), String> {
    if analytic.len() != numeric.len() {
        return Err(format!("{what}: length {} vs {}", analytic.len(), numeric.len()));
    }
    for (j, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if !close(*a, *n, FD_REL, FD_ABS) {
            return Err(format!("{what}: coordinate {j}: analytic {a} vs numeric {n}"));
        }
    }
    Ok(())
}

/// Checks `dpfp_backward`, `per_example_grads` and `dpsgd_gradient` against
/// finite differences on one case.
pub fn check_gradients(case: &GradCase) -> Result<(), String> {
    let batch = case.batch();
    let seeds = case.noise_seeds();
    let e = |err: dpfp::Error| err.to_string();

    let out = model::dpfp_backward(&case.params, &batch, case.clip, case.sigma, &seeds).map_err(e)?;
    let loss = model::dpfp_loss(&case.params, &batch, case.clip, case.sigma, &seeds).map_err(e)?;
    if out.loss != loss {
        return Err(format!("dpfp loss {} vs {}", out.loss, loss));
    }
    let numeric = numeric_gradient(&case.params, |p| model::dpfp_loss(p, &batch, case.clip, case.sigma, &seeds).unwrap());
    compare_gradients("dpfp_backward", &out.gradient, &numeric)?;

    let per = model::per_example_grads(&case.params, &batch).map_err(e)?;
    let mut clipped_sum = vec![0.0; case.dims.total_params()];
    for (g, &sample) in per.iter().zip(&batch) {
        let numeric = numeric_gradient(&case.params, |p| model::example_loss(p, sample).unwrap());
        compare_gradients("per_example_grads", &g.0, &numeric)?;
        let clipped = mechanism::clip_l2(&RepresentationVector::new(numeric), case.clip).map_err(e)?;
        clipped_sum.iter_mut().zip(clipped.as_slice()).for_each(|(s, c)| *s += c);
    }

    // Noise-free part against clipped numeric per-example gradients, then
    // the noise part against independently regenerated draws.
    let b = batch.len() as f64;
    let clean = model::dpsgd_gradient(&case.params, &batch, case.clip, 0.0, case.seed).map_err(e)?;
    let expected: Vec<f64> = clipped_sum.iter().map(|s| s / b).collect();
    compare_gradients("dpsgd_gradient", &clean.gradient, &expected)?;
    let noisy = model::dpsgd_gradient(&case.params, &batch, case.clip, case.sigma, case.seed).map_err(e)?;
    let d = case.dims.total_params();
    let mut noise = vec![0.0; d];
    for i in 0..batch.len() {
        let spec = dpfp::NoiseSpec::new(case.sigma, d, model::example_seed(case.seed, i)).map_err(e)?;
        let z = dpfp::sample_gaussian(&spec);
        noise.iter_mut().zip(z.as_slice()).for_each(|(n, v)| *n += v);
    }
    for (j, n) in noise.iter().enumerate() {
        let got = noisy.gradient[j] - clean.gradient[j];
        let want = n / b;
        if !close(got, want, 1e-9, 1e-12) {
            return Err(format!("dpsgd noise coordinate {j}: {got} vs {want}"));
        }
    }
    Ok(())
}

/// Degenerate configuration for `mode`: no noise, no clipping, one
/// micro-batch per step.
pub fn degenerate_config(mode: dpfp::Mode) -> dpfp::TrainConfig {
    dpfp::TrainConfig {
        mode,
        micro_batches: 1,
        clip: f64::INFINITY,
        sigma_override: Some(0.0),
        learning_rate: 1e-2,
        ..dpfp::TrainConfig::default()
    }
}

/// Parameters after each of the first `steps` steps.
pub fn trajectory(config: dpfp::TrainConfig, train: &Dataset, steps: u64) -> Vec<Vec<f64>> {
    let mut run = dpfp::trainer::Trainer::new(config, train).unwrap();
    (0..steps)
        .map(|_| {
            run.step().unwrap();
            run.params().as_slice().to_vec()
        })
        .collect()
}

/// Largest coordinate difference between two trajectories.
pub fn trajectory_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}
