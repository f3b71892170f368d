//! The privatization primitive: L2 clipping followed by spherical Gaussian
//! noise. DP-FP applies it to latent representations, DP-SGD to per-example
//! gradients.

use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A `k`-dimensional latent vector, the unit that gets clipped and noised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationVector(Vec<f64>);

impl RepresentationVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl From<Vec<f64>> for RepresentationVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Parameters of one Gaussian noise draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub dimension: usize,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, dimension: usize, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if dimension == 0 {
            return Err(Error::InvalidArgument("noise dimension must be >= 1".into()));
        }
        Ok(Self {
            sigma,
            dimension,
            seed,
        })
    }
}

/// A seeded source of `N(0, sigma^2)` draws that counts what it hands out.
pub struct GaussianStream {
    rng: ChaCha20Rng,
    sigma: f64,
    draws: u64,
}

impl GaussianStream {
    pub fn new(spec: &NoiseSpec) -> Self {
        Self {
            rng: rng::stream(spec.seed, &[rng::tags::NOISE]),
            sigma: spec.sigma,
            draws: 0,
        }
    }

    pub fn draw(&mut self) -> f64 {
        self.draws += 1;
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.sigma * z
    }

    /// Number of coordinates drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scale factor `min(1, C / ||v||)`; 1 for the zero vector.
pub fn clip_factor(norm: f64, clip: f64) -> f64 {
    if norm <= clip || norm == 0.0 {
        1.0
    } else {
        clip / norm
    }
}

/// Clips `values` in place to L2 norm at most `clip`. Returns the pre-clip norm.
pub fn clip_in_place(values: &mut [f64], clip: f64) -> f64 {
    let norm = l2_norm(values);
    let scale = clip_factor(norm, clip);
    if scale != 1.0 {
        values.iter_mut().for_each(|v| *v *= scale);
    }
    norm
}

/// `v * min(1, C / ||v||_2)`. Vectors already inside the ball pass through
/// unchanged.
pub fn clip_l2(v: &RepresentationVector, clip: f64) -> Result<RepresentationVector> {
    if clip.is_nan() || clip <= 0.0 {
        return Err(Error::InvalidArgument(format!("clip must be > 0, got {clip}")));
    }
    let mut out = v.0.clone();
    clip_in_place(&mut out, clip);
    Ok(RepresentationVector(out))
}

/// `dimension` independent `N(0, sigma^2)` draws. Deterministic in `spec`.
pub fn sample_gaussian(spec: &NoiseSpec) -> RepresentationVector {
    if spec.sigma == 0.0 {
        return RepresentationVector::zeros(spec.dimension);
    }
    let mut stream = GaussianStream::new(spec);
    RepresentationVector((0..spec.dimension).map(|_| stream.draw()).collect())
}

/// Adds the noise of `spec` to `values` in place. Returns the number of
/// coordinates drawn (0 when `sigma = 0`).
pub fn add_noise_in_place(values: &mut [f64], spec: &NoiseSpec) -> Result<u64> {
    if values.len() != spec.dimension {
        return Err(Error::DimensionMismatch {
            expected: spec.dimension,
            got: values.len(),
        });
    }
    if spec.sigma == 0.0 {
        return Ok(0);
    }
    let mut stream = GaussianStream::new(spec);
    values.iter_mut().for_each(|v| *v += stream.draw());
    Ok(stream.draws())
}

/// `clip_l2(v, C) + N(0, sigma^2 I_k)`.
pub fn privatize(v: &RepresentationVector, clip: f64, spec: &NoiseSpec) -> Result<RepresentationVector> {
    let mut out = clip_l2(v, clip)?;
    add_noise_in_place(&mut out.0, spec)?;
    Ok(out)
}
