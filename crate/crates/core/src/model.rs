//! Desk-scale encoder + classifier with hand-written backpropagation.
//!
//! ```text
//! x --W1,b1,tanh--> hidden --W2,b2,tanh--> rep (k) --clip,+noise--> priv --W3,b3--> logits
//! ```
//!
//! All parameters live in one flat vector in the order
//! `W1, b1, W2, b2, W3, b3` (weights row-major, one row per output unit), so
//! gradients and optimizer state are plain `Vec<f64>` of length `d`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{self, clip_factor, l2_norm, NoiseSpec, RepresentationVector};
use crate::rng;

/// One labelled record: features and class index.
pub type Sample<'a> = (&'a [f64], usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub rep_dim: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl ModelDims {
    pub fn new(input_dim: usize, hidden_dim: usize, rep_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || rep_dim == 0 || num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "model dims must be positive with at least 2 classes, got \
                 n={input_dim} hidden={hidden_dim} k={rep_dim} classes={num_classes}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            rep_dim,
            num_classes,
        })
    }

    /// `d`, the number of weights and biases.
    pub fn total_params(&self) -> usize {
        self.layout().end
    }

    fn layout(&self) -> Layout {
        let (n, h, k, c) = (self.input_dim, self.hidden_dim, self.rep_dim, self.num_classes);
        let w1 = 0;
        let b1 = w1 + h * n;
        let w2 = b1 + h;
        let b2 = w2 + k * h;
        let w3 = b2 + k;
        let b3 = w3 + c * k;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            end: b3 + c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    dims: ModelDims,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.total_params()],
        }
    }

    pub fn from_flat(dims: ModelDims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.total_params() {
            return Err(Error::DimensionMismatch {
                expected: dims.total_params(),
                got: values.len(),
            });
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn w1(&self) -> &[f64] {
        let l = self.dims.layout();
        &self.values[l.w1..l.b1]
    }

    pub fn b1(&self) -> &[f64] {
        let l = self.dims.layout();
        &self.values[l.b1..l.w2]
    }

    pub fn w2(&self) -> &[f64] {
        let l = self.dims.layout();
        &self.values[l.w2..l.b2]
    }

    pub fn b2(&self) -> &[f64] {
        let l = self.dims.layout();
        &self.values[l.b2..l.w3]
    }

    pub fn w3(&self) -> &[f64] {
        let l = self.dims.layout();
        &self.values[l.w3..l.b3]
    }

    pub fn b3(&self) -> &[f64] {
        let l = self.dims.layout();
        &self.values[l.b3..l.end]
    }

    /// Range of the encoder parameters (`W1, b1, W2, b2`) in the flat vector.
    pub fn encoder_range(&self) -> std::ops::Range<usize> {
        0..self.dims.layout().w3
    }

    /// Range of the classifier parameters (`W3, b3`) in the flat vector.
    pub fn classifier_range(&self) -> std::ops::Range<usize> {
        let l = self.dims.layout();
        l.w3..l.end
    }
}

/// Gradient of one record's loss with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleGradient(pub Vec<f64>);

/// Batch-averaged loss and gradient, plus how many noise coordinates the
/// computation drew.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOutput {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub noise_draws: u64,
}

/// Uniform Glorot init for weights, zero biases. Deterministic in `seed`.
pub fn init_params(dims: ModelDims, seed: u64) -> ModelParams {
    let mut params = ModelParams::zeros(dims);
    let l = dims.layout();
    let mut rng = rng::stream(seed, &[rng::tags::INIT]);
    let layers = [
        (l.w1..l.b1, dims.input_dim, dims.hidden_dim),
        (l.w2..l.b2, dims.hidden_dim, dims.rep_dim),
        (l.w3..l.b3, dims.rep_dim, dims.num_classes),
    ];
    for (range, fan_in, fan_out) in layers {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut params.values[range] {
            *w = rng.random_range(-a..=a);
        }
    }
    params
}

fn affine(weights: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    let cols = input.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &weights[r * cols..(r + 1) * cols];
        *o = bias[r] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

fn check_input(dims: ModelDims, x: &[f64]) -> Result<()> {
    if x.len() != dims.input_dim {
        return Err(Error::DimensionMismatch {
            expected: dims.input_dim,
            got: x.len(),
        });
    }
    Ok(())
}

fn hidden_and_rep(params: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = params.dims;
    let mut hidden = vec![0.0; d.hidden_dim];
    affine(params.w1(), params.b1(), x, &mut hidden);
    hidden.iter_mut().for_each(|h| *h = h.tanh());
    let mut rep = vec![0.0; d.rep_dim];
    affine(params.w2(), params.b2(), &hidden, &mut rep);
    rep.iter_mut().for_each(|r| *r = r.tanh());
    (hidden, rep)
}

/// The latent representation `h(x) = tanh(W2 tanh(W1 x + b1) + b2)`.
pub fn encode(params: &ModelParams, x: &[f64]) -> Result<RepresentationVector> {
    check_input(params.dims, x)?;
    Ok(hidden_and_rep(params, x).1.into())
}

pub fn logits(params: &ModelParams, rep: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; params.dims.num_classes];
    affine(params.w3(), params.b3(), rep, &mut out);
    out
}

/// Cross-entropy `-log softmax(logits)[label]` and the softmax probabilities.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let (argmax, &max) = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("at least one logit");
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let rest: f64 = exps
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != argmax)
        .map(|(_, e)| e)
        .sum();
    let total = 1.0 + rest;
    let probs = exps.iter().map(|e| e / total).collect();
    let loss = (max - logits[label]) + rest.ln_1p();
    (loss, probs)
}

/// Classifier head on a representation: loss and class probabilities.
pub fn classify_loss(params: &ModelParams, rep: &RepresentationVector, label: usize) -> Result<(f64, Vec<f64>)> {
    let d = params.dims;
    if rep.len() != d.rep_dim {
        return Err(Error::DimensionMismatch {
            expected: d.rep_dim,
            got: rep.len(),
        });
    }
    if label >= d.num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            d.num_classes
        )));
    }
    Ok(softmax_cross_entropy(&logits(params, rep.as_slice()), label))
}

/// Argmax class on the clean (unclipped, noise-free) representation.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<usize> {
    check_input(params.dims, x)?;
    let (_, rep) = hidden_and_rep(params, x);
    let out = logits(params, &rep);
    // Ties go to the lowest class index.
    let mut best = 0;
    for (i, v) in out.iter().enumerate().skip(1) {
        if *v > out[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Cached activations of one forward pass.
struct Trace {
    hidden: Vec<f64>,
    rep: Vec<f64>,
    rep_norm: f64,
    privatized: Vec<f64>,
    probs: Vec<f64>,
    loss: f64,
    noise_draws: u64,
}

fn forward(
    params: &ModelParams,
    sample: Sample<'_>,
    clip: f64,
    noise: Option<&NoiseSpec>,
) -> Result<Trace> {
    let (x, label) = sample;
    check_input(params.dims, x)?;
    if label >= params.dims.num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            params.dims.num_classes
        )));
    }
    let (hidden, rep) = hidden_and_rep(params, x);
    let mut privatized = rep.clone();
    let rep_norm = mechanism::clip_in_place(&mut privatized, clip);
    let noise_draws = match noise {
        Some(spec) => mechanism::add_noise_in_place(&mut privatized, spec)?,
        None => 0,
    };
    let (loss, probs) = softmax_cross_entropy(&logits(params, &privatized), label);
    Ok(Trace {
        hidden,
        rep,
        rep_norm,
        privatized,
        probs,
        loss,
        noise_draws,
    })
}

/// Writes the gradient of `trace.loss` into `grad` (overwriting it).
fn backward(params: &ModelParams, sample: Sample<'_>, clip: f64, trace: &Trace, grad: &mut [f64]) {
    let (x, label) = sample;
    let d = params.dims;
    let l = d.layout();
    let (n, h, k, c) = (d.input_dim, d.hidden_dim, d.rep_dim, d.num_classes);

    let mut dlogits = trace.probs.clone();
    dlogits[label] -= 1.0;

    for (r, dl) in dlogits.iter().enumerate() {
        for (j, p) in trace.privatized.iter().enumerate() {
            grad[l.w3 + r * k + j] = dl * p;
        }
        grad[l.b3 + r] = *dl;
    }

    let w3 = params.w3();
    let mut dpriv = vec![0.0; k];
    for (r, dl) in dlogits.iter().enumerate().take(c) {
        for (j, g) in dpriv.iter_mut().enumerate() {
            *g += w3[r * k + j] * dl;
        }
    }

    // Noise is a constant; the clip map contributes its exact Jacobian,
    // s (I - v v^T / r^2) with s = C / r, whenever it is active.
    let scale = clip_factor(trace.rep_norm, clip);
    let drep: Vec<f64> = if scale == 1.0 {
        dpriv
    } else {
        let r2 = trace.rep_norm * trace.rep_norm;
        let proj = trace.rep.iter().zip(&dpriv).map(|(v, g)| v * g).sum::<f64>() / r2;
        dpriv
            .iter()
            .zip(&trace.rep)
            .map(|(g, v)| scale * (g - v * proj))
            .collect()
    };

    let dz2: Vec<f64> = drep
        .iter()
        .zip(&trace.rep)
        .map(|(g, r)| g * (1.0 - r * r))
        .collect();
    for (r, dz) in dz2.iter().enumerate() {
        for (j, hv) in trace.hidden.iter().enumerate() {
            grad[l.w2 + r * h + j] = dz * hv;
        }
        grad[l.b2 + r] = *dz;
    }

    let w2 = params.w2();
    let mut dhidden = vec![0.0; h];
    for (r, dz) in dz2.iter().enumerate() {
        for (j, g) in dhidden.iter_mut().enumerate() {
            *g += w2[r * h + j] * dz;
        }
    }
    let dz1: Vec<f64> = dhidden
        .iter()
        .zip(&trace.hidden)
        .map(|(g, hv)| g * (1.0 - hv * hv))
        .collect();
    for (r, dz) in dz1.iter().enumerate() {
        for (j, xv) in x.iter().enumerate().take(n) {
            grad[l.w1 + r * n + j] = dz * xv;
        }
        grad[l.b1 + r] = *dz;
    }
}

fn ensure_nonempty(batch: &[Sample<'_>]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::EmptyBatch)
    } else {
        Ok(())
    }
}

fn check_seeds(batch: &[Sample<'_>], seeds: &[u64]) -> Result<()> {
    if seeds.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            got: seeds.len(),
        });
    }
    Ok(())
}

/// Batch mean of the non-private loss and its exact gradient.
pub fn nonprivate_backward(params: &ModelParams, batch: &[Sample<'_>]) -> Result<BackwardOutput> {
    ensure_nonempty(batch)?;
    let dsize = params.dims.total_params();
    let mut sum = vec![0.0; dsize];
    let mut scratch = vec![0.0; dsize];
    let mut loss = 0.0;
    for &sample in batch {
        let trace = forward(params, sample, f64::INFINITY, None)?;
        backward(params, sample, f64::INFINITY, &trace, &mut scratch);
        sum.iter_mut().zip(&scratch).for_each(|(s, g)| *s += g);
        loss += trace.loss;
    }
    Ok(average(loss, sum, batch.len(), 0))
}

fn average(loss: f64, mut sum: Vec<f64>, count: usize, noise_draws: u64) -> BackwardOutput {
    let b = count as f64;
    sum.iter_mut().for_each(|s| *s /= b);
    BackwardOutput {
        loss: loss / b,
        gradient: sum,
        noise_draws,
    }
}

/// DP-FP forward/backward over a micro-batch.
///
/// Each record's representation is clipped to `clip` and perturbed with
/// `N(0, sigma^2 I_k)` drawn from its own seed in `noise_seeds`. Returns the
/// mean loss on the privatized representations and its exact gradient, with
/// the noise held fixed.
pub fn dpfp_backward(
    params: &ModelParams,
    batch: &[Sample<'_>],
    clip: f64,
    sigma: f64,
    noise_seeds: &[u64],
) -> Result<BackwardOutput> {
    ensure_nonempty(batch)?;
    check_seeds(batch, noise_seeds)?;
    let dsize = params.dims.total_params();
    let mut sum = vec![0.0; dsize];
    let mut scratch = vec![0.0; dsize];
    let mut loss = 0.0;
    let mut draws = 0;
    for (&sample, &seed) in batch.iter().zip(noise_seeds) {
        let spec = NoiseSpec::new(sigma, params.dims.rep_dim, seed)?;
        let trace = forward(params, sample, clip, Some(&spec))?;
        backward(params, sample, clip, &trace, &mut scratch);
        sum.iter_mut().zip(&scratch).for_each(|(s, g)| *s += g);
        loss += trace.loss;
        draws += trace.noise_draws;
    }
    Ok(average(loss, sum, batch.len(), draws))
}

/// Mean DP-FP loss at `params` with the same frozen noise as
/// [`dpfp_backward`]. No gradient.
pub fn dpfp_loss(
    params: &ModelParams,
    batch: &[Sample<'_>],
    clip: f64,
    sigma: f64,
    noise_seeds: &[u64],
) -> Result<f64> {
    ensure_nonempty(batch)?;
    check_seeds(batch, noise_seeds)?;
    let mut loss = 0.0;
    for (&sample, &seed) in batch.iter().zip(noise_seeds) {
        let spec = NoiseSpec::new(sigma, params.dims.rep_dim, seed)?;
        loss += forward(params, sample, clip, Some(&spec))?.loss;
    }
    Ok(loss / batch.len() as f64)
}

/// Non-private loss of one record.
pub fn example_loss(params: &ModelParams, sample: Sample<'_>) -> Result<f64> {
    Ok(forward(params, sample, f64::INFINITY, None)?.loss)
}

/// Exact non-private gradient of every record's loss.
pub fn per_example_grads(params: &ModelParams, batch: &[Sample<'_>]) -> Result<Vec<PerExampleGradient>> {
    ensure_nonempty(batch)?;
    batch
        .iter()
        .map(|&sample| {
            let trace = forward(params, sample, f64::INFINITY, None)?;
            let mut g = vec![0.0; params.dims.total_params()];
            backward(params, sample, f64::INFINITY, &trace, &mut g);
            Ok(PerExampleGradient(g))
        })
        .collect()
}

/// Noise seed of the `index`-th record of a DP-SGD batch seeded with `seed`.
pub fn example_seed(seed: u64, index: usize) -> u64 {
    rng::mix(&[seed, index as u64])
}

/// `g = (1/B) * sum_i [clip(grad L_i, C) + N(0, sigma^2 I_d)]`.
///
/// Record `i` draws its `d` noise coordinates from `example_seed(seed, i)`.
pub fn dpsgd_gradient(
    params: &ModelParams,
    batch: &[Sample<'_>],
    clip: f64,
    sigma: f64,
    seed: u64,
) -> Result<BackwardOutput> {
    ensure_nonempty(batch)?;
    let dsize = params.dims.total_params();
    let mut sum = vec![0.0; dsize];
    let mut scratch = vec![0.0; dsize];
    let mut loss = 0.0;
    let mut draws = 0;
    for (i, &sample) in batch.iter().enumerate() {
        let trace = forward(params, sample, f64::INFINITY, None)?;
        backward(params, sample, f64::INFINITY, &trace, &mut scratch);
        mechanism::clip_in_place(&mut scratch, clip);
        let spec = NoiseSpec::new(sigma, dsize, example_seed(seed, i))?;
        draws += mechanism::add_noise_in_place(&mut scratch, &spec)?;
        sum.iter_mut().zip(&scratch).for_each(|(s, g)| *s += g);
        loss += trace.loss;
    }
    Ok(average(loss, sum, batch.len(), draws))
}

/// L2 norm of a flat gradient.
pub fn gradient_norm(gradient: &[f64]) -> f64 {
    l2_norm(gradient)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dims() -> ModelDims {
        ModelDims::new(2, 2, 2, 2).unwrap()
    }

    #[test]
    fn param_count() {
        let dims = ModelDims::new(20, 64, 16, 2).unwrap();
        assert_eq!(dims.total_params(), 2418);
        assert!(ModelDims::new(2, 2, 2, 1).is_err());
    }

    #[test]
    fn init_is_seeded_glorot_with_zero_bias() {
        let dims = ModelDims::new(20, 64, 16, 2).unwrap();
        let a = init_params(dims, 3);
        assert_eq!(a, init_params(dims, 3));
        assert_ne!(a, init_params(dims, 4));
        assert!(a.b1().iter().chain(a.b2()).chain(a.b3()).all(|&b| b == 0.0));
        let bound = (6.0f64 / 84.0).sqrt();
        assert!(a.w1().iter().all(|w| w.abs() <= bound));
        assert!(a.w1().iter().any(|w| w.abs() > 0.5 * bound));
    }

    #[test]
    fn encode_hand_computed() {
        // W1 = [[0.5, -0.25], [1.0, 0.75]], b1 = [0.1, -0.2]
        // W2 = [[1.0, -1.0], [0.5, 2.0]],   b2 = [0.0, 0.3]
        let dims = tiny_dims();
        let mut flat = vec![0.0; dims.total_params()];
        flat[..12].copy_from_slice(&[0.5, -0.25, 1.0, 0.75, 0.1, -0.2, 1.0, -1.0, 0.5, 2.0, 0.0, 0.3]);
        let params = ModelParams::from_flat(dims, flat).unwrap();
        let rep = encode(&params, &[1.0, 2.0]).unwrap();
        // hidden = tanh([0.1, 2.3]); rep = tanh([h0 - h1, 0.5 h0 + 2 h1 + 0.3])
        let h0 = 0.1f64.tanh();
        let h1 = 2.3f64.tanh();
        let expected = [(h0 - h1).tanh(), (0.5 * h0 + 2.0 * h1 + 0.3).tanh()];
        assert!((rep.as_slice()[0] - expected[0]).abs() < 1e-15);
        assert!((rep.as_slice()[1] - expected[1]).abs() < 1e-15);
        // frozen decimal values
        assert!((rep.as_slice()[0] - (-0.706_633_872_571_172_2)).abs() < 1e-12);
        assert!((rep.as_slice()[1] - 0.980_487_704_041_164_9).abs() < 1e-12);
        assert!(encode(&params, &[1.0]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_representation() {
        let params = ModelParams::zeros(ModelDims::new(5, 4, 3, 2).unwrap());
        assert_eq!(encode(&params, &[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), RepresentationVector::zeros(3));
    }

    #[test]
    fn softmax_examples() {
        let (loss, probs) = softmax_cross_entropy(&[0.0, 0.0], 0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(probs, vec![0.5, 0.5]);

        let (loss, _) = softmax_cross_entropy(&[50.0, 0.0], 0);
        assert!((0.0..1e-20).contains(&loss));

        let (loss, probs) = softmax_cross_entropy(&[1.0, 2.0], 1);
        assert!((loss - 0.313_261_687_518_222_8).abs() < 1e-15);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classify_loss_validates() {
        let params = ModelParams::zeros(tiny_dims());
        let rep = RepresentationVector::zeros(2);
        let (loss, probs) = classify_loss(&params, &rep, 1).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(probs, vec![0.5, 0.5]);
        assert!(classify_loss(&params, &rep, 2).is_err());
        assert!(classify_loss(&params, &RepresentationVector::zeros(3), 0).is_err());
    }

    #[test]
    fn empty_batches_are_rejected() {
        let params = ModelParams::zeros(tiny_dims());
        assert_eq!(dpfp_backward(&params, &[], 1.0, 1.0, &[]).unwrap_err(), Error::EmptyBatch);
        assert_eq!(per_example_grads(&params, &[]).unwrap_err(), Error::EmptyBatch);
        assert_eq!(dpsgd_gradient(&params, &[], 1.0, 1.0, 0).unwrap_err(), Error::EmptyBatch);
        assert_eq!(nonprivate_backward(&params, &[]).unwrap_err(), Error::EmptyBatch);
    }

    #[test]
    fn zero_model_on_zero_input_only_trains_the_head() {
        let dims = ModelDims::new(3, 4, 2, 2).unwrap();
        let params = ModelParams::zeros(dims);
        let x = [0.0; 3];
        let batch: Vec<Sample> = vec![(&x, 0), (&x, 1)];
        let seeds = [11, 12];
        let out = dpfp_backward(&params, &batch, 1.0, 1.0, &seeds).unwrap();
        assert!(out.gradient[params.encoder_range()].iter().all(|&g| g == 0.0));

        // With zero head weights the softmax is uniform, so for record i the
        // head gradient is (0.5 - [label == r]) * noise_i.
        let mut expected = vec![0.0; 2 * 2 + 2];
        for (i, &(_, label)) in batch.iter().enumerate() {
            let noise = mechanism::sample_gaussian(&NoiseSpec::new(1.0, 2, seeds[i]).unwrap());
            for r in 0..2 {
                let dl = 0.5 - if r == label { 1.0 } else { 0.0 };
                for j in 0..2 {
                    expected[r * 2 + j] += dl * noise.as_slice()[j] / 2.0;
                }
                expected[4 + r] += dl / 2.0;
            }
        }
        let head = &out.gradient[params.classifier_range()];
        for (a, b) in head.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15, "{head:?} vs {expected:?}");
        }
    }

    #[test]
    fn identity_mechanism_matches_nonprivate() {
        let dims = ModelDims::new(4, 6, 3, 3).unwrap();
        let params = init_params(dims, 9);
        let xs = [[0.3, -1.0, 2.0, 0.1], [1.5, 0.2, -0.7, 0.0]];
        let batch: Vec<Sample> = vec![(&xs[0], 2), (&xs[1], 0)];
        let plain = nonprivate_backward(&params, &batch).unwrap();
        let dpfp = dpfp_backward(&params, &batch, f64::INFINITY, 0.0, &[1, 2]).unwrap();
        assert_eq!(plain, dpfp);
        let sgd = dpsgd_gradient(&params, &batch, f64::INFINITY, 0.0, 5).unwrap();
        assert_eq!(plain.gradient, sgd.gradient);
        let per = per_example_grads(&params, &batch[..1]).unwrap();
        assert_eq!(per[0].0, nonprivate_backward(&params, &batch[..1]).unwrap().gradient);
    }

    #[test]
    fn duplicated_record_gives_identical_gradients() {
        let params = init_params(ModelDims::new(3, 5, 2, 2).unwrap(), 1);
        let x = [0.2, 0.4, -0.9];
        let g = per_example_grads(&params, &[(&x, 1), (&x, 1)]).unwrap();
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn tiny_clip_bounds_dpsgd_gradient() {
        let params = init_params(ModelDims::new(3, 5, 2, 2).unwrap(), 1);
        let xs = [[0.2, 0.4, -0.9], [1.0, -1.0, 0.5], [3.0, 0.0, 0.0]];
        let batch: Vec<Sample> = xs.iter().map(|x| (&x[..], 0)).collect();
        let c = 1e-9;
        let g = dpsgd_gradient(&params, &batch, c, 0.0, 0).unwrap();
        assert!(gradient_norm(&g.gradient) <= c * (1.0 + 1e-12));
    }

    #[test]
    fn noise_draw_counts() {
        let dims = ModelDims::new(20, 64, 16, 2).unwrap();
        let params = init_params(dims, 0);
        let x = vec![0.5; 20];
        let batch: Vec<Sample> = vec![(&x, 0); 3];
        let fp = dpfp_backward(&params, &batch, 1.0, 0.7, &[1, 2, 3]).unwrap();
        assert_eq!(fp.noise_draws, 3 * 16);
        let sgd = dpsgd_gradient(&params, &batch, 1.0, 0.7, 4).unwrap();
        assert_eq!(sgd.noise_draws, 3 * 2418);
    }
}
