//! Poisson micro-batch sampling.
//!
//! Every record enters each micro-batch through its own Bernoulli(p) trial,
//! independently across records, micro-batches and steps. A record may land
//! in several micro-batches of the same step and a micro-batch may be empty.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Record indices of one micro-batch, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroBatch {
    pub record_indices: Vec<usize>,
}

impl MicroBatch {
    pub fn len(&self) -> usize {
        self.record_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub dataset_size: usize,
    pub micro_batches: usize,
    pub sample_rate: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(dataset_size: usize, micro_batches: usize, sample_rate: f64, seed: u64) -> Result<Self> {
        if dataset_size == 0 {
            return Err(Error::InvalidArgument("dataset_size must be >= 1".into()));
        }
        if micro_batches == 0 {
            return Err(Error::InvalidArgument("micro_batches must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&sample_rate) {
            return Err(Error::InvalidArgument(format!(
                "sample_rate must lie in [0, 1], got {sample_rate}"
            )));
        }
        Ok(Self {
            dataset_size,
            micro_batches,
            sample_rate,
            seed,
        })
    }

    /// Expected number of records per step, `p * M * D`.
    pub fn expected_step_size(&self) -> f64 {
        self.sample_rate * self.micro_batches as f64 * self.dataset_size as f64
    }
}

/// Per-record rate `B / (M * D)` that gives expected batch size `B` per step.
pub fn rate_from_batch(expected_batch: f64, micro_batches: usize, dataset_size: usize) -> Result<f64> {
    if !(expected_batch > 0.0 && expected_batch.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "expected batch size must be finite and > 0, got {expected_batch}"
        )));
    }
    if micro_batches == 0 || dataset_size == 0 {
        return Err(Error::InvalidArgument(
            "micro_batches and dataset_size must be >= 1".into(),
        ));
    }
    let capacity = micro_batches as f64 * dataset_size as f64;
    if expected_batch > capacity {
        return Err(Error::InvalidArgument(format!(
            "expected batch {expected_batch} exceeds M * D = {capacity}; the sampling rate would exceed 1"
        )));
    }
    Ok(expected_batch / capacity)
}

/// Micro-batch `micro_index` of step `step`. Deterministic in
/// `(seed, step, micro_index)`.
pub fn draw_microbatch(config: &SamplerConfig, step: u64, micro_index: usize) -> MicroBatch {
    let p = config.sample_rate;
    let mut rng = rng::stream(config.seed, &[rng::tags::SAMPLER, step, micro_index as u64]);
    let record_indices = (0..config.dataset_size)
        .filter(|_| rng.random::<f64>() < p)
        .collect();
    MicroBatch { record_indices }
}

/// The `M` micro-batches of step `step`.
pub fn draw_step(config: &SamplerConfig, step: u64) -> Vec<MicroBatch> {
    (0..config.micro_batches)
        .map(|m| draw_microbatch(config, step, m))
        .collect()
}
