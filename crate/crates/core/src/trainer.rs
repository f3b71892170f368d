//! Training loops: DP-FP, the DP-SGD baseline and non-private training.
//!
//! All three share the Poisson sampler, the model and the optimizers, and
//! differ only in where privatization happens:
//!
//! - DP-FP: `M` micro-batches per step at rate `p = B / (M * D)`; each
//!   record's representation is clipped and noised; one optimizer update per
//!   non-empty micro-batch, in ascending micro-batch order.
//! - DP-SGD: one batch per step at rate `B / D`; per-example gradients are
//!   clipped and noised in all `d` coordinates.
//! - Non-private: one batch per step at rate `B / D`, plain gradients.
//!
//! The number of steps `T = ceil(epochs * D / B)` is fixed before training
//! and enforced by a [`BudgetLedger`]: the noise is calibrated for exactly `T`
//! steps, so a run refuses step `T + 1`.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accountant::{
    calibrate_sigma_dpfp, calibrate_sigma_dpsgd, compose_rounds, BudgetLedger, CalibrationResult,
    CompositionSchedule, GdpParameter, PrivacyBudget,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, init_params, BackwardOutput, ModelDims, ModelParams};
use crate::rng;
use crate::sampler::{draw_microbatch, rate_from_batch, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dpfp,
    Dpsgd,
    Nonprivate,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Mode::Dpfp => "dpfp",
            Mode::Dpsgd => "dpsgd",
            Mode::Nonprivate => "nonprivate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// Seeds for parameter init, Poisson sampling and noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub sampler: u64,
    pub noise: u64,
}

impl Seeds {
    pub const DEFAULT: Seeds = Seeds {
        init: 17,
        sampler: 29,
        noise: 43,
    };

    /// All three seeds offset by `run`, for multi-seed sweeps.
    pub fn offset(self, run: u64) -> Self {
        Seeds {
            init: self.init.wrapping_add(run),
            sampler: self.sampler.wrapping_add(run),
            noise: self.noise.wrapping_add(run),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epsilon: f64,
    /// `None` means `1 / (2 D)`.
    pub delta: Option<f64>,
    pub epochs: f64,
    pub expected_batch: f64,
    pub micro_batches: usize,
    pub clip: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub hidden_dim: usize,
    pub rep_dim: usize,
    pub seeds: Seeds,
    /// Replaces the calibrated noise scale. Voids the privacy guarantee;
    /// meant for degeneracy checks.
    pub sigma_override: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Dpfp,
            epsilon: 3.0,
            delta: None,
            epochs: 3.0,
            expected_batch: 32.0,
            micro_batches: 32,
            clip: 1.0,
            learning_rate: 5e-6,
            optimizer: OptimizerKind::Adam,
            hidden_dim: 64,
            rep_dim: 16,
            seeds: Seeds::DEFAULT,
            sigma_override: None,
        }
    }
}

impl TrainConfig {
    /// `T = ceil(epochs * D / B)`.
    pub fn total_steps(&self, dataset_size: usize) -> u64 {
        (self.epochs * dataset_size as f64 / self.expected_batch).ceil() as u64
    }

    pub fn budget(&self, dataset_size: usize) -> Result<PrivacyBudget> {
        let delta = self.delta.unwrap_or(1.0 / (2.0 * dataset_size as f64));
        PrivacyBudget::new(self.epsilon, delta)
    }

    /// Micro-batches per step actually used by `mode` (DP-SGD and
    /// non-private runs always use one batch per step).
    pub fn effective_micro_batches(&self) -> usize {
        match self.mode {
            Mode::Dpfp => self.micro_batches,
            Mode::Dpsgd | Mode::Nonprivate => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.epochs >= 0.0 && self.epochs.is_finite()) {
            return bad(format!("epochs must be finite and >= 0, got {}", self.epochs));
        }
        if !(self.expected_batch > 0.0 && self.expected_batch.is_finite()) {
            return bad(format!("expected_batch must be > 0, got {}", self.expected_batch));
        }
        if self.micro_batches == 0 {
            return bad("micro_batches must be >= 1".into());
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return bad(format!("clip must be > 0, got {}", self.clip));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.hidden_dim == 0 || self.rep_dim == 0 {
            return bad("hidden_dim and rep_dim must be >= 1".into());
        }
        if let Some(s) = self.sigma_override {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("sigma_override must be finite and >= 0, got {s}"));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return bad(format!("delta must lie in (0, 1), got {d}"));
            }
        }
        Ok(())
    }
}

/// Optimizer moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    updates: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, num_params: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => num_params,
        };
        Self {
            kind,
            learning_rate,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }
}

/// One optimizer update of `params` with `gradient`.
pub fn optimizer_step(params: &mut [f64], gradient: &[f64], state: &mut OptimizerState) -> Result<()> {
    if gradient.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: gradient.len(),
        });
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient coordinate {i} is {} at update {}",
            gradient[i],
            state.updates + 1
        )));
    }
    state.updates += 1;
    let lr = state.learning_rate;
    match state.kind {
        OptimizerKind::Sgd => {
            params.iter_mut().zip(gradient).for_each(|(p, g)| *p -= lr * g);
        }
        OptimizerKind::Adam => {
            let t = state.updates as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            for (((p, g), m), v) in params
                .iter_mut()
                .zip(gradient)
                .zip(&mut state.first_moment)
                .zip(&mut state.second_moment)
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
    Ok(())
}

/// Fraction of `dataset` whose argmax prediction matches its label.
pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, label) in dataset.iter() {
        if model::predict(params, x)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// One optimizer update (or skipped empty micro-batch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: u64,
    pub micro_index: usize,
    /// Mean loss on the (privatized) batch; `None` for an empty micro-batch.
    pub loss: Option<f64>,
    pub batch_size: usize,
    /// Composed `mu` after this mechanism invocation; `inf` for runs without
    /// a finite guarantee.
    pub cum_mu: f64,
    pub noise_draws: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunMetrics {
    pub mode: Mode,
    pub records: Vec<StepRecord>,
    /// Dev accuracy after each (nominal) epoch.
    pub epoch_accuracy: Vec<f64>,
    /// Dev accuracy once all `T` steps are done.
    pub final_accuracy: Option<f64>,
    /// Final accuracy for private runs, best epoch accuracy for
    /// non-private runs.
    pub reported_accuracy: Option<f64>,
    pub steps_planned: u64,
    pub steps_taken: u64,
    pub micro_batches: usize,
    pub sample_rate: f64,
    pub dataset_size: usize,
    pub total_params: usize,
    pub rep_dim: usize,
    pub sigma: Option<f64>,
    pub mu_total: Option<f64>,
    pub budget: Option<PrivacyBudget>,
    pub cum_mu: f64,
}

impl TrainRunMetrics {
    pub fn total_noise_draws(&self) -> u64 {
        self.records.iter().map(|r| r.noise_draws).sum()
    }

    /// Per-update CSV: `step,micro_index,loss,batch_size,cum_mu,noise_draws`.
    pub fn write_steps_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        writer.write_record(["step", "micro_index", "loss", "batch_size", "cum_mu", "noise_draws"])?;
        for r in &self.records {
            writer.write_record([
                r.step.to_string(),
                r.micro_index.to_string(),
                r.loss.map(|l| l.to_string()).unwrap_or_default(),
                r.batch_size.to_string(),
                r.cum_mu.to_string(),
                r.noise_draws.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// `key=value` lines summarizing the run.
    pub fn summary_lines(&self) -> Vec<(String, String)> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "none".into());
        let mut lines = vec![
            ("mode".to_string(), self.mode.to_string()),
            ("steps_planned".into(), self.steps_planned.to_string()),
            ("steps_taken".into(), self.steps_taken.to_string()),
            ("micro_batches".into(), self.micro_batches.to_string()),
            ("sample_rate".into(), self.sample_rate.to_string()),
            ("dataset_size".into(), self.dataset_size.to_string()),
            ("total_params".into(), self.total_params.to_string()),
            ("rep_dim".into(), self.rep_dim.to_string()),
            ("sigma".into(), opt(self.sigma)),
            ("mu_total".into(), opt(self.mu_total)),
            ("cum_mu".into(), self.cum_mu.to_string()),
            ("noise_draws".into(), self.total_noise_draws().to_string()),
            ("final_accuracy".into(), opt(self.final_accuracy)),
            ("reported_accuracy".into(), opt(self.reported_accuracy)),
        ];
        if let Some(b) = self.budget {
            lines.push(("epsilon".into(), b.epsilon().to_string()));
            lines.push(("delta".into(), b.delta().to_string()));
        }
        let epochs = self
            .epoch_accuracy
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(";");
        lines.push(("epoch_accuracy".into(), epochs));
        lines
    }

    pub fn write_summary(&self, out: &mut impl Write) -> Result<()> {
        for (k, v) in self.summary_lines() {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    }
}

/// A training run in progress. [`Trainer::step`] performs one full step
/// (all `M` micro-batches) and fails with [`Error::BudgetExhausted`] once
/// `T` steps have been taken.
pub struct Trainer<'a> {
    config: TrainConfig,
    train: &'a Dataset,
    params: ModelParams,
    optimizer: OptimizerState,
    ledger: Option<BudgetLedger>,
    sampler: SamplerConfig,
    sigma: f64,
    calibration: Option<CalibrationResult>,
    mu_step: Option<GdpParameter>,
    budget: Option<PrivacyBudget>,
    records: Vec<StepRecord>,
}

impl<'a> Trainer<'a> {
    /// Derives the schedule, calibrates the noise and initializes the model.
    pub fn new(config: TrainConfig, train: &'a Dataset) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dims = ModelDims::new(train.input_dim(), config.hidden_dim, config.rep_dim, train.num_classes())?;
        let dataset_size = train.len();
        let micro_batches = config.effective_micro_batches();
        let sample_rate = rate_from_batch(config.expected_batch, micro_batches, dataset_size)
            .map_err(|e| Error::Config(e.to_string()))?;
        let steps = config.total_steps(dataset_size);
        let sampler = SamplerConfig::new(dataset_size, micro_batches, sample_rate, config.seeds.sampler)?;

        let private = config.mode != Mode::Nonprivate;
        let budget = if private { Some(config.budget(dataset_size)?) } else { None };
        let schedule = if steps > 0 {
            Some(CompositionSchedule::new(steps, micro_batches as u64, sample_rate, config.clip)?)
        } else {
            None
        };

        let (sigma, calibration) = match (config.mode, config.sigma_override, schedule, budget) {
            (Mode::Nonprivate, _, _, _) => (0.0, None),
            (_, Some(s), _, _) => (s, None),
            (_, None, None, _) => (0.0, None),
            (Mode::Dpfp, None, Some(s), Some(b)) => {
                let c = calibrate_sigma_dpfp(b, &s)?;
                (c.sigma, Some(c))
            }
            (Mode::Dpsgd, None, Some(s), Some(b)) => {
                let c = calibrate_sigma_dpsgd(b, s.steps(), s.sample_rate(), s.clip())?;
                (c.sigma, Some(c))
            }
            (_, None, Some(_), None) => unreachable!("private modes always carry a budget"),
        };
        let mu_step = if private && sigma > 0.0 && config.clip.is_finite() {
            Some(GdpParameter::from_mechanism(config.clip, sigma)?)
        } else {
            None
        };
        let ledger = match schedule {
            Some(s) => Some(BudgetLedger::new(s, config.budget(dataset_size)?)),
            None => None,
        };

        let params = init_params(dims, config.seeds.init);
        let optimizer = OptimizerState::new(config.optimizer, config.learning_rate, dims.total_params());
        Ok(Self {
            config,
            train,
            params,
            optimizer,
            ledger,
            sampler,
            sigma,
            calibration,
            mu_step,
            budget,
            records: Vec::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn calibration(&self) -> Option<&CalibrationResult> {
        self.calibration.as_ref()
    }

    pub fn steps_planned(&self) -> u64 {
        self.ledger.as_ref().map_or(0, |l| l.schedule().steps())
    }

    pub fn steps_taken(&self) -> u64 {
        self.ledger.as_ref().map_or(0, BudgetLedger::steps_taken)
    }

    pub fn is_done(&self) -> bool {
        self.ledger.as_ref().is_none_or(BudgetLedger::is_exhausted)
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    fn cum_mu(&self, rounds: u64) -> Result<f64> {
        match self.mu_step {
            Some(mu) => Ok(compose_rounds(mu, self.sampler.sample_rate, rounds)?.value()),
            None => Ok(f64::INFINITY),
        }
    }

    /// Runs step `T + 1`'s worth of work, or fails once the schedule is spent.
    pub fn step(&mut self) -> Result<()> {
        let ledger = self
            .ledger
            .as_mut()
            .ok_or(Error::BudgetExhausted { steps: 0 })?;
        let t = ledger.steps_taken();
        ledger.spend()?;
        let m_count = self.sampler.micro_batches;
        for m in 0..m_count {
            let batch = draw_microbatch(&self.sampler, t, m);
            let rounds = t * m_count as u64 + m as u64 + 1;
            let cum_mu = self.cum_mu(rounds)?;
            if batch.is_empty() {
                self.records.push(StepRecord {
                    step: t + 1,
                    micro_index: m,
                    loss: None,
                    batch_size: 0,
                    cum_mu,
                    noise_draws: 0,
                });
                continue;
            }
            let samples = self.train.samples(&batch.record_indices);
            let out: BackwardOutput = match self.config.mode {
                Mode::Dpfp => {
                    let seeds: Vec<u64> = (0..samples.len())
                        .map(|i| rng::mix(&[self.config.seeds.noise, rng::tags::NOISE, t, m as u64, i as u64]))
                        .collect();
                    model::dpfp_backward(&self.params, &samples, self.config.clip, self.sigma, &seeds)?
                }
                Mode::Dpsgd => {
                    let seed = rng::mix(&[self.config.seeds.noise, rng::tags::NOISE, t]);
                    model::dpsgd_gradient(&self.params, &samples, self.config.clip, self.sigma, seed)?
                }
                Mode::Nonprivate => model::nonprivate_backward(&self.params, &samples)?,
            };
            if !out.loss.is_finite() {
                return Err(Error::NonFinite(format!("loss {} at step {}", out.loss, t + 1)));
            }
            optimizer_step(self.params.as_mut_slice(), &out.gradient, &mut self.optimizer)?;
            self.records.push(StepRecord {
                step: t + 1,
                micro_index: m,
                loss: Some(out.loss),
                batch_size: samples.len(),
                cum_mu,
                noise_draws: out.noise_draws,
            });
        }
        Ok(())
    }

    /// Runs the remaining steps, evaluating on `dev` after each nominal epoch.
    pub fn run(mut self, dev: Option<&Dataset>) -> Result<(ModelParams, TrainRunMetrics)> {
        let mut epoch_accuracy = Vec::new();
        let dataset_size = self.train.len() as f64;
        let batch = self.config.expected_batch;
        let epoch_of = |step: u64| (step as f64 * batch / dataset_size).floor() as u64;
        while !self.is_done() {
            self.step()?;
            let s = self.steps_taken();
            if let Some(dev) = dev {
                if epoch_of(s) > epoch_of(s - 1) || self.is_done() {
                    epoch_accuracy.push(evaluate(&self.params, dev)?);
                }
            }
        }
        let final_accuracy = match dev {
            Some(_) if self.steps_taken() > 0 => epoch_accuracy.last().copied(),
            Some(dev) => Some(evaluate(&self.params, dev)?),
            None => None,
        };
        let reported_accuracy = match self.config.mode {
            Mode::Nonprivate => epoch_accuracy
                .iter()
                .copied()
                .fold(None, |best: Option<f64>, a| Some(best.map_or(a, |b| b.max(a))))
                .or(final_accuracy),
            Mode::Dpfp | Mode::Dpsgd => final_accuracy,
        };
        let rounds = self.steps_taken() * self.sampler.micro_batches as u64;
        let cum_mu = if rounds == 0 { 0.0 } else { self.cum_mu(rounds)? };
        let dims = self.params.dims();
        let metrics = TrainRunMetrics {
            mode: self.config.mode,
            steps_planned: self.steps_planned(),
            steps_taken: self.steps_taken(),
            micro_batches: self.sampler.micro_batches,
            sample_rate: self.sampler.sample_rate,
            dataset_size: self.train.len(),
            total_params: dims.total_params(),
            rep_dim: dims.rep_dim,
            sigma: (self.config.mode != Mode::Nonprivate).then_some(self.sigma),
            mu_total: self.calibration.map(|c| c.mu_total.value()),
            budget: self.budget,
            cum_mu,
            epoch_accuracy,
            final_accuracy,
            reported_accuracy,
            records: self.records,
        };
        Ok((self.params, metrics))
    }
}

fn train_as(mode: Mode, config: &TrainConfig, train: &Dataset, dev: Option<&Dataset>) -> Result<(ModelParams, TrainRunMetrics)> {
    let config = TrainConfig {
        mode,
        ..config.clone()
    };
    Trainer::new(config, train)?.run(dev)
}

/// DP-FP training: calibrate `sigma` for `(T, M, p, C)`, then for every step
/// and micro-batch privatize each record's representation and update.
pub fn train_dpfp(config: &TrainConfig, train: &Dataset, dev: Option<&Dataset>) -> Result<(ModelParams, TrainRunMetrics)> {
    train_as(Mode::Dpfp, config, train, dev)
}

/// DP-SGD baseline at rate `B / D` with per-example clipping and noise.
pub fn train_dpsgd(config: &TrainConfig, train: &Dataset, dev: Option<&Dataset>) -> Result<(ModelParams, TrainRunMetrics)> {
    train_as(Mode::Dpsgd, config, train, dev)
}

/// Non-private mini-batch training on the same sampler.
pub fn train_nonprivate(config: &TrainConfig, train: &Dataset, dev: Option<&Dataset>) -> Result<(ModelParams, TrainRunMetrics)> {
    train_as(Mode::Nonprivate, config, train, dev)
}

/// Trains in `config.mode`.
pub fn train(config: &TrainConfig, train: &Dataset, dev: Option<&Dataset>) -> Result<(ModelParams, TrainRunMetrics)> {
    train_as(config.mode, config, train, dev)
}
