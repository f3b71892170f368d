//! Differentially private forward propagation (DP-FP).
//!
//! Instead of privatizing per-example gradients (DP-SGD), DP-FP clips each
//! record's latent representation to an L2 ball of radius `C` and adds
//! spherical Gaussian noise before the classification head. Everything
//! downstream, including backpropagation and the optimizer, is
//! post-processing. Micro-batches drawn by Poisson subsampling amplify the
//! guarantee, and the Gaussian-DP central limit theorem composes the `T * M`
//! mechanism invocations of a run into a single `mu_total`.
//!
//! Module map:
//!
//! - [`accountant`]: Gaussian-DP profile, budget inversion, CLT composition,
//!   closed-form noise calibration and the step ledger.
//! - [`mechanism`]: L2 clipping and seeded Gaussian noise.
//! - [`sampler`]: Poisson micro-batch construction.
//! - [`model`]: a tanh MLP encoder with a softmax head and exact backprop.
//! - [`trainer`]: DP-FP, DP-SGD and non-private training loops.
//! - [`data`]: synthetic Gaussian-blob datasets and the CSV dataset format.
//! - [`cli`]: the `dpfp` command line.

pub mod accountant;
pub mod cli;
pub mod data;
pub mod error;
pub mod mechanism;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use accountant::{
    calibrate_sigma_dpfp, calibrate_sigma_dpsgd, compose_mu_dpfp, compose_mu_dpsgd,
    delta_from_mu, mu_from_budget, standard_normal_cdf, BudgetLedger, CalibrationResult,
    CompositionSchedule, GdpParameter, PrivacyBudget,
};
pub use error::{Error, Result};
pub use mechanism::{clip_l2, privatize, sample_gaussian, NoiseSpec, RepresentationVector};
pub use model::{ModelDims, ModelParams};
pub use trainer::{Mode, OptimizerKind, TrainConfig, TrainRunMetrics};
