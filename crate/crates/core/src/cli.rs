//! The `dpfp` command line.
//!
//! Subcommands: `calibrate`, `account`, `gen-data`, `train`, `compare` and
//! `sweep`. Training subcommands read an optional TOML run config
//! (`--config`), apply flag overrides on top, and write the fully resolved
//! config next to their outputs so a run can be replayed bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::accountant::{
    calibrate_sigma_dpfp, calibrate_sigma_dpsgd, compose_mu_dpfp, delta_from_mu, epsilon_from_mu,
    CompositionSchedule, GdpParameter, PrivacyBudget,
};
use crate::data::{gaussian_blobs, Dataset};
use crate::error::{Error, Result};
use crate::trainer::{self, Mode, OptimizerKind, Seeds, TrainConfig, TrainRunMetrics, Trainer};

const AFTER_HELP: &str = "\
Exit status:
  0  success
  2  configuration or argument error
  3  calibration failure (budget unachievable or too small)
  4  privacy budget exhausted (a step past T was requested)
  5  runtime failure (non-finite values, I/O)

Output files (columns in this order):
  train:   steps.csv    step,micro_index,loss,batch_size,cum_mu,noise_draws
           summary.txt  key=value run summary
           config.toml  fully resolved run config
  compare: compare.csv  mode,seed,reported_accuracy,final_accuracy,sigma,mu_total
           compare_summary.csv  mode,runs,mean_accuracy,std_accuracy,sigma,mu_total
  sweep:   sweep.csv    axis,value,seed,final_accuracy,sigma,mu_total,status
  gen-data: train.csv, dev.csv  label,x0,...,x{n-1}";

#[derive(Debug, Parser)]
#[command(name = "dpfp", version, about = "Differentially private forward propagation: accounting and training", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate the noise scale for a budget and schedule.
    Calibrate(CalibrateArgs),
    /// Privacy spent by a given noise scale and schedule.
    Account(AccountArgs),
    /// Generate a synthetic Gaussian-blob dataset (train.csv, dev.csv).
    GenData(GenDataArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Train dpfp, dpsgd and nonprivate models on a matched budget.
    Compare(CompareArgs),
    /// Sweep one hyperparameter over a grid of values and seeds.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mechanism {
    Dpfp,
    Dpsgd,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub steps: u64,
    /// Ignored for dpsgd.
    #[arg(long, default_value_t = 32)]
    pub micro_batches: u64,
    #[arg(long)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, value_enum, default_value_t = Mechanism::Dpfp)]
    pub mechanism: Mechanism,
}

impl ScheduleArgs {
    fn schedule(&self) -> Result<CompositionSchedule> {
        let m = match self.mechanism {
            Mechanism::Dpfp => self.micro_batches,
            Mechanism::Dpsgd => 1,
        };
        CompositionSchedule::new(self.steps, m, self.sample_rate, self.clip)
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Args)]
pub struct AccountArgs {
    #[arg(long)]
    pub sigma: f64,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Report the epsilon spent at this delta.
    #[arg(long, conflicts_with = "epsilon")]
    pub delta: Option<f64>,
    /// Report the delta spent at this epsilon.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 2000)]
    pub num_records: usize,
    #[arg(long, default_value_t = 20)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 3.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "data")]
    pub out_dir: PathBuf,
}

/// Run-config flags. Every flag overrides the matching key of `--config`.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<f64>,
    /// Expected batch size B.
    #[arg(long)]
    pub batch: Option<f64>,
    #[arg(long)]
    pub micro_batches: Option<usize>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub rep_dim: Option<usize>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub sampler_seed: Option<u64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Replace the calibrated noise scale (voids the guarantee).
    #[arg(long)]
    pub sigma_override: Option<f64>,
    /// Training set CSV. Without it a synthetic dataset is generated.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub data_records: Option<usize>,
    #[arg(long)]
    pub data_input_dim: Option<usize>,
    #[arg(long)]
    pub data_classes: Option<usize>,
    #[arg(long)]
    pub data_separation: Option<f64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Attempt exactly this many steps instead of the planned T. Asking for
    /// more than T fails with exit status 4.
    #[arg(long)]
    pub force_steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    #[value(name = "B")]
    Batch,
    #[value(name = "C")]
    Clip,
    #[value(name = "M")]
    MicroBatches,
    #[value(name = "lr")]
    LearningRate,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Batch => "B",
            SweepAxis::Clip => "C",
            SweepAxis::MicroBatches => "M",
            SweepAxis::LearningRate => "lr",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Structured run configuration. Unknown keys are rejected; every key has a
/// default, matching the reference fine-tuning setup (B = 32, M = 32,
/// C = 1.0, lr = 5e-6, three epochs, adam).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub mode: Mode,
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub epochs: f64,
    pub expected_batch: f64,
    pub micro_batches: usize,
    pub clip: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub hidden_dim: usize,
    pub rep_dim: usize,
    pub init_seed: u64,
    pub sampler_seed: u64,
    pub noise_seed: u64,
    pub sigma_override: Option<f64>,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data_records: usize,
    pub data_input_dim: usize,
    pub data_classes: usize,
    pub data_separation: f64,
    pub data_seed: u64,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: t.mode,
            epsilon: t.epsilon,
            delta: t.delta,
            epochs: t.epochs,
            expected_batch: t.expected_batch,
            micro_batches: t.micro_batches,
            clip: t.clip,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            hidden_dim: t.hidden_dim,
            rep_dim: t.rep_dim,
            init_seed: t.seeds.init,
            sampler_seed: t.seeds.sampler,
            noise_seed: t.seeds.noise,
            sigma_override: None,
            train_path: None,
            dev_path: None,
            output_dir: default_output_dir(),
            data_records: 2000,
            data_input_dim: 20,
            data_classes: 2,
            data_separation: 3.0,
            data_seed: 7,
        }
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads `--config` (if any) and applies the flag overrides.
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        macro_rules! over {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = args.$flag.clone() { cfg.$field = v; })*
            };
        }
        over!(
            mode => mode, epsilon => epsilon, epochs => epochs, batch => expected_batch,
            micro_batches => micro_batches, clip => clip, learning_rate => learning_rate,
            optimizer => optimizer, hidden_dim => hidden_dim, rep_dim => rep_dim,
            init_seed => init_seed, sampler_seed => sampler_seed, noise_seed => noise_seed,
            out_dir => output_dir, data_records => data_records, data_input_dim => data_input_dim,
            data_classes => data_classes, data_separation => data_separation, data_seed => data_seed,
        );
        if args.delta.is_some() {
            cfg.delta = args.delta;
        }
        if args.sigma_override.is_some() {
            cfg.sigma_override = args.sigma_override;
        }
        if args.train.is_some() {
            cfg.train_path = args.train.clone();
        }
        if args.dev.is_some() {
            cfg.dev_path = args.dev.clone();
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            epsilon: self.epsilon,
            delta: self.delta,
            epochs: self.epochs,
            expected_batch: self.expected_batch,
            micro_batches: self.micro_batches,
            clip: self.clip,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            hidden_dim: self.hidden_dim,
            rep_dim: self.rep_dim,
            seeds: Seeds {
                init: self.init_seed,
                sampler: self.sampler_seed,
                noise: self.noise_seed,
            },
            sigma_override: self.sigma_override,
        }
    }

    /// The training and dev sets: from CSV when `train_path` is set,
    /// otherwise the synthetic blobs described by the `data_*` keys.
    pub fn datasets(&self) -> Result<(Dataset, Option<Dataset>)> {
        match &self.train_path {
            Some(train_path) => {
                let train = Dataset::read_csv(train_path, Some(self.data_classes))?;
                let dev = self
                    .dev_path
                    .as_ref()
                    .map(|p| Dataset::read_csv(p, Some(train.num_classes())))
                    .transpose()?;
                Ok((train, dev))
            }
            None => {
                let (train, dev) = gaussian_blobs(
                    self.data_records,
                    self.data_input_dim,
                    self.data_classes,
                    self.data_separation,
                    self.data_seed,
                )
                .map_err(|e| Error::Config(e.to_string()))?;
                Ok((train, Some(dev)))
            }
        }
    }
}

/// One human-readable line with machine-readable `key=value` pairs.
pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<String> {
    let budget = PrivacyBudget::new(args.epsilon, args.delta)?;
    let schedule = args.schedule.schedule()?;
    let result = match args.schedule.mechanism {
        Mechanism::Dpfp => calibrate_sigma_dpfp(budget, &schedule)?,
        Mechanism::Dpsgd => calibrate_sigma_dpsgd(budget, schedule.steps(), schedule.sample_rate(), schedule.clip())?,
    };
    let name = match args.schedule.mechanism {
        Mechanism::Dpfp => "dpfp",
        Mechanism::Dpsgd => "dpsgd",
    };
    Ok(format!(
        "{name} noise for ({}, {})-DP over {} x {} rounds: mechanism={name} sigma={} mu_total={} epsilon={} delta={} steps={} micro_batches={} sample_rate={} clip={}",
        budget.epsilon(),
        budget.delta(),
        schedule.steps(),
        schedule.micro_batches(),
        result.sigma,
        result.mu_total.value(),
        result.achieved_budget.epsilon(),
        result.achieved_budget.delta(),
        schedule.steps(),
        schedule.micro_batches(),
        schedule.sample_rate(),
        schedule.clip(),
    ))
}

pub fn cmd_account(args: &AccountArgs) -> Result<String> {
    let schedule = args.schedule.schedule()?;
    let mu_total = compose_mu_dpfp(GdpParameter::from_mechanism(schedule.clip(), args.sigma)?, &schedule)?;
    let (epsilon, delta) = match (args.epsilon, args.delta) {
        (Some(eps), None) => (eps, delta_from_mu(eps, mu_total)?),
        (None, Some(delta)) => (epsilon_from_mu(mu_total, delta)?, delta),
        _ => {
            return Err(Error::Config(
                "account needs exactly one of --epsilon or --delta".into(),
            ))
        }
    };
    Ok(format!(
        "sigma {} over {} x {} rounds spends ({epsilon}, {delta})-DP: sigma={} mu_total={} epsilon={epsilon} delta={delta}",
        args.sigma,
        schedule.steps(),
        schedule.micro_batches(),
        args.sigma,
        mu_total.value(),
    ))
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<(PathBuf, PathBuf)> {
    let (train, dev) = gaussian_blobs(args.num_records, args.input_dim, args.num_classes, args.separation, args.seed)
        .map_err(|e| Error::Config(e.to_string()))?;
    fs::create_dir_all(&args.out_dir)?;
    let train_path = args.out_dir.join("train.csv");
    let dev_path = args.out_dir.join("dev.csv");
    train.write_csv(&train_path)?;
    dev.write_csv(&dev_path)?;
    Ok((train_path, dev_path))
}

fn write_run_outputs(dir: &Path, cfg: &RunConfigFile, metrics: &TrainRunMetrics) -> Result<()> {
    fs::create_dir_all(dir)?;
    let echo = RunConfigFile {
        output_dir: dir.to_path_buf(),
        ..cfg.clone()
    };
    fs::write(dir.join("config.toml"), echo.to_toml()?)?;
    metrics.write_steps_csv(&dir.join("steps.csv"))?;
    let mut summary = Vec::new();
    for (k, v) in [
        ("config.mode", cfg.mode.to_string()),
        ("config.epsilon", cfg.epsilon.to_string()),
        ("config.delta", cfg.delta.map_or("auto".into(), |d| d.to_string())),
        ("config.epochs", cfg.epochs.to_string()),
        ("config.expected_batch", cfg.expected_batch.to_string()),
        ("config.micro_batches", cfg.micro_batches.to_string()),
        ("config.clip", cfg.clip.to_string()),
        ("config.learning_rate", cfg.learning_rate.to_string()),
        ("config.optimizer", cfg.optimizer.to_string()),
    ] {
        writeln!(summary, "{k}={v}")?;
    }
    metrics.write_summary(&mut summary)?;
    fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}

/// Trains one model and writes `steps.csv`, `summary.txt` and `config.toml`
/// into the output directory.
pub fn cmd_train(cfg: &RunConfigFile, force_steps: Option<u64>) -> Result<TrainRunMetrics> {
    let (train, dev) = cfg.datasets()?;
    let config = cfg.train_config();
    let metrics = match force_steps {
        None => trainer::train(&config, &train, dev.as_ref())?.1,
        Some(n) => {
            let mut run = Trainer::new(config, &train)?;
            let planned = run.steps_planned();
            for _ in 0..n.min(planned) {
                run.step()?;
            }
            if n > planned {
                // The ledger refuses the first step past T.
                run.step()?;
            }
            run.run(dev.as_ref())?.1
        }
    };
    write_run_outputs(&cfg.output_dir, cfg, &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub mode: Mode,
    pub seed: u64,
    pub reported_accuracy: f64,
    pub final_accuracy: f64,
    pub sigma: Option<f64>,
    pub mu_total: Option<f64>,
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs all three modes on the same data, budget and seeds.
pub fn cmd_compare(cfg: &RunConfigFile, seeds: u64) -> Result<Vec<CompareRow>> {
    let (train, dev) = cfg.datasets()?;
    let dev = dev.ok_or_else(|| Error::Config("compare needs a dev set".into()))?;
    let mut rows = Vec::new();
    for mode in [Mode::Dpfp, Mode::Dpsgd, Mode::Nonprivate] {
        for s in 0..seeds {
            let run_cfg = RunConfigFile {
                mode,
                init_seed: cfg.init_seed.wrapping_add(s),
                sampler_seed: cfg.sampler_seed.wrapping_add(s),
                noise_seed: cfg.noise_seed.wrapping_add(s),
                output_dir: cfg.output_dir.join(mode.to_string()).join(format!("seed={s}")),
                ..cfg.clone()
            };
            let (_, metrics) = trainer::train(&run_cfg.train_config(), &train, Some(&dev))?;
            write_run_outputs(&run_cfg.output_dir, &run_cfg, &metrics)?;
            rows.push(CompareRow {
                mode,
                seed: s,
                reported_accuracy: metrics.reported_accuracy.unwrap_or(f64::NAN),
                final_accuracy: metrics.final_accuracy.unwrap_or(f64::NAN),
                sigma: metrics.sigma,
                mu_total: metrics.mu_total,
            });
        }
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let mut w = csv_writer(&cfg.output_dir.join("compare.csv"))?;
    w.write_record(["mode", "seed", "reported_accuracy", "final_accuracy", "sigma", "mu_total"])?;
    for r in &rows {
        w.write_record([
            r.mode.to_string(),
            r.seed.to_string(),
            r.reported_accuracy.to_string(),
            r.final_accuracy.to_string(),
            opt_str(r.sigma),
            opt_str(r.mu_total),
        ])?;
    }
    w.flush()?;
    let mut w = csv_writer(&cfg.output_dir.join("compare_summary.csv"))?;
    w.write_record(["mode", "runs", "mean_accuracy", "std_accuracy", "sigma", "mu_total"])?;
    for line in compare_summary(&rows) {
        w.write_record(&line)?;
    }
    w.flush()?;
    Ok(rows)
}

/// One row per mode: `mode, runs, mean, std, sigma, mu_total`.
pub fn compare_summary(rows: &[CompareRow]) -> Vec<Vec<String>> {
    [Mode::Dpfp, Mode::Dpsgd, Mode::Nonprivate]
        .iter()
        .map(|&mode| {
            let of_mode: Vec<&CompareRow> = rows.iter().filter(|r| r.mode == mode).collect();
            let accs: Vec<f64> = of_mode.iter().map(|r| r.reported_accuracy).collect();
            let (mean, std) = mean_std(&accs);
            vec![
                mode.to_string(),
                accs.len().to_string(),
                mean.to_string(),
                std.to_string(),
                opt_str(of_mode.first().and_then(|r| r.sigma)),
                opt_str(of_mode.first().and_then(|r| r.mu_total)),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    /// Error message when the grid point failed.
    pub outcome: std::result::Result<(f64, Option<f64>, Option<f64>), String>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn apply_axis(cfg: &mut RunConfigFile, axis: SweepAxis, value: f64) -> Result<()> {
    match axis {
        SweepAxis::Batch => cfg.expected_batch = value,
        SweepAxis::Clip => cfg.clip = value,
        SweepAxis::LearningRate => cfg.learning_rate = value,
        SweepAxis::MicroBatches => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::Config(format!("micro-batch count must be a positive integer, got {value}")));
            }
            cfg.micro_batches = value as usize;
        }
    }
    Ok(())
}

/// One run per grid value per seed. A failing grid point is recorded in the
/// `status` column and does not stop the sweep.
pub fn cmd_sweep(cfg: &RunConfigFile, axis: SweepAxis, values: &[f64], seeds: u64) -> Result<Vec<SweepRow>> {
    let (train, dev) = cfg.datasets()?;
    let dev = dev.ok_or_else(|| Error::Config("sweep needs a dev set".into()))?;
    let points: Vec<(f64, u64)> = values.iter().flat_map(|&v| (0..seeds).map(move |s| (v, s))).collect();

    let run_point = |&(value, s): &(f64, u64)| -> SweepRow {
        let outcome = (|| {
            let mut run_cfg = RunConfigFile {
                init_seed: cfg.init_seed.wrapping_add(s),
                sampler_seed: cfg.sampler_seed.wrapping_add(s),
                noise_seed: cfg.noise_seed.wrapping_add(s),
                output_dir: cfg.output_dir.join(format!("{}={value}", axis.name())).join(format!("seed={s}")),
                ..cfg.clone()
            };
            apply_axis(&mut run_cfg, axis, value)?;
            let (_, metrics) = trainer::train(&run_cfg.train_config(), &train, Some(&dev))?;
            write_run_outputs(&run_cfg.output_dir, &run_cfg, &metrics)?;
            Ok::<_, Error>((metrics.reported_accuracy.unwrap_or(f64::NAN), metrics.sigma, metrics.mu_total))
        })();
        SweepRow {
            axis,
            value,
            seed: s,
            outcome: outcome.map_err(|e| e.to_string()),
        }
    };

    // Grid points are independent; each owns its output directory.
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut rows = Vec::with_capacity(points.len());
    for chunk in points.chunks(workers) {
        let done: Vec<SweepRow> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|p| scope.spawn(|| run_point(p))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        rows.extend(done);
    }

    fs::create_dir_all(&cfg.output_dir)?;
    let mut w = csv_writer(&cfg.output_dir.join("sweep.csv"))?;
    w.write_record(["axis", "value", "seed", "final_accuracy", "sigma", "mu_total", "status"])?;
    for r in &rows {
        let (acc, sigma, mu, status) = match &r.outcome {
            Ok((acc, sigma, mu)) => (acc.to_string(), opt_str(*sigma), opt_str(*mu), "ok".to_string()),
            Err(e) => (String::new(), String::new(), String::new(), e.clone()),
        };
        w.write_record([axis.name().to_string(), r.value.to_string(), r.seed.to_string(), acc, sigma, mu, status])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Runs a parsed command, printing results to `out`.
pub fn run(cli: Cli, out: &mut impl Write) -> Result<()> {
    match cli.command {
        Command::Calibrate(args) => writeln!(out, "{}", cmd_calibrate(&args)?)?,
        Command::Account(args) => writeln!(out, "{}", cmd_account(&args)?)?,
        Command::GenData(args) => {
            let (train, dev) = cmd_gen_data(&args)?;
            writeln!(out, "wrote train={} dev={}", train.display(), dev.display())?;
        }
        Command::Train(args) => {
            let cfg = RunConfigFile::resolve(&args.run)?;
            let metrics = cmd_train(&cfg, args.force_steps)?;
            for (k, v) in metrics.summary_lines() {
                writeln!(out, "{k}={v}")?;
            }
        }
        Command::Compare(args) => {
            let cfg = RunConfigFile::resolve(&args.run)?;
            let rows = cmd_compare(&cfg, args.seeds)?;
            writeln!(out, "mode,runs,mean_accuracy,std_accuracy,sigma,mu_total")?;
            for line in compare_summary(&rows) {
                writeln!(out, "{}", line.join(","))?;
            }
        }
        Command::Sweep(args) => {
            let cfg = RunConfigFile::resolve(&args.run)?;
            let rows = cmd_sweep(&cfg, args.axis, &args.values, args.seeds)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            writeln!(
                out,
                "sweep {} over {} points: {} ok, {failed} failed; see {}",
                args.axis.name(),
                rows.len(),
                rows.len() - failed,
                cfg.output_dir.join("sweep.csv").display()
            )?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dpfp: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = toml::from_str::<RunConfigFile>("epsilon = 2.0\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let cfg: RunConfigFile = toml::from_str("epsilon = 2.0\n").unwrap();
        assert_eq!(cfg.epsilon, 2.0);
        assert_eq!(cfg.micro_batches, 32);
    }

    #[test]
    fn defaults_match_reference_setup() {
        let cfg = RunConfigFile::default();
        assert_eq!(cfg.micro_batches, 32);
        assert_eq!(cfg.clip, 1.0);
        assert_eq!(cfg.learning_rate, 5e-6);
        assert_eq!(cfg.expected_batch, 32.0);
        assert_eq!(cfg.epochs, 3.0);
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfigFile {
            delta: Some(2.5e-4),
            clip: f64::INFINITY,
            sigma_override: Some(0.0),
            ..RunConfigFile::default()
        };
        let back: RunConfigFile = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "epsilon = 2.0\nclip = 0.5\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            clip: Some(0.25),
            ..RunArgs::default()
        };
        let cfg = RunConfigFile::resolve(&args).unwrap();
        assert_eq!(cfg.epsilon, 2.0);
        assert_eq!(cfg.clip, 0.25);
    }

    #[test]
    fn mean_std_of_constant() {
        assert_eq!(mean_std(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
