use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::{
    cifar10_files, load_cifar10_bin, load_mnist_idx, make_synthetic_blobs, mnist_files, normalize_mean_image,
    LabeledDataset, Test, Train,
};
use crate::error::{Error, Result};
use crate::math::{Matrix, RngState, Stream};
use crate::nn::{Architecture, FeatureShape};
use crate::noise::{average_diagonal, NoiseMatrix};

use super::config::{TrainingConfig, Variant, LAMBDA_GRID};
use super::trainer::{evaluate, noisy_log_loss, train, EpochRecord};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Fraction of the training set held out when choosing the trace weight.
pub const HOLDOUT_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Directory holding the four IDX files under their usual names.
    Mnist { dir: PathBuf },
    /// Directory holding the CIFAR-10 binary batches.
    Cifar10 { dir: PathBuf },
    /// Gaussian blobs; train and test draw from separate streams of `seed`.
    Blobs {
        train: usize,
        test: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
}

impl DatasetSource {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetSource::Mnist { .. } => "mnist",
            DatasetSource::Cifar10 { .. } => "cifar10",
            DatasetSource::Blobs { .. } => "blobs",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Fully connected 500-300 ReLU network.
    Dnn,
    Mlp { hidden: Vec<usize> },
    SmallCnn,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Dnn => "dnn",
            ModelKind::Mlp { .. } => "mlp",
            ModelKind::SmallCnn => "small_cnn",
        }
    }

    pub fn architecture(&self, input: FeatureShape, classes: usize) -> Architecture {
        let hidden: &[usize] = match self {
            ModelKind::Dnn => &[500, 300],
            ModelKind::Mlp { hidden } => hidden,
            ModelKind::SmallCnn => return Architecture::small_cnn(input, classes),
        };
        let mut sizes = vec![input.len()];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        Architecture::mlp(&sizes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub dataset: DatasetSource,
    /// Keep only the first `n` training samples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub model: ModelKind,
    pub training: TrainingConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        validate_run_id(&self.run_id)?;
        if self.train_limit == Some(0) || self.test_limit == Some(0) {
            return Err(Error::invalid("dataset limits must be positive"));
        }
        self.training.validate()
    }
}

/// Run ids name output directories and CSV rows, so they are restricted to
/// `[A-Za-z0-9._-]`.
pub fn validate_run_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("run id {id:?} must match [A-Za-z0-9._-]+")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { step: u64, detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub source_digests: Vec<(String, String)>,
    pub preprocessing: Vec<String>,
    /// Digests of the prepared (normalised) train and test sets.
    pub train_digest: String,
    pub test_digest: String,
    /// Fraction of training labels changed by the corruption.
    pub flip_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub heldout_noisy_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub run_id: String,
    pub config: ExperimentConfig,
    #[serde(flatten)]
    pub status: RunStatus,
    pub dataset: DatasetSummary,
    pub true_noise: NoiseMatrix,
    /// Simplex draws behind a non-uniform noise matrix.
    pub true_noise_delta: Option<Matrix>,
    pub true_average_diagonal: f64,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub test_error_percent: Option<f64>,
    pub trace_lambda: Option<f64>,
    pub lambda_search: Vec<LambdaScore>,
    pub learned_noise: Option<NoiseMatrix>,
    pub learned_average_diagonal: Option<f64>,
    /// Not serialised, so reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

fn limit<R: crate::data::Role>(ds: LabeledDataset<R>, n: Option<usize>) -> Result<LabeledDataset<R>> {
    match n {
        Some(n) if n < ds.len() => ds.head(n),
        _ => Ok(ds),
    }
}

/// Loads the configured dataset, applies the size limits and centres both
/// splits on the training mean image. Labels are still clean.
pub fn prepare_data(config: &ExperimentConfig) -> Result<(LabeledDataset<Train>, LabeledDataset<Test>)> {
    let (train, test): (LabeledDataset<Train>, LabeledDataset<Test>) = match &config.dataset {
        DatasetSource::Mnist { dir } => {
            let (ti, tl) = mnist_files(dir, true);
            let (ei, el) = mnist_files(dir, false);
            (load_mnist_idx(&ti, &tl)?, load_mnist_idx(&ei, &el)?)
        }
        DatasetSource::Cifar10 { dir } => (
            load_cifar10_bin(&cifar10_files(dir, true))?,
            load_cifar10_bin(&cifar10_files(dir, false))?,
        ),
        &DatasetSource::Blobs {
            train,
            test,
            classes,
            dim,
            separation,
            seed,
        } => (
            make_synthetic_blobs(&mut RngState::stream(seed, Stream::Synthetic), train, classes, dim, separation)?,
            make_synthetic_blobs(&mut RngState::stream(seed, Stream::Custom(1)), test, classes, dim, separation)?,
        ),
    };
    normalize_mean_image(limit(train, config.train_limit)?, limit(test, config.test_limit)?)
}

/// Chooses the trace weight from [`LAMBDA_GRID`] by the noisy-label loss on
/// a held-out [`HOLDOUT_FRACTION`] of the (already corrupted) training set.
pub fn select_trace_lambda(
    training: &TrainingConfig,
    train_ds: &LabeledDataset<Train>,
    arch: &Architecture,
) -> Result<(f64, Vec<LambdaScore>)> {
    let n = train_ds.len();
    let held = ((n as f64 * HOLDOUT_FRACTION).round() as usize).max(1);
    if held >= n {
        return Err(Error::invalid(format!("{n} samples are too few for a held-out split")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngState::stream(training.seed, Stream::Split).shuffle(&mut order);
    let fit = train_ds.subset(&order[held..])?;
    let heldout = train_ds.subset(&order[..held])?;

    let mut scores = Vec::with_capacity(LAMBDA_GRID.len());
    for lambda in LAMBDA_GRID {
        let cfg = TrainingConfig {
            variant: Variant::TraceReg { lambda: Some(lambda) },
            ..training.clone()
        };
        let model = train(&cfg, &fit.training_view()?, arch)?;
        let loss = noisy_log_loss(&model.network, &model.params, model.head.as_ref(), &heldout.training_view()?)?;
        info!("trace weight {lambda}: held-out noisy loss {loss:.6}");
        scores.push(LambdaScore {
            lambda,
            heldout_noisy_loss: loss,
        });
    }
    let best = scores
        .iter()
        .fold(None::<&LambdaScore>, |acc, s| match acc {
            Some(a) if a.heldout_noisy_loss <= s.heldout_noisy_loss => Some(a),
            _ => Some(s),
        })
        .map(|s| s.lambda)
        .expect("grid is not empty");
    Ok((best, scores))
}

/// Loads, corrupts, trains and evaluates one configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let (train_ds, test_ds) = prepare_data(config)?;
    run_prepared(config, &train_ds, &test_ds)
}

/// [`run_experiment`] on data already produced by [`prepare_data`] for the
/// same configuration, so sweeps can share one load.
pub fn run_prepared(
    config: &ExperimentConfig,
    train_ds: &LabeledDataset<Train>,
    test_ds: &LabeledDataset<Test>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let training = &config.training;
    let classes = train_ds.classes();
    let built = training.noise.build(classes)?;

    let mut train_ds = train_ds.clone();
    train_ds.corrupt(&built.psi, &mut RngState::stream(training.seed, Stream::Corruption))?;
    let arch = config.model.architecture(train_ds.shape(), classes);

    let mut report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        run_id: config.run_id.clone(),
        config: config.clone(),
        status: RunStatus::Completed,
        dataset: DatasetSummary {
            name: train_ds.meta().name.clone(),
            classes,
            train_size: train_ds.len(),
            test_size: test_ds.len(),
            source_digests: train_ds
                .meta()
                .source_digests
                .iter()
                .chain(&test_ds.meta().source_digests)
                .cloned()
                .collect(),
            preprocessing: train_ds.meta().preprocessing.clone(),
            train_digest: train_ds.digest(),
            test_digest: test_ds.digest(),
            flip_rate: train_ds.flip_rate().unwrap_or(0.0),
        },
        true_average_diagonal: average_diagonal(&built.psi),
        true_noise: built.psi,
        true_noise_delta: built.delta,
        curve: Vec::new(),
        best_epoch: None,
        stopped_early: false,
        test_error_percent: None,
        trace_lambda: None,
        lambda_search: Vec::new(),
        learned_noise: None,
        learned_average_diagonal: None,
        wall_clock_secs: 0.0,
    };

    let outcome = (|| {
        let mut training = training.clone();
        if let Variant::TraceReg { lambda: None } = training.variant {
            let (lambda, scores) = select_trace_lambda(&training, &train_ds, &arch)?;
            report.lambda_search = scores;
            training.variant = Variant::TraceReg { lambda: Some(lambda) };
        }
        if let Variant::TraceReg { lambda } = training.variant {
            report.trace_lambda = lambda;
        }
        train(&training, &train_ds.training_view()?, &arch)
    })();

    match outcome {
        Ok(model) => {
            report.test_error_percent = Some(evaluate(&model.network, &model.params, test_ds)?);
            report.curve = model.curve;
            report.best_epoch = Some(model.best_epoch);
            report.stopped_early = model.stopped_early;
            if let Some(head) = &model.head {
                let learned = head.learned_noise()?;
                report.learned_average_diagonal = Some(average_diagonal(&learned));
                report.learned_noise = Some(learned);
            }
        }
        Err(Error::Divergence { step, detail }) => {
            warn!("run {} diverged at step {step}: {detail}", config.run_id);
            report.status = RunStatus::Diverged { step, detail };
        }
        Err(e) => return Err(e),
    }
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(report)
}
