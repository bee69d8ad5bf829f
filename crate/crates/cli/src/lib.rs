//! Argument parsing and command execution for the `noisylab` binary.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use noisylab::gradcheck;
use noisylab::noise::{average_diagonal, io as noise_io, NoiseMatrix, NoiseSpec};
use noisylab::train::{
    emit_report, preflight_output_dir, prepare_data, run_prepared, DatasetSource, ExperimentConfig,
    ExperimentReport, ModelKind, RunStatus, TrainingConfig, Variant, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS,
    DEFAULT_HEAD_INIT_DIAGONAL, DEFAULT_KEEP_PROB, DEFAULT_LR, DEFAULT_TRACE_LR, DEFAULT_PATIENCE,
};

pub const DATA_DIR_ENV: &str = "NOISYLAB_DATA_DIR";
pub const MNIST_SUBDIR: &str = "mnist";
pub const CIFAR_SUBDIR: &str = "cifar-10-batches-bin";

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
    /// A gradient check failed.
    pub const CHECK_FAILED: i32 = 4;
}

/// Writes a line to stdout. A closed pipe (`noisylab ... | head`) ends the
/// process quietly instead of panicking.
fn write_stdout(args: std::fmt::Arguments<'_>) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_fmt(args).and_then(|()| out.write_all(b"\n")) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(exit::SUCCESS);
        }
        log::warn!("writing to stdout failed: {e}");
    }
}

macro_rules! say {
    ($($arg:tt)*) => {
        write_stdout(format_args!($($arg)*))
    };
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] noisylab::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use noisylab::Error as E;
        match self {
            CliError::Usage(_) | CliError::Run(E::InvalidInput(_)) => exit::USAGE,
            CliError::Run(E::Divergence { .. }) => exit::DIVERGENCE,
            CliError::Run(_) => exit::DATA,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "noisylab", version, about = "Train classifiers on noisy labels and compare noise models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and evaluate one configuration.
    Run(RunArgs),
    /// Train every combination of the listed noise levels, seeds and variants.
    Sweep(SweepArgs),
    /// Finite-difference checks of every layer and loss gradient.
    Gradcheck,
    /// Print a noise matrix, or the learned and true matrices of a report.
    InspectNoise(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mnist,
    Cifar10,
    /// Gaussian blobs (no files needed).
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Base,
    TrueNoise,
    #[value(alias = "plain")]
    SoftmaxPlain,
    #[value(alias = "softmax-dropout")]
    Dropout,
    Trace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Dnn,
    SmallCnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Uniform,
    NonUniform,
}

/// Flags shared by `run` and `sweep`.
#[derive(Clone, Debug, Args)]
pub struct CommonArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetArg,
    /// Dataset root holding `mnist/` and `cifar-10-batches-bin/`
    /// [default: $NOISYLAB_DATA_DIR].
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Model; defaults to dnn for MNIST and blobs, small-cnn for CIFAR-10.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum, default_value = "uniform")]
    pub noise: FamilyArg,
    /// Seed of the non-uniform noise matrix.
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    /// Keep probability of the dropout mask on the noise head.
    #[arg(long, default_value_t = DEFAULT_KEEP_PROB)]
    pub q: f64,
    /// Trace penalty weight; chosen by held-out loss when omitted.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    /// Keep the learning rate fixed instead of halving it after non-improving epochs.
    #[arg(long)]
    pub no_lr_halving: bool,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_PATIENCE)]
    pub patience: usize,
    /// Diagonal of the initial softmax noise-head weights.
    #[arg(long, default_value_t = DEFAULT_HEAD_INIT_DIAGONAL)]
    pub head_init: f64,
    /// Learning rate of the trace head's noise matrix.
    #[arg(long, default_value_t = DEFAULT_TRACE_LR)]
    pub trace_lr: f64,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0.0)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to a name built from dataset, model, variant, p and seed.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Clone, Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["dropout"])]
    pub variants: Vec<VariantArg>,
    #[arg(long, value_delimiter = ',', default_values = ["0.3", "0.5", "0.7"])]
    pub p: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values = ["0"])]
    pub seeds: Vec<u64>,
    /// Runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Print the resolved configurations as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Clone, Debug, PartialEq, Args)]
pub struct InspectArgs {
    /// Show the learned and true matrices stored in this report.json.
    #[arg(long, conflicts_with_all = ["p", "noise", "noise_seed", "classes"])]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, value_enum, default_value = "uniform")]
    pub noise: FamilyArg,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Also write CSV and PGM files here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A parsed command line with every default resolved.
#[derive(Clone, Debug, PartialEq)]
pub enum CliConfig {
    Run {
        config: ExperimentConfig,
        out: PathBuf,
        print_config: bool,
    },
    Sweep {
        configs: Vec<ExperimentConfig>,
        out: PathBuf,
        jobs: usize,
        print_config: bool,
    },
    Gradcheck,
    InspectNoise(InspectArgs),
}

fn check_p(p: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(usage(format!("--p {p} is outside [0, 1]")))
    }
}

fn variant(arg: VariantArg, common: &CommonArgs) -> Variant {
    match arg {
        VariantArg::Base => Variant::Base,
        VariantArg::TrueNoise => Variant::TrueNoise,
        VariantArg::SoftmaxPlain => Variant::SoftmaxPlain,
        VariantArg::Dropout => Variant::SoftmaxDropout { keep_prob: common.q },
        VariantArg::Trace => Variant::TraceReg { lambda: common.lambda },
    }
}

fn dataset_source(common: &CommonArgs, data_root: Option<&Path>) -> Result<DatasetSource, CliError> {
    let root = || {
        common
            .data_dir
            .as_deref()
            .or(data_root)
            .map(Path::to_path_buf)
            .ok_or_else(|| usage(format!("missing dataset path: pass --data-dir or set {DATA_DIR_ENV}")))
    };
    Ok(match common.dataset {
        DatasetArg::Mnist => DatasetSource::Mnist {
            dir: root()?.join(MNIST_SUBDIR),
        },
        DatasetArg::Cifar10 => DatasetSource::Cifar10 {
            dir: root()?.join(CIFAR_SUBDIR),
        },
        DatasetArg::Blobs => DatasetSource::Blobs {
            train: 2000,
            test: 1000,
            classes: 10,
            dim: 20,
            separation: 4.0,
            seed: 0,
        },
    })
}

fn dataset_name(arg: DatasetArg) -> &'static str {
    match arg {
        DatasetArg::Mnist => "mnist",
        DatasetArg::Cifar10 => "cifar10",
        DatasetArg::Blobs => "blobs",
    }
}

fn build_config(
    common: &CommonArgs,
    data_root: Option<&Path>,
    variant_arg: VariantArg,
    p: f64,
    seed: u64,
    run_id: Option<String>,
) -> Result<ExperimentConfig, CliError> {
    check_p(p)?;
    let model = match common.model {
        Some(ModelArg::Dnn) => ModelKind::Dnn,
        Some(ModelArg::SmallCnn) => ModelKind::SmallCnn,
        None if common.dataset == DatasetArg::Cifar10 => ModelKind::SmallCnn,
        None => ModelKind::Dnn,
    };
    let noise = match common.noise {
        FamilyArg::Uniform => NoiseSpec::uniform(p),
        FamilyArg::NonUniform => NoiseSpec::non_uniform(p, common.noise_seed),
    };
    let variant = variant(variant_arg, common);
    let run_id = run_id.unwrap_or_else(|| {
        format!(
            "{}-{}-{}-p{p}-s{seed}",
            dataset_name(common.dataset),
            model.name(),
            variant.name()
        )
    });
    let config = ExperimentConfig {
        run_id,
        dataset: dataset_source(common, data_root)?,
        train_limit: common.train_limit,
        test_limit: common.test_limit,
        model,
        training: TrainingConfig {
            variant,
            noise,
            lr: common.lr,
            lr_halving: !common.no_lr_halving,
            epochs: common.epochs,
            batch_size: common.batch_size,
            early_stop_patience: common.patience,
            head_init_diagonal: common.head_init,
            trace_lr: common.trace_lr,
            seed,
        },
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

/// Parses `argv` (program name first). `data_root` stands in for
/// `$NOISYLAB_DATA_DIR`. Help and version requests come back as
/// [`clap::Error`]s with a zero exit code.
pub fn parse_cli<I, T>(argv: I, data_root: Option<&Path>) -> Result<CliConfig, ParseFailure>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(ParseFailure::Clap)?;
    resolve(cli, data_root).map_err(ParseFailure::Cli)
}

#[derive(Debug)]
pub enum ParseFailure {
    Clap(clap::Error),
    Cli(CliError),
}

fn resolve(cli: Cli, data_root: Option<&Path>) -> Result<CliConfig, CliError> {
    Ok(match cli.command {
        Command::Run(a) => CliConfig::Run {
            config: build_config(&a.common, data_root, a.variant, a.p, a.seed, a.run_id)?,
            out: a.common.out.clone(),
            print_config: a.print_config,
        },
        Command::Sweep(a) => {
            if a.jobs == 0 {
                return Err(usage("--jobs must be at least 1"));
            }
            let mut configs = Vec::new();
            for &p in &a.p {
                for &v in &a.variants {
                    for &seed in &a.seeds {
                        configs.push(build_config(&a.common, data_root, v, p, seed, None)?);
                    }
                }
            }
            CliConfig::Sweep {
                configs,
                out: a.common.out.clone(),
                jobs: a.jobs,
                print_config: a.print_config,
            }
        }
        Command::Gradcheck => CliConfig::Gradcheck,
        Command::InspectNoise(a) => {
            if a.report.is_none() {
                check_p(a.p.ok_or_else(|| usage("inspect-noise needs --p or --report"))?)?;
            }
            CliConfig::InspectNoise(a)
        }
    })
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(config: CliConfig) -> Result<i32, CliError> {
    match config {
        CliConfig::Run {
            config,
            out,
            print_config,
        } => {
            if print_config {
                say!("{}", serde_json::to_string_pretty(&config).map_err(noisylab::Error::from)?);
                return Ok(exit::SUCCESS);
            }
            run_all(vec![config], &out, 1)
        }
        CliConfig::Sweep {
            configs,
            out,
            jobs,
            print_config,
        } => {
            if print_config {
                say!("{}", serde_json::to_string_pretty(&configs).map_err(noisylab::Error::from)?);
                return Ok(exit::SUCCESS);
            }
            run_all(configs, &out, jobs)
        }
        CliConfig::Gradcheck => Ok(gradcheck_command()?),
        CliConfig::InspectNoise(args) => inspect_noise(&args),
    }
}

/// Trains the configurations on up to `jobs` threads. Data is loaded once per
/// distinct source; reports are written from this thread only.
pub fn run_all(configs: Vec<ExperimentConfig>, out: &Path, jobs: usize) -> Result<i32, CliError> {
    preflight_output_dir(out)?;
    let mut groups: Vec<Vec<&ExperimentConfig>> = Vec::new();
    for cfg in &configs {
        let same_data = |g: &Vec<&ExperimentConfig>| {
            let first = g[0];
            first.dataset == cfg.dataset && first.train_limit == cfg.train_limit && first.test_limit == cfg.test_limit
        };
        match groups.iter_mut().find(|g| same_data(g)) {
            Some(g) => g.push(cfg),
            None => groups.push(vec![cfg]),
        }
    }

    let mut diverged = 0;
    for group in groups {
        let (train_ds, test_ds) = prepare_data(group[0])?;
        info!("loaded {} train / {} test samples", train_ds.len(), test_ds.len());
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<(usize, noisylab::Result<ExperimentReport>)>();
        let mut first_error = None;
        std::thread::scope(|s| {
            for _ in 0..jobs.min(group.len()) {
                let tx = tx.clone();
                let (next, group, train_ds, test_ds) = (&next, &group, &train_ds, &test_ds);
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(cfg) = group.get(i) else { break };
                    info!("starting {}", cfg.run_id);
                    if tx.send((i, run_prepared(cfg, train_ds, test_ds))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (i, result) in rx {
                match result.and_then(|report| {
                    let paths = emit_report(&report, out)?;
                    Ok((report, paths))
                }) {
                    Ok((report, paths)) => {
                        summarize(&report, &paths);
                        if matches!(report.status, RunStatus::Diverged { .. }) {
                            diverged += 1;
                        }
                    }
                    Err(e) => {
                        error!("{}: {e}", group[i].run_id);
                        first_error.get_or_insert(e);
                    }
                }
            }
        });
        if let Some(e) = first_error {
            return Err(e.into());
        }
    }
    Ok(if diverged > 0 { exit::DIVERGENCE } else { exit::SUCCESS })
}

fn summarize(report: &ExperimentReport, paths: &[PathBuf]) {
    match (&report.status, report.test_error_percent) {
        (RunStatus::Completed, Some(err)) => {
            let learned = report
                .learned_average_diagonal
                .map(|d| format!(", learned avg diagonal {d:.4}"))
                .unwrap_or_default();
            say!(
                "{}: test error {err:.2}% after {} epochs (best {}){learned}",
                report.run_id,
                report.curve.len(),
                report.best_epoch.unwrap_or(0)
            );
        }
        (RunStatus::Diverged { step, detail }, _) => {
            say!("{}: diverged at step {step}: {detail}", report.run_id)
        }
        _ => say!("{}: no result", report.run_id),
    }
    for p in paths {
        info!("wrote {}", p.display());
    }
}

/// Prints one line per check and returns the exit code.
pub fn gradcheck_command() -> noisylab::Result<i32> {
    let results = gradcheck::run_all()?;
    for r in &results {
        say!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let worst = results.iter().map(|r| r.worst_relative_error).fold(0.0, f64::max);
    say!(
        "{} of {} checks passed; worst relative error {worst:.3e} (tolerance {:e})",
        results.len() - failed,
        results.len(),
        gradcheck::TOLERANCE
    );
    Ok(if failed == 0 { exit::SUCCESS } else { exit::CHECK_FAILED })
}

fn print_matrix(title: &str, psi: &NoiseMatrix) {
    say!("{title} (average diagonal {:.4})", average_diagonal(psi));
    say!("{}", noise_io::to_csv(psi.matrix()).trim_end());
}

fn write_matrix(dir: &Path, stem: &str, psi: &NoiseMatrix) -> noisylab::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| noisylab::Error::io(dir, e))?;
    for (ext, bytes) in [
        ("csv", noise_io::to_csv(psi.matrix()).into_bytes()),
        ("pgm", noise_io::to_pgm(psi.matrix(), 16)),
    ] {
        let path = dir.join(format!("{stem}.{ext}"));
        std::fs::write(&path, bytes).map_err(|e| noisylab::Error::io(&path, e))?;
    }
    Ok(())
}

fn inspect_noise(args: &InspectArgs) -> Result<i32, CliError> {
    let mut shown: Vec<(&str, NoiseMatrix)> = Vec::new();
    if let Some(path) = &args.report {
        let text = std::fs::read_to_string(path).map_err(|e| noisylab::Error::io(path, e))?;
        let report: ExperimentReport = serde_json::from_str(&text).map_err(noisylab::Error::from)?;
        let p = report.config.training.noise.p;
        let c = report.dataset.classes as f64;
        say!(
            "{}: p = {p}, pessimism threshold (1-p)+p/C = {:.4}",
            report.run_id,
            (1.0 - p) + p / c
        );
        if let Some(learned) = report.learned_noise {
            shown.push(("learned_noise", learned));
        }
        shown.push(("true_noise", report.true_noise));
    } else {
        let p = args.p.expect("checked during parsing");
        let spec = match args.noise {
            FamilyArg::Uniform => NoiseSpec::uniform(p),
            FamilyArg::NonUniform => NoiseSpec::non_uniform(p, args.noise_seed),
        };
        shown.push(("noise", spec.build(args.classes)?.psi));
    }
    for (name, psi) in &shown {
        print_matrix(name, psi);
        if let Some(dir) = &args.out {
            write_matrix(dir, name, psi)?;
        }
    }
    Ok(exit::SUCCESS)
}
