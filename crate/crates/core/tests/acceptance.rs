//! Release acceptance suite. Each test prints one `ACCEPTANCE <n> PASS|FAIL`
//! line and then asserts. The MNIST and CIFAR-10 criteria need the data
//! files (see README); they fail, not skip, when the files are missing.

mod common;

use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use common::*;
use noisylab::data::{cifar10_files, mnist_files, LabeledDataset, Test, Train};
use noisylab::math::{bernoulli_mask, project_to_simplex, Matrix, RngState};
use noisylab::nn::{Architecture, FeatureShape, LayerSpec, Network};
use noisylab::noise::{corrupt_labels, NoiseMatrix, NoiseSpec, SoftmaxNoiseHead};
use noisylab::train::{
    loss_base, loss_softmax_dropout, loss_trace, loss_true_noise, prepare_data, report_json, run_experiment,
    run_prepared, DatasetSource, ExperimentConfig, ExperimentReport, ModelKind, TrainingConfig, Variant,
};

const SEEDS: [u64; 3] = [0, 1, 2];
const NOISE_LEVELS: [f64; 3] = [0.3, 0.5, 0.7];
const DROPOUT_CEILING: [f64; 3] = [4.5, 6.0, 12.0];

/// Training runs share one CPU; this keeps them from overlapping so each
/// runtime bound measures its own work.
static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, pass: bool, what: &str, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    report_line(&format!("ACCEPTANCE {n:>2} {tag}  {what}: {detail}"));
}

fn finish(n: u32, pass: bool, what: &str, detail: String) {
    verdict(n, pass, what, &detail);
    assert!(pass, "criterion {n} ({what}) failed: {detail}");
}

// 1 -----------------------------------------------------------------------

fn check_network(arch: Architecture, seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let net = Network::new(arch).unwrap();
    let params = net.init(&mut rng);
    let x = Matrix::from_fn(2, net.input_len(), |_, _| rng.standard_normal());
    let r = Matrix::from_fn(2, net.output_len(), |_, _| rng.standard_normal());
    let (_, cache) = net.forward(&params, &x).unwrap();
    let analytic = net.backward(&params, &cache, &r).unwrap().to_flat();
    let objective = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_flat(flat).unwrap();
        let h = net.infer(&p, &x).unwrap();
        h.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum::<f64>()
    };
    worst_relative_error(&analytic, &numeric_gradient(&objective, &params.to_flat(), 1e-5))
}

#[test]
fn criterion_01_gradient_suite() {
    let _guard = heavy();
    let started = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();

    let conv = |cin, cout, kernel, stride, padding| LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel,
        stride,
        padding,
    };
    worst.push(("dense", check_network(Architecture::mlp(&[6, 12, 5]), 1)));
    worst.push((
        "relu",
        check_network(
            Architecture {
                input: FeatureShape::flat(4),
                layers: vec![
                    LayerSpec::Dense { inputs: 4, outputs: 7 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { inputs: 7, outputs: 3 },
                ],
            },
            2,
        ),
    ));
    worst.push((
        "conv2d+flatten",
        check_network(
            Architecture {
                input: FeatureShape::image(2, 5, 5),
                layers: vec![
                    conv(2, 3, 3, 2, 1),
                    conv(3, 2, 2, 1, 0),
                    LayerSpec::Flatten,
                    LayerSpec::Dense { inputs: 8, outputs: 3 },
                ],
            },
            3,
        ),
    ));
    worst.push((
        "maxpool2x2",
        check_network(
            Architecture {
                input: FeatureShape::image(1, 4, 4),
                layers: vec![
                    conv(1, 2, 3, 1, 1),
                    LayerSpec::MaxPool2x2,
                    LayerSpec::Flatten,
                    LayerSpec::Dense { inputs: 8, outputs: 2 },
                ],
            },
            4,
        ),
    ));
    worst.push((
        "avgpool",
        check_network(
            Architecture {
                input: FeatureShape::image(1, 4, 4),
                layers: vec![
                    conv(1, 2, 3, 1, 1),
                    LayerSpec::AvgPool { size: 2 },
                    LayerSpec::Flatten,
                    LayerSpec::Dense { inputs: 8, outputs: 2 },
                ],
            },
            5,
        ),
    ));

    let mut rng = RngState::new(9);
    let (n, c) = (4, 5);
    let h = Matrix::from_fn(n, c, |_, _| 1.5 * rng.standard_normal());
    let y: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
    let psi = NoiseMatrix::non_uniform(c, 0.5, &mut rng).unwrap().0;
    let psi_hat = psi.matrix().map(|v| 0.8 * v + 0.04);
    let w = Matrix::from_fn(c, c, |_, _| rng.standard_normal());
    let head = SoftmaxNoiseHead {
        w: w.clone(),
        keep_prob: 0.5,
    };
    let mask = [1.0, 0.0, 1.0, 1.0, 0.0];
    let lambda = 0.3;
    let fd = |f: &dyn Fn(&[f64]) -> f64, x: &Matrix| numeric_gradient(f, x.as_slice(), 1e-5);

    let base = loss_base(&h, &y).unwrap();
    worst.push((
        "loss base dh",
        worst_relative_error(base.dh.as_slice(), &fd(&|v| base_loss(v, c, &y), &h)),
    ));
    let tn = loss_true_noise(&h, &psi, &y).unwrap();
    worst.push((
        "loss true-noise dh",
        worst_relative_error(tn.dh.as_slice(), &fd(&|v| linear_head_loss(v, c, psi.matrix().as_slice(), &y), &h)),
    ));
    let tr = loss_trace(&h, &psi_hat, &y, lambda).unwrap();
    let trace_total = |hv: &[f64], m: &[f64]| {
        linear_head_loss(hv, c, m, &y) + lambda * (0..c).map(|i| m[i * c + i]).sum::<f64>()
    };
    worst.push((
        "loss trace dh",
        worst_relative_error(tr.dh.as_slice(), &fd(&|v| trace_total(v, psi_hat.as_slice()), &h)),
    ));
    worst.push((
        "loss trace dpsi",
        worst_relative_error(
            tr.dhead.as_ref().unwrap().as_slice(),
            &fd(&|m| trace_total(h.as_slice(), m), &psi_hat),
        ),
    ));
    let dr = loss_softmax_dropout(&h, &head, &y, &mask).unwrap();
    worst.push((
        "loss dropout dh",
        worst_relative_error(dr.dh.as_slice(), &fd(&|v| softmax_head_loss(v, c, w.as_slice(), &mask, &y), &h)),
    ));
    worst.push((
        "loss dropout dW",
        worst_relative_error(
            dr.dhead.as_ref().unwrap().as_slice(),
            &fd(&|m| softmax_head_loss(h.as_slice(), c, m, &mask, &y), &w),
        ),
    ));
    // The analytic losses must agree with the reference values too.
    let value_gap = [
        (base.loss - base_loss(h.as_slice(), c, &y)).abs(),
        (tn.loss - linear_head_loss(h.as_slice(), c, psi.matrix().as_slice(), &y)).abs(),
        (tr.loss - trace_total(h.as_slice(), psi_hat.as_slice())).abs(),
        (dr.loss - softmax_head_loss(h.as_slice(), c, w.as_slice(), &mask, &y)).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let secs = started.elapsed().as_secs_f64();
    let (name, err) = worst.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let pass = err < 1e-4 && value_gap < 1e-12 && secs <= 1.0;
    finish(
        1,
        pass,
        "gradient suite",
        format!(
            "{} components, worst rel err {err:.2e} ({name}), loss value gap {value_gap:.1e}, {secs:.3}s",
            worst.len()
        ),
    );
}

// 2 -----------------------------------------------------------------------

#[test]
fn criterion_02_corruption_statistics() {
    let _guard = heavy();
    let started = Instant::now();
    let (c, n) = (10, 100_000);
    let psi = NoiseMatrix::uniform(c, 0.5).unwrap();
    let truth: Vec<usize> = (0..n).map(|i| i % c).collect();
    let noisy = corrupt_labels(&truth, &psi, &mut RngState::new(2024)).unwrap();
    let confusion = empirical_confusion(&truth, &noisy, c);
    let mut dev: f64 = 0.0;
    for (i, row) in confusion.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            dev = dev.max((v - psi.get(i, j)).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    finish(
        2,
        dev < 0.01 && secs < 1.0,
        "corruption statistics",
        format!("max |confusion - psi| = {dev:.4} over C=10, n=1e5, p=0.5; {secs:.3}s"),
    );
}

// 3-6, 9: MNIST -------------------------------------------------------------

fn mnist_dir() -> PathBuf {
    data_root().join("mnist")
}

fn mnist_config(run_id: String, variant: Variant, p: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        run_id,
        dataset: DatasetSource::Mnist { dir: mnist_dir() },
        train_limit: None,
        test_limit: None,
        model: ModelKind::Dnn,
        training: TrainingConfig::new(variant, NoiseSpec::uniform(p), seed),
    }
}

type Splits = (LabeledDataset<Train>, LabeledDataset<Test>);

fn mnist_data() -> &'static Result<Splits, String> {
    static DATA: OnceLock<Result<Splits, String>> = OnceLock::new();
    DATA.get_or_init(|| {
        let (images, _) = mnist_files(&mnist_dir(), true);
        if !images.exists() {
            return Err(format!("MNIST not found under {} (see README)", mnist_dir().display()));
        }
        prepare_data(&mnist_config("probe".into(), Variant::Base, 0.0, 0)).map_err(|e| e.to_string())
    })
}

fn require_mnist(n: u32, what: &str) -> &'static Splits {
    match mnist_data() {
        Ok(d) => d,
        Err(e) => {
            verdict(n, false, what, &format!("data missing: {e}"));
            panic!("criterion {n}: {e}");
        }
    }
}

fn mnist_run(variant: Variant, p: f64, seed: u64) -> ExperimentReport {
    let (train, test) = mnist_data().as_ref().expect("checked by caller");
    let id = format!("{}-p{p}-s{seed}", variant.name());
    let report = run_prepared(&mnist_config(id, variant, p, seed), train, test).unwrap();
    report_line(&format!(
        "    {}: test error {:.2}%, {} epochs (best {}), learned avg diagonal {}, {:.0}s",
        report.run_id,
        report.test_error_percent.unwrap_or(f64::NAN),
        report.curve.len(),
        report.best_epoch.unwrap_or(0),
        report
            .learned_average_diagonal
            .map_or("-".to_string(), |d| format!("{d:.4}")),
        report.wall_clock_secs
    ));
    report
}

fn error_of(r: &ExperimentReport) -> f64 {
    r.test_error_percent.unwrap_or(f64::NAN)
}

#[test]
fn criterion_03_clean_baseline() {
    let what = "clean MNIST DNN";
    require_mnist(3, what);
    let _guard = heavy();
    let report = mnist_run(Variant::Base, 0.0, 0);
    let err = error_of(&report);
    let minutes = report.wall_clock_secs / 60.0;
    finish(
        3,
        err <= 3.0 && minutes <= 20.0,
        what,
        format!("test error {err:.2}% (bound 3.0%), {minutes:.1} min (bound 20)"),
    );
}

struct Sweep {
    dropout: Vec<Vec<ExperimentReport>>,
    base: Vec<Vec<ExperimentReport>>,
    true_noise: Vec<ExperimentReport>,
    table_secs: f64,
}

fn sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let _guard = heavy();
        let mut dropout = Vec::new();
        let mut base = Vec::new();
        let mut table_secs = 0.0;
        for p in NOISE_LEVELS {
            let mut d = Vec::new();
            let mut b = Vec::new();
            for seed in SEEDS {
                d.push(mnist_run(Variant::SoftmaxDropout { keep_prob: 0.1 }, p, seed));
                b.push(mnist_run(Variant::Base, p, seed));
            }
            table_secs += d.iter().chain(&b).map(|r| r.wall_clock_secs).sum::<f64>();
            dropout.push(d);
            base.push(b);
        }
        let true_noise = SEEDS.iter().map(|&s| mnist_run(Variant::TrueNoise, 0.5, s)).collect();
        Sweep {
            dropout,
            base,
            true_noise,
            table_secs,
        }
    })
}

fn medians(runs: &[Vec<ExperimentReport>]) -> Vec<f64> {
    runs.iter()
        .map(|rs| median(&mut rs.iter().map(error_of).collect::<Vec<_>>()))
        .collect()
}

#[test]
fn criterion_04_table_reproduction() {
    let what = "MNIST DNN uniform-noise table (3-seed medians)";
    require_mnist(4, what);
    let s = sweep();
    let d = medians(&s.dropout);
    let b = medians(&s.base);
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, p) in NOISE_LEVELS.iter().enumerate() {
        let ok = d[i] <= DROPOUT_CEILING[i] && d[i] < b[i];
        pass &= ok;
        parts.push(format!(
            "p={p}: dropout {:.2}% (<= {}) base {:.2}%",
            d[i], DROPOUT_CEILING[i], b[i]
        ));
    }
    let base_ok = b[1] >= 15.0 && b[2] >= 35.0;
    let hours = s.table_secs / 3600.0;
    pass &= base_ok && hours <= 2.0;
    parts.push(format!("base floors 15%/35% {}", if base_ok { "met" } else { "missed" }));
    parts.push(format!("{hours:.2} h (bound 2)"));
    finish(4, pass, what, parts.join("; "));
}

#[test]
fn criterion_05_true_noise_sanity() {
    let what = "TrueNoise vs Dropout at p=0.5";
    require_mnist(5, what);
    let s = sweep();
    let t = median(&mut s.true_noise.iter().map(error_of).collect::<Vec<_>>());
    let d = medians(&s.dropout)[1];
    let b = medians(&s.base)[1];
    // "Far below Base": under half of Base's error.
    let pass = (t - d).abs() <= 2.0 && t < 0.5 * b;
    finish(
        5,
        pass,
        what,
        format!("true-noise {t:.2}%, dropout {d:.2}% (gap <= 2pp), base {b:.2}% (true-noise < half)"),
    );
}

#[test]
fn criterion_06_pessimism() {
    let what = "learned noise is pessimistic";
    require_mnist(6, what);
    let s = sweep();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, p) in NOISE_LEVELS.iter().enumerate() {
        let bound = (1.0 - p) + p / 10.0;
        let diags: Vec<f64> = s.dropout[i]
            .iter()
            .map(|r| r.learned_average_diagonal.unwrap_or(f64::NAN))
            .collect();
        let worst = diags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        pass &= worst < bound;
        parts.push(format!("p={p}: max avg diagonal {worst:.4} (< {bound:.2})"));
    }
    finish(6, pass, what, parts.join("; "));
}

#[test]
fn criterion_09_determinism() {
    let what = "identical config and seed give byte-identical report.json";
    require_mnist(9, what);
    let _guard = heavy();
    let mut cfg = mnist_config("determinism".into(), Variant::SoftmaxDropout { keep_prob: 0.1 }, 0.5, 11);
    cfg.train_limit = Some(5000);
    cfg.test_limit = Some(1000);
    cfg.training.epochs = 3;
    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    noisylab::train::emit_report(&a, out_a.path()).unwrap();
    noisylab::train::emit_report(&b, out_b.path()).unwrap();
    let file_a = std::fs::read(out_a.path().join("determinism/report.json")).unwrap();
    let file_b = std::fs::read(out_b.path().join("determinism/report.json")).unwrap();
    let same = file_a == file_b && report_json(&a).unwrap() == report_json(&b).unwrap();
    finish(
        9,
        same,
        what,
        format!("{} bytes, {}", file_a.len(), if same { "identical" } else { "different" }),
    );
}

// 7 -----------------------------------------------------------------------

#[test]
fn criterion_07_reduction_lattice() {
    let mut rng = RngState::new(77);
    let c = 10;
    let mut gap: f64 = 0.0;
    for _ in 0..50 {
        let n = 1 + rng.below(64);
        let h = Matrix::from_fn(n, c, |_, _| 3.0 * rng.standard_normal());
        let y: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();

        // TrueNoise(I) == Base
        let a = loss_true_noise(&h, &NoiseMatrix::identity(c), &y).unwrap().loss;
        gap = gap.max((a - loss_base(&h, &y).unwrap().loss).abs());

        // Dropout(q = 1) == SoftmaxPlain, the mask a q = 1 draw produces
        // against the mask-free head written out directly.
        let head = SoftmaxNoiseHead {
            w: Matrix::from_fn(c, c, |_, _| rng.standard_normal()),
            keep_prob: 1.0,
        };
        let mask = bernoulli_mask(&mut rng, c, 1.0).unwrap();
        let dropout = loss_softmax_dropout(&h, &head, &y, &mask).unwrap().loss;
        let plain = softmax_head_loss(h.as_slice(), c, head.w.as_slice(), &[1.0; 10], &y);
        gap = gap.max((dropout - plain).abs());

        // TraceReg(lambda = 0, psi_hat = psi) == TrueNoise
        let psi = NoiseMatrix::non_uniform(c, rng.uniform(), &mut rng).unwrap().0;
        let trace = loss_trace(&h, psi.matrix(), &y, 0.0).unwrap().loss;
        gap = gap.max((trace - loss_true_noise(&h, &psi, &y).unwrap().loss).abs());
    }

    // Whole training runs: Dropout(q = 1) and the plain softmax head must
    // follow the same trajectory.
    let blobs = |variant: Variant| ExperimentConfig {
        run_id: variant.name().to_string(),
        dataset: DatasetSource::Blobs {
            train: 400,
            test: 200,
            classes: 4,
            dim: 6,
            separation: 4.0,
            seed: 3,
        },
        train_limit: None,
        test_limit: None,
        model: ModelKind::Mlp { hidden: vec![12] },
        training: TrainingConfig {
            epochs: 5,
            batch_size: 25,
            ..TrainingConfig::new(variant, NoiseSpec::uniform(0.4), 7)
        },
    };
    let dropout = run_experiment(&blobs(Variant::SoftmaxDropout { keep_prob: 1.0 })).unwrap();
    let plain = run_experiment(&blobs(Variant::SoftmaxPlain)).unwrap();
    let same_run = dropout.curve == plain.curve
        && dropout.learned_noise == plain.learned_noise
        && dropout.test_error_percent == plain.test_error_percent;
    finish(
        7,
        gap <= 1e-10 && same_run,
        "reduction lattice",
        format!(
            "max loss gap {gap:.2e} over 50 random batches x 3 identities; dropout(q=1) training {} plain softmax",
            if same_run { "identical to" } else { "differs from" }
        ),
    );
}

// 8 -----------------------------------------------------------------------

#[test]
fn criterion_08_projection_oracle() {
    let mut rng = RngState::new(8);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let scale = [0.1, 1.0, 5.0][rng.below(3)];
        let v: Vec<f64> = (0..10).map(|_| scale * rng.standard_normal()).collect();
        let fast = project_to_simplex(&v).unwrap();
        let slow = brute_force_simplex(&v);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    finish(
        8,
        worst <= 1e-8,
        "simplex projection vs brute force",
        format!("max deviation {worst:.2e} over 1000 random 10-dim columns"),
    );
}

// 10 ----------------------------------------------------------------------

#[test]
fn criterion_10_cifar_small_cnn() {
    let what = "CIFAR-10 5000-image subset, p=0.3: dropout beats base (small CNN)";
    let dir = data_root().join("cifar-10-batches-bin");
    if let Some(missing) = cifar10_files(&dir, true).into_iter().chain(cifar10_files(&dir, false)).find(|f| !f.exists())
    {
        let detail = format!("data missing: {} (see README)", missing.display());
        verdict(10, false, what, &detail);
        panic!("criterion 10: {detail}");
    }
    let _guard = heavy();
    let config = |variant: Variant| ExperimentConfig {
        run_id: format!("cifar-{}", variant.name()),
        dataset: DatasetSource::Cifar10 { dir: dir.clone() },
        train_limit: Some(5000),
        test_limit: None,
        model: ModelKind::SmallCnn,
        training: TrainingConfig::new(variant, NoiseSpec::uniform(0.3), 0),
    };
    let started = Instant::now();
    let dropout = run_experiment(&config(Variant::SoftmaxDropout { keep_prob: 0.1 })).unwrap();
    let base = run_experiment(&config(Variant::Base)).unwrap();
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let (d, b) = (error_of(&dropout), error_of(&base));
    finish(
        10,
        d < b && minutes <= 30.0,
        what,
        format!("dropout {d:.2}%, base {b:.2}%, {minutes:.1} min (bound 30)"),
    );
}
