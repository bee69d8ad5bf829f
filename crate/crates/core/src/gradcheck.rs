//! Central finite-difference checks for every layer kind and every loss,
//! run on toy shapes.

use std::fmt;

use crate::error::Result;
use crate::math::{Matrix, RngState};
use crate::nn::{Architecture, FeatureShape, LayerSpec, Network};
use crate::noise::{NoiseMatrix, SoftmaxNoiseHead};
use crate::train::{loss_base, loss_softmax_dropout, loss_trace, loss_true_noise};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps exact zeros from
/// turning rounding noise into a large relative error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub component: String,
    pub worst_relative_error: f64,
    pub checked: usize,
    pub passed: bool,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} worst rel err {:.3e} over {} entries",
            if self.passed { "ok  " } else { "FAIL" },
            self.component,
            self.worst_relative_error,
            self.checked
        )
    }
}

pub fn compare(component: &str, analytic: &[f64], numeric: &[f64]) -> CheckResult {
    let worst = if analytic.len() != numeric.len() {
        f64::INFINITY
    } else {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max)
    };
    CheckResult {
        component: component.to_string(),
        worst_relative_error: worst,
        checked: analytic.len(),
        passed: worst < TOLERANCE,
    }
}

fn random_matrix(rng: &mut RngState, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.standard_normal())
}

/// Checks parameter gradients of `arch` under the linear functional
/// `⟨h, r⟩` with random `r`, so `∂/∂h = r`.
fn check_network(component: &str, arch: Architecture, batch: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = RngState::new(seed);
    let net = Network::new(arch)?;
    let params = net.init(&mut rng);
    let x = random_matrix(&mut rng, batch, net.input_len(), 1.0);
    let r = random_matrix(&mut rng, batch, net.output_len(), 1.0);
    let (_, cache) = net.forward(&params, &x)?;
    let analytic = net.backward(&params, &cache, &r)?.to_flat();
    let objective = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_flat(flat).expect("flat parameter length");
        let h = net.infer(&p, &x).expect("forward on toy shapes");
        h.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum::<f64>()
    };
    let numeric = central_difference(objective, &params.to_flat(), STEP);
    Ok(compare(component, &analytic, &numeric))
}

pub fn check_layers() -> Result<Vec<CheckResult>> {
    let dense = Architecture::mlp(&[5, 4, 3]);
    let relu = Architecture {
        input: FeatureShape::flat(4),
        layers: vec![
            LayerSpec::Dense { inputs: 4, outputs: 6 },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: 6, outputs: 3 },
        ],
    };
    let conv = Architecture {
        input: FeatureShape::image(2, 5, 5),
        layers: vec![
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: 2,
                kernel: 2,
                stride: 1,
                padding: 0,
            },
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 8, outputs: 2 },
        ],
    };
    let pools = Architecture {
        input: FeatureShape::image(1, 6, 6),
        layers: vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::MaxPool2x2,
            LayerSpec::AvgPool { size: 3 },
            LayerSpec::Flatten,
            LayerSpec::Dense { inputs: 2, outputs: 3 },
        ],
    };
    let small_cnn = Architecture::small_cnn(FeatureShape::image(1, 8, 8), 3);
    Ok(vec![
        check_network("dense", dense, 3, 11)?,
        check_network("relu", relu, 3, 12)?,
        check_network("conv2d", conv, 2, 13)?,
        check_network("maxpool2x2+avgpool+flatten", pools, 2, 14)?,
        check_network("small cnn", small_cnn, 2, 15)?,
    ])
}

fn random_labels(rng: &mut RngState, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(c)).collect()
}

fn check_dh(
    component: &str,
    h: &Matrix,
    analytic: &Matrix,
    f: impl Fn(&Matrix) -> Result<f64>,
) -> CheckResult {
    let numeric = central_difference(
        |x| f(&Matrix::new(h.rows(), h.cols(), x.to_vec()).expect("same shape")).expect("loss on toy batch"),
        h.as_slice(),
        STEP,
    );
    compare(component, analytic.as_slice(), &numeric)
}

fn check_head(
    component: &str,
    m: &Matrix,
    analytic: &Matrix,
    f: impl Fn(&Matrix) -> Result<f64>,
) -> CheckResult {
    let numeric = central_difference(
        |x| f(&Matrix::new(m.rows(), m.cols(), x.to_vec()).expect("same shape")).expect("loss on toy batch"),
        m.as_slice(),
        STEP,
    );
    compare(component, analytic.as_slice(), &numeric)
}

pub fn check_losses() -> Result<Vec<CheckResult>> {
    let mut rng = RngState::new(21);
    let (n, c) = (5, 4);
    let h = random_matrix(&mut rng, n, c, 1.5);
    let y = random_labels(&mut rng, n, c);
    let psi = NoiseMatrix::non_uniform(c, 0.5, &mut rng)?.0;
    // Interior column-stochastic estimate: the likelihood is smooth there.
    let psi_hat = psi.matrix().map(|v| 0.9 * v + 0.1 / c as f64);
    let lambda = 0.2;
    let head = SoftmaxNoiseHead {
        w: random_matrix(&mut rng, c, c, 1.5),
        keep_prob: 0.5,
    };
    let mask = [1.0, 0.0, 1.0, 1.0];

    let base = loss_base(&h, &y)?;
    let true_noise = loss_true_noise(&h, &psi, &y)?;
    let trace = loss_trace(&h, &psi_hat, &y, lambda)?;
    let dropout = loss_softmax_dropout(&h, &head, &y, &mask)?;
    let trace_dpsi = trace.dhead.clone().expect("trace loss has a head gradient");
    let dropout_dw = dropout.dhead.clone().expect("dropout loss has a head gradient");

    Ok(vec![
        check_dh("loss base: dh", &h, &base.dh, |m| Ok(loss_base(m, &y)?.loss)),
        check_dh("loss true noise: dh", &h, &true_noise.dh, |m| {
            Ok(loss_true_noise(m, &psi, &y)?.loss)
        }),
        check_dh("loss trace: dh", &h, &trace.dh, |m| {
            Ok(loss_trace(m, &psi_hat, &y, lambda)?.loss)
        }),
        check_head("loss trace: dpsi", &psi_hat, &trace_dpsi, |m| {
            Ok(loss_trace(&h, m, &y, lambda)?.loss)
        }),
        check_dh("loss dropout: dh", &h, &dropout.dh, |m| {
            Ok(loss_softmax_dropout(m, &head, &y, &mask)?.loss)
        }),
        check_head("loss dropout: dW", &head.w, &dropout_dw, |m| {
            let hd = SoftmaxNoiseHead {
                w: m.clone(),
                keep_prob: head.keep_prob,
            };
            Ok(loss_softmax_dropout(&h, &hd, &y, &mask)?.loss)
        }),
    ])
}

/// Every layer and loss check, in a fixed order.
pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut all = check_layers()?;
    all.extend(check_losses()?);
    Ok(all)
}
