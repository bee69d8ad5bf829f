use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::data::{batches, gather_rows, LabeledDataset, Test, TrainingView};
use crate::error::{Error, Result};
use crate::math::{bernoulli_mask, project_columns_to_simplex, softmax_in_place, Matrix, RngState, Stream};
use crate::nn::{sgd_step, Architecture, Network, NetworkParams};
use crate::noise::{NoiseMatrix, SoftmaxNoiseHead};

use super::config::{TrainingConfig, Variant};
use super::loss::{loss_base, loss_softmax_dropout, loss_trace, loss_true_noise, LossOutput, LOG_FLOOR};

const EVAL_CHUNK: usize = 1000;

/// Trainable parameters of the noise head, for the variants that have one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseHeadParams {
    Softmax(SoftmaxNoiseHead),
    Trace { psi_hat: Matrix },
}

impl NoiseHeadParams {
    /// The noise matrix the head currently implements: the equivalent
    /// matrix of a softmax head, or the projected estimate itself.
    pub fn learned_noise(&self) -> Result<NoiseMatrix> {
        match self {
            NoiseHeadParams::Softmax(head) => head.equivalent_noise(),
            NoiseHeadParams::Trace { psi_hat } => NoiseMatrix::new(psi_hat.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Epoch-average training objective on the noisy labels.
    pub noisy_loss: f64,
    /// Epoch-average loss that drives early stopping and the learning-rate
    /// schedule. Equal to `noisy_loss` except under the dropout head, where it
    /// is the mask-free likelihood through the equivalent noise matrix.
    pub monitor_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    /// Not an improvement; carries the current run of epochs above the best.
    NotImproved { worse_epochs: usize },
    Stop,
}

/// Patience-based stopping on the epoch-average noisy loss. An epoch counts
/// against the patience only when its loss exceeds the best seen so far.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    worse_epochs: usize,
    epochs_seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            worse_epochs: 0,
            epochs_seen: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        self.epochs_seen += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.epochs_seen;
            self.worse_epochs = 0;
            return StopDecision::Improved;
        }
        if loss > self.best {
            self.worse_epochs += 1;
        } else {
            self.worse_epochs = 0;
        }
        if self.worse_epochs >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::NotImproved {
                worse_epochs: self.worse_epochs,
            }
        }
    }

    /// 1-based epoch of the best loss, 0 before any observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub network: Network,
    /// Snapshot from the best epoch.
    pub params: NetworkParams,
    pub head: Option<NoiseHeadParams>,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

enum Head {
    None,
    Fixed(NoiseMatrix),
    Softmax(SoftmaxNoiseHead, bool),
    Trace(Matrix, f64),
}

fn softmax_head(classes: usize, keep_prob: f64, diagonal: f64) -> Result<SoftmaxNoiseHead> {
    let mut head = SoftmaxNoiseHead::new(classes, keep_prob)?;
    for i in 0..classes {
        head.w.set(i, i, diagonal);
    }
    Ok(head)
}

impl Head {
    fn for_config(config: &TrainingConfig, classes: usize) -> Result<Head> {
        Ok(match config.variant {
            Variant::Base => Head::None,
            Variant::TrueNoise => Head::Fixed(config.noise.build(classes)?.psi),
            Variant::SoftmaxPlain => Head::Softmax(softmax_head(classes, 1.0, config.head_init_diagonal)?, false),
            Variant::SoftmaxDropout { keep_prob } => {
                Head::Softmax(softmax_head(classes, keep_prob, config.head_init_diagonal)?, true)
            }
            Variant::TraceReg { lambda: Some(lambda) } => Head::Trace(Matrix::identity(classes), lambda),
            Variant::TraceReg { lambda: None } => {
                return Err(Error::invalid(
                    "trace weight must be chosen before training (see select_trace_lambda)",
                ))
            }
        })
    }

    fn params(&self) -> Option<NoiseHeadParams> {
        match self {
            Head::None | Head::Fixed(_) => None,
            Head::Softmax(h, _) => Some(NoiseHeadParams::Softmax(h.clone())),
            Head::Trace(m, _) => Some(NoiseHeadParams::Trace { psi_hat: m.clone() }),
        }
    }

    fn loss(&self, h: &Matrix, labels: &[usize], mask_rng: &mut RngState) -> Result<LossOutput> {
        match self {
            Head::None => loss_base(h, labels),
            Head::Fixed(psi) => loss_true_noise(h, psi, labels),
            Head::Softmax(head, dropout) => {
                let c = head.classes();
                let mask = if *dropout {
                    bernoulli_mask(mask_rng, c, head.keep_prob)?
                } else {
                    vec![1.0; c]
                };
                loss_softmax_dropout(h, head, labels, &mask)
            }
            Head::Trace(psi_hat, lambda) => loss_trace(h, psi_hat, labels, *lambda),
        }
    }

    /// Mask-free noisy-label loss of the batch for the dropout head, whose
    /// objective fluctuates with the mask draw; `None` for the other heads.
    fn monitor(&self, h: &Matrix, labels: &[usize]) -> Result<Option<f64>> {
        let head = match self {
            Head::Softmax(head, true) if head.keep_prob < 1.0 => head,
            _ => return Ok(None),
        };
        let psi = head.equivalent_noise()?;
        let mut total = 0.0;
        let mut probs = vec![0.0; h.cols()];
        for (r, &y) in labels.iter().enumerate() {
            probs.copy_from_slice(h.row(r));
            softmax_in_place(&mut probs);
            let z: f64 = psi.matrix().row(y).iter().zip(&probs).map(|(a, b)| a * b).sum();
            total -= z.max(LOG_FLOOR).ln();
        }
        Ok(Some(total / labels.len() as f64))
    }

    fn step(&mut self, grad: Option<&Matrix>, lr: f64, trace_lr: f64) -> Result<()> {
        match (self, grad) {
            (Head::Softmax(head, _), Some(dw)) => head.w.axpy(-lr, dw),
            (Head::Trace(psi_hat, _), Some(dpsi)) => {
                // dL/dΨ̂ scales with 1/[Ψ̂σ]_y and is unbounded for confidently
                // wrong samples, so the step is clipped in Frobenius norm.
                let norm = dpsi.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = if norm > TRACE_GRAD_CLIP { TRACE_GRAD_CLIP / norm } else { 1.0 };
                psi_hat.axpy(-trace_lr * scale, dpsi)?;
                *psi_hat = project_columns_to_simplex(psi_hat)?;
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

const TRACE_GRAD_CLIP: f64 = 1.0;

fn divergence(step: u64, detail: impl Into<String>) -> Error {
    Error::Divergence {
        step,
        detail: detail.into(),
    }
}

/// Mini-batch SGD on the variant loss over the noisy labels in `view`.
///
/// Each epoch reshuffles; the softmax-dropout head draws a fresh mask per
/// mini-batch. The best-epoch snapshot is returned.
pub fn train(config: &TrainingConfig, view: &TrainingView<'_>, arch: &Architecture) -> Result<TrainedModel> {
    train_observed(config, view, arch, |_, _, _| {})
}

/// [`train`], calling `observer` after every epoch with the current
/// (not necessarily best) parameters.
pub fn train_observed(
    config: &TrainingConfig,
    view: &TrainingView<'_>,
    arch: &Architecture,
    mut observer: impl FnMut(&EpochRecord, &Network, &NetworkParams),
) -> Result<TrainedModel> {
    config.validate()?;
    let network = Network::new(arch.clone())?;
    if network.input_len() != view.shape.len() || network.output_len() != view.classes {
        return Err(Error::shape(format!(
            "network maps {} -> {}, data has {} features and {} classes",
            network.input_len(),
            network.output_len(),
            view.shape.len(),
            view.classes
        )));
    }
    if view.is_empty() {
        return Err(Error::invalid("empty training set"));
    }

    let mut params = network.init(&mut RngState::stream(config.seed, Stream::Init));
    let mut head = Head::for_config(config, view.classes)?;
    let mut shuffle_rng = RngState::stream(config.seed, Stream::Shuffle);
    let mut mask_rng = RngState::stream(config.seed, Stream::Mask);

    let mut lr = config.lr;
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut best = (params.clone(), head.params());
    let mut curve = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let (mut total, mut monitored) = (0.0, 0.0);
        for batch in batches(view.len(), config.batch_size, &mut shuffle_rng)? {
            let x = gather_rows(view.images, &batch);
            let y: Vec<usize> = batch.iter().map(|&i| view.labels[i]).collect();
            let (h, cache) = network.forward(&params, &x)?;
            let out = head.loss(&h, &y, &mut mask_rng)?;
            let monitor = head.monitor(&h, &y)?.unwrap_or(out.loss);
            if !out.loss.is_finite() || !out.dh.is_finite() {
                return Err(divergence(params.step, format!("loss {} at epoch {epoch}", out.loss)));
            }
            let grads = network.backward(&params, &cache, &out.dh)?;
            let step = params.step;
            sgd_step(&mut params, &grads, lr)?;
            head.step(out.dhead.as_ref(), lr, config.trace_lr * lr / config.lr)?;
            if let Some(dhead) = &out.dhead {
                if !dhead.is_finite() {
                    return Err(divergence(step, "non-finite noise-head gradient"));
                }
            }
            total += out.loss * batch.len() as f64;
            monitored += monitor * batch.len() as f64;
        }
        let noisy_loss = total / view.len() as f64;
        let monitor_loss = monitored / view.len() as f64;
        let record = EpochRecord {
            epoch,
            noisy_loss,
            monitor_loss,
            lr,
        };
        info!("epoch {epoch}: noisy loss {noisy_loss:.6}, monitored {monitor_loss:.6}, lr {lr}");
        observer(&record, &network, &params);
        curve.push(record);
        match stopper.observe(monitor_loss) {
            StopDecision::Improved => best = (params.clone(), head.params()),
            StopDecision::NotImproved { worse_epochs } => {
                debug!("epoch {epoch} did not improve ({worse_epochs} above best)");
                if config.lr_halving {
                    lr *= 0.5;
                }
            }
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    let (params, head) = best;
    Ok(TrainedModel {
        network,
        params,
        head,
        curve,
        best_epoch: stopper.best_epoch(),
        stopped_early,
    })
}

fn chunks(n: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n).step_by(EVAL_CHUNK).map(move |s| s..(s + EVAL_CHUNK).min(n))
}

fn rows(m: &Matrix, range: std::ops::Range<usize>) -> Result<Matrix> {
    let cols = m.cols();
    Matrix::new(range.len(), cols, m.as_slice()[range.start * cols..range.end * cols].to_vec())
}

/// Test error in percent against the clean labels. Only the base network
/// is used; noise heads play no part at test time.
pub fn evaluate(network: &Network, params: &NetworkParams, test: &LabeledDataset<Test>) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut wrong = 0usize;
    for range in chunks(test.len()) {
        let truth = &test.true_labels()[range.clone()];
        let predicted = network.predict_batch(params, &rows(test.images(), range)?)?;
        wrong += predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    }
    Ok(100.0 * wrong as f64 / test.len() as f64)
}

/// Mean `−log [M σ(h)]_y` over a labelled view, with `M` the learned noise
/// of `head` (identity when there is none). Used for held-out selection.
pub fn noisy_log_loss(
    network: &Network,
    params: &NetworkParams,
    head: Option<&NoiseHeadParams>,
    view: &TrainingView<'_>,
) -> Result<f64> {
    if view.is_empty() {
        return Err(Error::invalid("empty held-out set"));
    }
    let m = match head {
        Some(h) => h.learned_noise()?,
        None => NoiseMatrix::identity(view.classes),
    };
    let mut total = 0.0;
    for range in chunks(view.len()) {
        let mut h = network.infer(params, &rows(view.images, range.clone())?)?;
        for (r, &y) in view.labels[range].iter().enumerate() {
            let probs = h.row_mut(r);
            softmax_in_place(probs);
            let z: f64 = m.matrix().row(y).iter().zip(probs.iter()).map(|(a, b)| a * b).sum();
            total -= z.max(LOG_FLOOR).ln();
        }
    }
    Ok(total / view.len() as f64)
}
