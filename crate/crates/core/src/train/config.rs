use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;

pub const DEFAULT_KEEP_PROB: f64 = 0.1;
pub const DEFAULT_BATCH_SIZE: usize = 100;
pub const DEFAULT_PATIENCE: usize = 3;
pub const DEFAULT_LR: f64 = 0.5;
pub const DEFAULT_EPOCHS: usize = 30;
pub const MAX_EPOCHS: usize = 50;
pub const DEFAULT_HEAD_INIT_DIAGONAL: f64 = 1.0;
pub const DEFAULT_TRACE_LR: f64 = 0.1;
pub const LAMBDA_GRID: [f64; 4] = [0.01, 0.05, 0.1, 0.5];

/// Which loss sits on top of the base model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Variant {
    Base,
    /// Cross-entropy through the known noise matrix.
    TrueNoise,
    /// Trainable softmax noise head without dropout.
    SoftmaxPlain,
    /// Trainable softmax noise head with a Bernoulli(`keep_prob`) mask.
    SoftmaxDropout { keep_prob: f64 },
    /// Projected `Ψ̂` with a trace penalty; `None` selects `λ` from
    /// [`LAMBDA_GRID`] on a held-out split.
    TraceReg { lambda: Option<f64> },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::TrueNoise => "true_noise",
            Variant::SoftmaxPlain => "softmax_plain",
            Variant::SoftmaxDropout { .. } => "softmax_dropout",
            Variant::TraceReg { .. } => "trace_reg",
        }
    }

    pub fn has_noise_head(&self) -> bool {
        matches!(
            self,
            Variant::SoftmaxPlain | Variant::SoftmaxDropout { .. } | Variant::TraceReg { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Variant::SoftmaxDropout { keep_prob } if !(0.0..=1.0).contains(&keep_prob) => {
                Err(Error::invalid(format!("keep probability {keep_prob} outside [0, 1]")))
            }
            Variant::TraceReg { lambda: Some(l) } if !(l.is_finite() && l >= 0.0) => {
                Err(Error::invalid(format!("trace weight {l} must be finite and >= 0")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    #[serde(flatten)]
    pub variant: Variant,
    pub noise: NoiseSpec,
    pub lr: f64,
    /// Halve the learning rate after an epoch that does not improve the loss.
    pub lr_halving: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    /// Initial softmax noise-head weights are this multiple of the identity.
    #[serde(default = "default_head_init")]
    pub head_init_diagonal: f64,
    /// Learning rate of the trace head's `Ψ̂`, halved together with `lr`.
    #[serde(default = "default_trace_lr")]
    pub trace_lr: f64,
    pub seed: u64,
}

fn default_head_init() -> f64 {
    DEFAULT_HEAD_INIT_DIAGONAL
}

fn default_trace_lr() -> f64 {
    DEFAULT_TRACE_LR
}

impl TrainingConfig {
    pub fn new(variant: Variant, noise: NoiseSpec, seed: u64) -> Self {
        TrainingConfig {
            variant,
            noise,
            lr: DEFAULT_LR,
            lr_halving: true,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            early_stop_patience: DEFAULT_PATIENCE,
            head_init_diagonal: DEFAULT_HEAD_INIT_DIAGONAL,
            trace_lr: DEFAULT_TRACE_LR,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        self.noise.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.trace_lr.is_finite() && self.trace_lr > 0.0) {
            return Err(Error::invalid(format!(
                "trace learning rate {} must be positive",
                self.trace_lr
            )));
        }
        if self.epochs == 0 || self.epochs > MAX_EPOCHS {
            return Err(Error::invalid(format!(
                "epoch budget {} outside 1..={MAX_EPOCHS}",
                self.epochs
            )));
        }
        if !self.head_init_diagonal.is_finite() {
            return Err(Error::invalid("noise-head initial diagonal must be finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::invalid("early-stop patience must be positive"));
        }
        Ok(())
    }
}
