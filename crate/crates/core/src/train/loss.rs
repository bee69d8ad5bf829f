//! Noisy-label training losses. Each takes the base-model logits `h`
//! (one row per sample) and the noisy labels, and returns the mean loss
//! with its exact gradient with respect to `h` (and to the noise-head
//! parameters where the variant has trainable ones).

use log::warn;

use crate::error::{Error, Result};
use crate::math::{softmax_in_place, Matrix};
use crate::noise::{NoiseMatrix, SoftmaxNoiseHead};

/// Probabilities below this are clamped before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    /// `∂loss/∂h`, same shape as the logits.
    pub dh: Matrix,
    /// Gradient with respect to the noise-head matrix (`Ψ̂` or `W`).
    pub dhead: Option<Matrix>,
    /// Samples whose likelihood hit [`LOG_FLOOR`]; they contribute no gradient.
    pub clamped: usize,
}

fn check_inputs(h: &Matrix, labels: &[usize]) -> Result<usize> {
    if h.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} logit rows for {} labels",
            h.rows(),
            labels.len()
        )));
    }
    if h.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let c = h.cols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    Ok(c)
}

fn check_square(m: &Matrix, c: usize, what: &str) -> Result<()> {
    if m.rows() != c || m.cols() != c {
        return Err(Error::shape(format!(
            "{what} is {}x{}, logits have {c} classes",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// Backpropagates `dp = ∂loss/∂σ(h)` through the softmax: `σ ⊙ (dp − ⟨dp, σ⟩)`.
fn softmax_backward(probs: &[f64], dp: &[f64], out: &mut [f64]) {
    let inner: f64 = probs.iter().zip(dp).map(|(p, d)| p * d).sum();
    for ((o, p), d) in out.iter_mut().zip(probs).zip(dp) {
        *o = p * (d - inner);
    }
}

fn warn_clamped(which: &str, clamped: usize, n: usize) {
    if clamped > 0 {
        warn!("{which}: {clamped} of {n} likelihoods clamped at {LOG_FLOOR:e}");
    }
}

/// Cross-entropy of the base model against the noisy labels,
/// `−mean log σ(h)_y`, evaluated in log-space (it never needs the floor).
pub fn loss_base(h: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    let c = check_inputs(h, labels)?;
    let n = labels.len();
    let inv_n = 1.0 / n as f64;
    let mut dh = Matrix::zeros(n, c);
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let logits = h.row(r);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - logits[y];
        let g = dh.row_mut(r);
        g.copy_from_slice(logits);
        softmax_in_place(g);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok(LossOutput {
        loss: total * inv_n,
        dh,
        dhead: None,
        clamped: 0,
    })
}

/// Shared core of the linear-head losses: `−mean log [M σ(h)]_y` with
/// gradients for `h` and for `M`.
fn linear_head_loss(h: &Matrix, m: &Matrix, labels: &[usize], which: &str) -> Result<LossOutput> {
    let c = check_inputs(h, labels)?;
    check_square(m, c, which)?;
    let n = labels.len();
    let inv_n = 1.0 / n as f64;
    let mut dh = Matrix::zeros(n, c);
    let mut dm = Matrix::zeros(c, c);
    let mut total = 0.0;
    let mut clamped = 0;
    let mut probs = vec![0.0; c];
    let mut dp = vec![0.0; c];
    for (r, &y) in labels.iter().enumerate() {
        probs.copy_from_slice(h.row(r));
        softmax_in_place(&mut probs);
        let row_y = m.row(y);
        let z: f64 = row_y.iter().zip(&probs).map(|(a, p)| a * p).sum();
        if z < LOG_FLOOR {
            total -= LOG_FLOOR.ln();
            clamped += 1;
            continue;
        }
        total -= z.ln();
        let scale = -inv_n / z;
        for j in 0..c {
            dp[j] = scale * row_y[j];
        }
        for (d, p) in dm.row_mut(y).iter_mut().zip(&probs) {
            *d += scale * p;
        }
        softmax_backward(&probs, &dp, dh.row_mut(r));
    }
    warn_clamped(which, clamped, n);
    Ok(LossOutput {
        loss: total * inv_n,
        dh,
        dhead: Some(dm),
        clamped,
    })
}

/// Cross-entropy through the known noise matrix: `−mean log [Ψ σ(h)]_y`.
pub fn loss_true_noise(h: &Matrix, psi: &NoiseMatrix, labels: &[usize]) -> Result<LossOutput> {
    let mut out = linear_head_loss(h, psi.matrix(), labels, "true-noise loss")?;
    out.dhead = None;
    Ok(out)
}

/// `−mean log [Ψ̂ σ(h)]_y + λ tr(Ψ̂)`. The caller projects `Ψ̂` back onto the
/// column-stochastic matrices after every update.
pub fn loss_trace(h: &Matrix, psi_hat: &Matrix, labels: &[usize], lambda: f64) -> Result<LossOutput> {
    if !lambda.is_finite() {
        return Err(Error::invalid("trace penalty weight must be finite"));
    }
    let mut out = linear_head_loss(h, psi_hat, labels, "trace loss")?;
    out.loss += lambda * psi_hat.trace();
    if let Some(dm) = out.dhead.as_mut() {
        for i in 0..dm.rows() {
            dm.set(i, i, dm.get(i, i) + lambda);
        }
    }
    Ok(out)
}

/// `−mean log g_y` with `g = softmax(W (a ⊙ σ(h)))`; one mask `a` for the
/// whole batch, treated as a constant.
pub fn loss_softmax_dropout(
    h: &Matrix,
    head: &SoftmaxNoiseHead,
    labels: &[usize],
    mask: &[f64],
) -> Result<LossOutput> {
    let c = check_inputs(h, labels)?;
    check_square(&head.w, c, "noise head")?;
    if mask.len() != c {
        return Err(Error::shape(format!("mask has length {}, expected {c}", mask.len())));
    }
    if mask.iter().any(|&a| a != 0.0 && a != 1.0) {
        return Err(Error::invalid("mask entries must be 0 or 1"));
    }
    let n = labels.len();
    let inv_n = 1.0 / n as f64;
    let w = &head.w;
    let mut dh = Matrix::zeros(n, c);
    let mut dw = Matrix::zeros(c, c);
    let mut total = 0.0;
    let mut clamped = 0;
    let (mut probs, mut kept, mut g, mut dp) = (vec![0.0; c], vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    for (r, &y) in labels.iter().enumerate() {
        probs.copy_from_slice(h.row(r));
        softmax_in_place(&mut probs);
        for j in 0..c {
            kept[j] = mask[j] * probs[j];
        }
        for i in 0..c {
            g[i] = w.row(i).iter().zip(&kept).map(|(a, b)| a * b).sum();
        }
        softmax_in_place(&mut g);
        if g[y] < LOG_FLOOR {
            total -= LOG_FLOOR.ln();
            clamped += 1;
            continue;
        }
        total -= g[y].ln();
        // ∂/∂z of −log softmax(z)_y is softmax(z) − e_y.
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= inv_n);
        for i in 0..c {
            for (d, k) in dw.row_mut(i).iter_mut().zip(&kept) {
                *d += g[i] * k;
            }
        }
        for j in 0..c {
            dp[j] = mask[j] * (0..c).map(|i| w.get(i, j) * g[i]).sum::<f64>();
        }
        softmax_backward(&probs, &dp, dh.row_mut(r));
    }
    warn_clamped("dropout loss", clamped, n);
    Ok(LossOutput {
        loss: total * inv_n,
        dh,
        dhead: Some(dw),
        clamped,
    })
}
