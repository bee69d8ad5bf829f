use crate::error::{Error, Result};

use super::RngState;

/// Numerically stable softmax. Rejects empty or non-finite input.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("softmax input contains non-finite values"));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Softmax over a slice, in place, without input validation.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    v.iter_mut().for_each(|x| *x *= inv);
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Uniform draw from the unit simplex in `c` dimensions (flat Dirichlet),
/// built by normalising unit-rate exponentials.
pub fn sample_simplex(rng: &mut RngState, c: usize) -> Result<Vec<f64>> {
    if c == 0 {
        return Err(Error::invalid("simplex dimension must be at least 1"));
    }
    let mut draws: Vec<f64> = (0..c).map(|_| rng.exponential()).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|x| *x /= total);
    } else {
        draws.iter_mut().for_each(|x| *x = 1.0 / c as f64);
    }
    Ok(draws)
}

/// Mask of `len` independent Bernoulli(`keep_prob`) entries in {0, 1}.
/// A 1 keeps the corresponding coordinate.
pub fn bernoulli_mask(rng: &mut RngState, len: usize, keep_prob: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&keep_prob) {
        return Err(Error::invalid(format!(
            "keep probability {keep_prob} outside [0, 1]"
        )));
    }
    Ok((0..len)
        .map(|_| if rng.uniform() < keep_prob { 1.0 } else { 0.0 })
        .collect())
}

/// Draws an index with probability `probs[i]` by inverting the CDF.
pub fn sample_categorical(rng: &mut RngState, probs: &[f64]) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::invalid("empty categorical distribution"));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid("categorical probabilities must be finite and >= 0"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "categorical probabilities sum to {total}, not 1"
        )));
    }
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding left u at or above the final partial sum.
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
}
