use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{softmax, Matrix};

use super::NoiseMatrix;

/// Softmax noise-adaptation layer: `g = softmax(W (a ⊙ p))`, where `p` is
/// the base-model output distribution and `a` a {0, 1} keep-mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxNoiseHead {
    /// Unconstrained `c × c` weights.
    pub w: Matrix,
    /// Probability that a mask entry is 1 (kept).
    pub keep_prob: f64,
}

impl SoftmaxNoiseHead {
    /// Zero weights: the equivalent noise matrix starts uniform.
    pub fn new(classes: usize, keep_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&keep_prob) {
            return Err(Error::invalid(format!("keep probability {keep_prob} outside [0, 1]")));
        }
        Ok(SoftmaxNoiseHead {
            w: Matrix::zeros(classes, classes),
            keep_prob,
        })
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    fn check(&self, base_probs: &[f64], mask: &[f64]) -> Result<()> {
        let c = self.classes();
        if !self.w.is_square() || base_probs.len() != c || mask.len() != c {
            return Err(Error::shape(format!(
                "head is {}x{}, base probabilities {} long, mask {} long",
                self.w.rows(),
                self.w.cols(),
                base_probs.len(),
                mask.len()
            )));
        }
        if mask.iter().any(|&a| a != 0.0 && a != 1.0) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        Ok(())
    }

    pub fn equivalent_noise(&self) -> Result<NoiseMatrix> {
        extract_equivalent_noise(&self.w)
    }
}

/// Noisy-label distribution produced by the head for one sample.
pub fn noise_head_forward(
    head: &SoftmaxNoiseHead,
    base_probs: &[f64],
    mask: &[f64],
) -> Result<Vec<f64>> {
    head.check(base_probs, mask)?;
    let masked: Vec<f64> = base_probs.iter().zip(mask).map(|(p, a)| p * a).collect();
    softmax(&head.w.matvec(&masked)?)
}

/// Gradients of a scalar loss with respect to `W` and to the base
/// probabilities, given its gradient `dl_dg` with respect to the head
/// output. The mask is a constant.
pub fn noise_head_backward(
    head: &SoftmaxNoiseHead,
    base_probs: &[f64],
    mask: &[f64],
    dl_dg: &[f64],
) -> Result<(Matrix, Vec<f64>)> {
    if dl_dg.len() != head.classes() {
        return Err(Error::Contract(format!(
            "output gradient has length {}, head has {} classes",
            dl_dg.len(),
            head.classes()
        )));
    }
    head.check(base_probs, mask)
        .map_err(|e| Error::Contract(format!("backward context does not match forward: {e}")))?;
    let g = noise_head_forward(head, base_probs, mask)?;
    let masked: Vec<f64> = base_probs.iter().zip(mask).map(|(p, a)| p * a).collect();

    // Softmax Jacobian-vector product: dz = g ⊙ (dg − ⟨dg, g⟩).
    let inner: f64 = dl_dg.iter().zip(&g).map(|(d, gi)| d * gi).sum();
    let dz: Vec<f64> = g.iter().zip(dl_dg).map(|(gi, d)| gi * (d - inner)).collect();

    let c = head.classes();
    let dw = Matrix::from_fn(c, c, |i, j| dz[i] * masked[j]);
    let d_probs = (0..c)
        .map(|j| mask[j] * (0..c).map(|i| head.w.get(i, j) * dz[i]).sum::<f64>())
        .collect();
    Ok((dw, d_probs))
}

/// Noise matrix implied by softmax weights: column `j` is `softmax(W e_j)`.
pub fn extract_equivalent_noise(w: &Matrix) -> Result<NoiseMatrix> {
    if !w.is_square() {
        return Err(Error::shape(format!("expected square weights, got {}x{}", w.rows(), w.cols())));
    }
    if !w.is_finite() {
        return Err(Error::invalid("weights contain non-finite entries"));
    }
    let mut out = Matrix::zeros(w.rows(), w.cols());
    for j in 0..w.cols() {
        out.set_column(j, &softmax(&w.column(j))?);
    }
    NoiseMatrix::new(out)
}

/// Linear noise layer `Ψ · p`. The result stays on the simplex whenever `p`
/// does, so no renormalisation is applied.
pub fn apply_fixed_linear_head(psi: &NoiseMatrix, base_probs: &[f64]) -> Result<Vec<f64>> {
    psi.matrix().matvec(base_probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{bernoulli_mask, sample_simplex, RngState};
    use proptest::prelude::*;

    fn log_with_shifts(psi: &NoiseMatrix, shifts: &[f64]) -> Matrix {
        let c = psi.classes();
        Matrix::from_fn(c, c, |i, j| psi.get(i, j).max(1e-12).ln() + shifts[j])
    }

    #[test]
    fn zero_weights_or_zero_mask_give_uniform_output() {
        let c = 5;
        let head = SoftmaxNoiseHead::new(c, 0.1).unwrap();
        let p = sample_simplex(&mut RngState::new(0), c).unwrap();
        let g = noise_head_forward(&head, &p, &[1.0; 5]).unwrap();
        assert!(g.iter().all(|&x| (x - 0.2).abs() < 1e-15));

        let mut head = head;
        head.w = Matrix::from_fn(c, c, |i, j| (i * 3 + j) as f64 * 0.7 - 4.0);
        let g = noise_head_forward(&head, &p, &[0.0; 5]).unwrap();
        assert!(g.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn full_mask_matches_straight_line_computation() {
        let psi = NoiseMatrix::uniform(4, 0.3).unwrap();
        let head = SoftmaxNoiseHead {
            w: log_with_shifts(&psi, &[0.0; 4]).map(|v| 8.0 * v),
            keep_prob: 1.0,
        };
        let p = [0.1, 0.2, 0.3, 0.4];
        let g = noise_head_forward(&head, &p, &[1.0; 4]).unwrap();
        let mut z = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                z[i] += head.w.get(i, j) * p[j];
            }
        }
        let norm: f64 = z.iter().map(|v| v.exp()).sum();
        for i in 0..4 {
            assert!((g[i] - z[i].exp() / norm).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_and_contract_errors() {
        let head = SoftmaxNoiseHead::new(3, 0.5).unwrap();
        assert!(matches!(
            noise_head_forward(&head, &[0.5, 0.5], &[1.0, 1.0, 1.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            noise_head_backward(&head, &[0.3, 0.3, 0.4], &[1.0, 1.0], &[0.0; 3]),
            Err(Error::Contract(_))
        ));
        assert!(SoftmaxNoiseHead::new(3, 1.1).is_err());
    }

    #[test]
    fn zero_upstream_and_masked_coordinates() {
        let mut rng = RngState::new(1);
        let c = 6;
        let head = SoftmaxNoiseHead {
            w: Matrix::from_fn(c, c, |_, _| rng.standard_normal()),
            keep_prob: 0.5,
        };
        let p = sample_simplex(&mut rng, c).unwrap();
        let mask = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let (dw, dp) = noise_head_backward(&head, &p, &mask, &[0.0; 6]).unwrap();
        assert_eq!(dw.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
        assert!(dp.iter().all(|&v| v == 0.0));

        let dg: Vec<f64> = (0..c).map(|_| rng.standard_normal()).collect();
        let (_, dp) = noise_head_backward(&head, &p, &mask, &dg).unwrap();
        for j in [1, 3, 4] {
            assert_eq!(dp[j], 0.0);
        }
    }

    #[test]
    fn extract_examples() {
        let uniform = extract_equivalent_noise(&Matrix::zeros(10, 10)).unwrap();
        assert!(uniform.matrix().as_slice().iter().all(|&v| (v - 0.1).abs() < 1e-15));
        assert!(extract_equivalent_noise(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn fixed_linear_head_examples() {
        let p = [0.1, 0.6, 0.3];
        assert_eq!(apply_fixed_linear_head(&NoiseMatrix::identity(3), &p).unwrap(), p.to_vec());
        let flat = NoiseMatrix::new(Matrix::filled(3, 3, 1.0 / 3.0)).unwrap();
        let out = apply_fixed_linear_head(&flat, &p).unwrap();
        assert!(out.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(apply_fixed_linear_head(&flat, &[0.5, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn log_then_extract_recovers_psi(seed in any::<u64>(), c in 2usize..10, p in 0.05f64..0.95) {
            let mut rng = RngState::new(seed);
            let (psi, _) = NoiseMatrix::non_uniform(c, p, &mut rng).unwrap();
            // Strictly interior matrices only: mix in a little of the uniform matrix.
            let interior = NoiseMatrix::new(Matrix::from_fn(c, c, |i, j| 0.99 * psi.get(i, j) + 0.01 / c as f64)).unwrap();
            let shifts: Vec<f64> = (0..c).map(|_| 10.0 * rng.standard_normal()).collect();
            let back = extract_equivalent_noise(&log_with_shifts(&interior, &shifts)).unwrap();
            prop_assert!(back.matrix().max_abs_diff(interior.matrix()) < 1e-10);
        }

        #[test]
        fn linear_head_preserves_simplex(seed in any::<u64>(), c in 2usize..12) {
            let mut rng = RngState::new(seed);
            let (psi, _) = NoiseMatrix::non_uniform(c, rng.uniform(), &mut rng).unwrap();
            let p = sample_simplex(&mut rng, c).unwrap();
            let out = apply_fixed_linear_head(&psi, &p).unwrap();
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(out.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn head_output_on_simplex(seed in any::<u64>()) {
            let mut rng = RngState::new(seed);
            let c = 7;
            let head = SoftmaxNoiseHead { w: Matrix::from_fn(c, c, |_, _| 3.0 * rng.standard_normal()), keep_prob: 0.3 };
            let p = sample_simplex(&mut rng, c).unwrap();
            let mask = bernoulli_mask(&mut rng, c, 0.3).unwrap();
            let g = noise_head_forward(&head, &p, &mask).unwrap();
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
