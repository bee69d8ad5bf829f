use crate::error::{Error, Result};
use crate::math::{Matrix, RngState};
use crate::nn::FeatureShape;

use super::{DatasetMeta, LabeledDataset, Role};

/// Centre of cluster `k`. With `d ≥ c` the centres are scaled basis
/// vectors, pairwise `separation` apart; otherwise they sit on the first
/// axis, consecutive centres `separation` apart. Centres depend only on
/// `(c, d, separation)`, so train and test draws share them.
pub(crate) fn blob_centre(k: usize, c: usize, d: usize, separation: f64) -> Vec<f64> {
    let mut centre = vec![0.0; d];
    if d >= c {
        centre[k] = separation / std::f64::consts::SQRT_2;
    } else {
        centre[0] = separation * (k as f64 - (c - 1) as f64 / 2.0);
    }
    centre
}

/// `n` samples from `c` unit-variance Gaussian clusters in `d` dimensions.
/// Sample `i` belongs to cluster `i mod c`, so classes are balanced.
pub fn make_synthetic_blobs<R: Role>(
    rng: &mut RngState,
    n: usize,
    c: usize,
    d: usize,
    separation: f64,
) -> Result<LabeledDataset<R>> {
    if c < 2 || n < c || d == 0 {
        return Err(Error::invalid(format!(
            "blobs need c >= 2, n >= c and d >= 1 (got n={n}, c={c}, d={d})"
        )));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation {separation} must be positive")));
    }
    let centres: Vec<Vec<f64>> = (0..c).map(|k| blob_centre(k, c, d, separation)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let images = Matrix::from_fn(n, d, |i, j| centres[labels[i]][j] + rng.standard_normal());
    let mut meta = DatasetMeta::new(format!("blobs(c={c}, d={d}, sep={separation})"), c);
    meta.preprocessing.push(format!("synthetic, seed {}", rng.seed()));
    LabeledDataset::new(FeatureShape::flat(d), images, labels, meta)
}
