use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sample_categorical, sample_simplex, Matrix, RngState};

/// Column-stochastic `c × c` matrix of label-flip probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct NoiseMatrix(Matrix);

impl TryFrom<Matrix> for NoiseMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        NoiseMatrix::new(m)
    }
}

impl From<NoiseMatrix> for Matrix {
    fn from(n: NoiseMatrix) -> Self {
        n.0
    }
}

impl NoiseMatrix {
    /// Allowed deviation of a column sum from 1.
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() || m.rows() == 0 {
            return Err(Error::shape(format!(
                "noise matrix must be square and non-empty, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if let Some(v) = m.as_slice().iter().find(|&&v| v < 0.0) {
            return Err(Error::invalid(format!("negative noise probability {v}")));
        }
        for j in 0..m.cols() {
            let sum: f64 = m.column(j).iter().sum();
            if (sum - 1.0).abs() > Self::TOLERANCE {
                return Err(Error::invalid(format!("column {j} sums to {sum}, not 1")));
            }
        }
        Ok(NoiseMatrix(m))
    }

    pub fn identity(c: usize) -> Self {
        NoiseMatrix(Matrix::identity(c))
    }

    /// `(1 - p) I + (p / c) 1 1ᵀ`: keep the label with probability `1 - p`,
    /// otherwise redraw it uniformly over all `c` classes.
    pub fn uniform(c: usize, p: f64) -> Result<Self> {
        check_level(c, p)?;
        let off = p / c as f64;
        Ok(NoiseMatrix(Matrix::from_fn(c, c, |i, j| {
            if i == j {
                1.0 - p + off
            } else {
                off
            }
        })))
    }

    /// `(1 - p) I + p Δ` with every column of `Δ` drawn uniformly from the
    /// unit simplex. Returns `Δ` alongside so it can be logged.
    pub fn non_uniform(c: usize, p: f64, rng: &mut RngState) -> Result<(Self, Matrix)> {
        check_level(c, p)?;
        let mut delta = Matrix::zeros(c, c);
        for j in 0..c {
            delta.set_column(j, &sample_simplex(rng, c)?);
        }
        let psi = Matrix::from_fn(c, c, |i, j| {
            let keep = if i == j { 1.0 - p } else { 0.0 };
            keep + p * delta.get(i, j)
        });
        Ok((NoiseMatrix(psi), delta))
    }

    pub fn classes(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn get(&self, noisy: usize, true_label: usize) -> f64 {
        self.0.get(noisy, true_label)
    }

    /// Distribution of the noisy label given true label `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.0.column(j)
    }
}

fn check_level(c: usize, p: f64) -> Result<()> {
    if c < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {c}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("noise level {p} outside [0, 1]")));
    }
    Ok(())
}

/// Mean of the diagonal: the average probability that a label survives.
pub fn average_diagonal(psi: &NoiseMatrix) -> f64 {
    let d = psi.matrix().diagonal();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Parametric noise family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily {
    Uniform,
    /// The seed fixes `Δ` for one instantiation of the noisy training set.
    NonUniform { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub family: NoiseFamily,
    pub p: f64,
}

/// A constructed noise matrix plus the simplex draws behind it (non-uniform only).
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltNoise {
    pub psi: NoiseMatrix,
    pub delta: Option<Matrix>,
}

impl NoiseSpec {
    pub fn uniform(p: f64) -> Self {
        NoiseSpec {
            family: NoiseFamily::Uniform,
            p,
        }
    }

    pub fn non_uniform(p: f64, seed: u64) -> Self {
        NoiseSpec {
            family: NoiseFamily::NonUniform { seed },
            p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid(format!("noise level {} outside [0, 1]", self.p)));
        }
        Ok(())
    }

    pub fn build(&self, classes: usize) -> Result<BuiltNoise> {
        match self.family {
            NoiseFamily::Uniform => Ok(BuiltNoise {
                psi: NoiseMatrix::uniform(classes, self.p)?,
                delta: None,
            }),
            NoiseFamily::NonUniform { seed } => {
                let mut rng = RngState::stream(seed, crate::math::Stream::NoiseMatrix);
                let (psi, delta) = NoiseMatrix::non_uniform(classes, self.p, &mut rng)?;
                Ok(BuiltNoise {
                    psi,
                    delta: Some(delta),
                })
            }
        }
    }
}

/// Draws every noisy label independently from the column of `psi` selected
/// by its true label.
pub fn corrupt_labels(labels: &[usize], psi: &NoiseMatrix, rng: &mut RngState) -> Result<Vec<usize>> {
    let c = psi.classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let columns: Vec<Vec<f64>> = (0..c).map(|j| psi.column(j)).collect();
    labels
        .iter()
        .map(|&y| sample_categorical(rng, &columns[y]))
        .collect()
}
