use crate::error::{Error, Result};

use super::Matrix;

/// Euclidean projection of `v` onto the unit simplex (sort-and-threshold).
///
/// Sorts a copy in decreasing order, finds the largest support size `rho`
/// for which the shifted entry stays positive, then clamps `v - theta` at 0.
pub fn project_to_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("projection input contains non-finite values"));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    Ok(v.iter().map(|&x| (x - theta).max(0.0)).collect())
}

/// Projects every column of a square matrix onto the unit simplex, giving a
/// column-stochastic matrix.
pub fn project_columns_to_simplex(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::shape(format!(
            "expected a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::invalid("matrix contains non-finite entries"));
    }
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for c in 0..m.cols() {
        out.set_column(c, &project_to_simplex(&m.column(c))?);
    }
    Ok(out)
}
