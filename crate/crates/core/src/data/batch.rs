use crate::error::{Error, Result};
use crate::math::{Matrix, RngState};

/// One epoch of mini-batches over `0..len`: a single shuffle, consecutive
/// chunks of `batch_size`, with the final short batch kept.
pub fn batches(len: usize, batch_size: usize, rng: &mut RngState) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Copies the rows at `indices` into a new matrix.
pub fn gather_rows(m: &Matrix, indices: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(indices.len(), m.cols());
    for (dst, &src) in indices.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(m.row(src));
    }
    out
}
