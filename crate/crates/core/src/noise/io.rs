//! Text and image serialisation of noise matrices.
//!
//! CSV: one matrix row per line, comma-separated, each entry printed with
//! 17 significant digits (`{:.16e}`) so it parses back bit-exactly.
//! PGM: binary 8-bit greymap (`P5`), entry value scaled linearly so that 0
//! is black and the largest entry is white.

use crate::error::{Error, Result};
use crate::math::Matrix;

pub fn to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn from_csv(text: &str) -> Result<Matrix> {
    let rows = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|e| {
                        Error::format("matrix csv", format!("line {}: {cell:?}: {e}", i + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows).map_err(|e| Error::format("matrix csv", e.to_string()))
}

/// Heatmap with every entry drawn as a `cell × cell` block of pixels.
pub fn to_pgm(m: &Matrix, cell: usize) -> Vec<u8> {
    let cell = cell.max(1);
    let max = m.as_slice().iter().copied().fold(0.0f64, f64::max);
    let level = |v: f64| -> u8 {
        if max <= 0.0 {
            0
        } else {
            (255.0 * (v.max(0.0) / max)).round().clamp(0.0, 255.0) as u8
        }
    };
    let (width, height) = (m.cols() * cell, m.rows() * cell);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.reserve(width * height);
    for r in 0..m.rows() {
        let line: Vec<u8> = m
            .row(r)
            .iter()
            .flat_map(|&v| std::iter::repeat_n(level(v), cell))
            .collect();
        for _ in 0..cell {
            out.extend_from_slice(&line);
        }
    }
    out
}
