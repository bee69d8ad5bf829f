//! Independent reference computations for the integration tests. Nothing
//! here calls the library routine it is used to check.

#![allow(dead_code)]

use std::io::Write;
use std::path::PathBuf;

/// Central differences, written out separately from the library harness.
pub fn numeric_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[i] += h;
        down[i] -= h;
        out.push((f(&up) - f(&down)) / (2.0 * h));
    }
    out
}

pub fn worst_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Euclidean projection onto the simplex by trying every support set: on a
/// support `S` the minimiser is `v_S − (Σv_S − 1)/|S|`; keep the feasible
/// candidate closest to `v`.
pub fn brute_force_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    assert!(n < 20);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for support in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|&i| support & (1 << i) != 0).collect();
        let shift = (members.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / members.len() as f64;
        let mut x = vec![0.0; n];
        for &i in &members {
            x[i] = v[i] - shift;
        }
        if x.iter().any(|&e| e < 0.0) {
            continue;
        }
        let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    }
    best.expect("some support is always feasible").1
}

fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Rows of `h` (row-major, `c` columns) pushed through `probs_to_out`, then
/// `−mean log out[y]`.
fn mean_nll(h: &[f64], c: usize, labels: &[usize], probs_to_out: &dyn Fn(&[f64]) -> Vec<f64>) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let out = probs_to_out(&naive_softmax(&h[r * c..(r + 1) * c]));
        total -= out[y].max(1e-12).ln();
    }
    total / n as f64
}

pub fn base_loss(h: &[f64], c: usize, labels: &[usize]) -> f64 {
    mean_nll(h, c, labels, &|p| p.to_vec())
}

/// `m` row-major `c × c`; output `m · σ(h)`.
pub fn linear_head_loss(h: &[f64], c: usize, m: &[f64], labels: &[usize]) -> f64 {
    mean_nll(h, c, labels, &|p| {
        (0..c).map(|i| (0..c).map(|j| m[i * c + j] * p[j]).sum()).collect()
    })
}

/// `softmax(W (a ⊙ σ(h)))`.
pub fn softmax_head_loss(h: &[f64], c: usize, w: &[f64], mask: &[f64], labels: &[usize]) -> f64 {
    mean_nll(h, c, labels, &|p| {
        let z: Vec<f64> = (0..c).map(|i| (0..c).map(|j| w[i * c + j] * mask[j] * p[j]).sum()).collect();
        naive_softmax(&z)
    })
}

/// `counts[i][j]/n_j`: fraction of true-class-`j` samples labelled `i`.
pub fn empirical_confusion(true_labels: &[usize], noisy: &[usize], c: usize) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0usize; c]; c];
    let mut per_class = vec![0usize; c];
    for (&t, &y) in true_labels.iter().zip(noisy) {
        counts[y][t] += 1;
        per_class[t] += 1;
    }
    (0..c)
        .map(|i| (0..c).map(|j| counts[i][j] as f64 / per_class[j].max(1) as f64).collect())
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Dataset root: `$NOISYLAB_DATA_DIR`, else `data/` at the workspace root.
pub fn data_root() -> PathBuf {
    std::env::var_os("NOISYLAB_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// Writes straight to the process stdout so the line shows up even when the
/// test harness captures output.
pub fn report_line(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}
