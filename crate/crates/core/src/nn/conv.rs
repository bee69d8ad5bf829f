//! Per-sample kernels for convolution and pooling on CHW buffers.

use crate::math::Matrix;

use super::FeatureShape;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub input: FeatureShape,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: FeatureShape, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            input,
            kernel,
            stride,
            padding,
            out_h: (input.height + 2 * padding - kernel) / stride + 1,
            out_w: (input.width + 2 * padding - kernel) / stride + 1,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.input.channels * self.kernel * self.kernel
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input offset feeding patch row `r` at output position (oy, ox), or
    /// `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, r: usize, oy: usize, ox: usize) -> Option<usize> {
        let k2 = self.kernel * self.kernel;
        let (c, ki, kj) = (r / k2, (r % k2) / self.kernel, r % self.kernel);
        let y = (oy * self.stride + ki).checked_sub(self.padding)?;
        let x = (ox * self.stride + kj).checked_sub(self.padding)?;
        if y >= self.input.height || x >= self.input.width {
            return None;
        }
        Some((c * self.input.height + y) * self.input.width + x)
    }
}

/// Unfolds one CHW sample into a `patch_len × out_positions` matrix.
pub(crate) fn im2col(x: &[f64], g: &ConvGeometry, col: &mut Matrix) {
    let positions = g.out_positions();
    let data = col.as_mut_slice();
    for r in 0..g.patch_len() {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                data[r * positions + oy * g.out_w + ox] = g.source(r, oy, ox).map_or(0.0, |i| x[i]);
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the sample.
pub(crate) fn col2im_add(col: &Matrix, g: &ConvGeometry, dx: &mut [f64]) {
    let positions = g.out_positions();
    let data = col.as_slice();
    for r in 0..g.patch_len() {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                if let Some(i) = g.source(r, oy, ox) {
                    dx[i] += data[r * positions + oy * g.out_w + ox];
                }
            }
        }
    }
}

fn window_offsets(
    input: FeatureShape,
    size: usize,
    c: usize,
    oy: usize,
    ox: usize,
) -> impl Iterator<Item = usize> {
    (0..size).flat_map(move |dy| {
        (0..size).map(move |dx| (c * input.height + oy * size + dy) * input.width + ox * size + dx)
    })
}

pub(crate) fn max_pool_forward(x: &[f64], input: FeatureShape, size: usize, out: &mut [f64]) {
    let (oh, ow) = (input.height / size, input.width / size);
    for c in 0..input.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                out[(c * oh + oy) * ow + ox] = window_offsets(input, size, c, oy, ox)
                    .map(|i| x[i])
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }
}

/// Routes each output gradient to the first maximal input of its window.
pub(crate) fn max_pool_backward(
    x: &[f64],
    input: FeatureShape,
    size: usize,
    dout: &[f64],
    dx: &mut [f64],
) {
    let (oh, ow) = (input.height / size, input.width / size);
    for c in 0..input.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = None::<usize>;
                for i in window_offsets(input, size, c, oy, ox) {
                    if best.is_none_or(|b| x[i] > x[b]) {
                        best = Some(i);
                    }
                }
                if let Some(b) = best {
                    dx[b] += dout[(c * oh + oy) * ow + ox];
                }
            }
        }
    }
}

pub(crate) fn avg_pool_forward(x: &[f64], input: FeatureShape, size: usize, out: &mut [f64]) {
    let (oh, ow) = (input.height / size, input.width / size);
    let inv = 1.0 / (size * size) as f64;
    for c in 0..input.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                out[(c * oh + oy) * ow + ox] =
                    window_offsets(input, size, c, oy, ox).map(|i| x[i]).sum::<f64>() * inv;
            }
        }
    }
}

pub(crate) fn avg_pool_backward(input: FeatureShape, size: usize, dout: &[f64], dx: &mut [f64]) {
    let (oh, ow) = (input.height / size, input.width / size);
    let inv = 1.0 / (size * size) as f64;
    for c in 0..input.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dout[(c * oh + oy) * ow + ox] * inv;
                for i in window_offsets(input, size, c, oy, ox) {
                    dx[i] += g;
                }
            }
        }
    }
}
