use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, gemm, Matrix, RngState, Transpose};

use super::conv::{self, ConvGeometry};
use super::{Architecture, FeatureShape, LayerSpec};

/// Weights and biases of one dense or convolutional layer.
///
/// Dense weights are `outputs × inputs`; convolution weights are
/// `out_channels × (in_channels·k·k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros_like(&self) -> Self {
        LayerParams {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

/// All trainable base-model parameters, one slot per layer (`None` for
/// parameter-free layers).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<Option<LayerParams>>,
    /// Number of SGD steps applied so far. Forward caches record it so a
    /// cache cannot be replayed against updated parameters.
    pub step: u64,
}

impl NetworkParams {
    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|p| p.weight.as_slice().len() + p.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weight before bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for p in self.layers.iter().flatten() {
            out.extend_from_slice(p.weight.as_slice());
            out.extend_from_slice(&p.bias);
        }
        out
    }

    /// Overwrites parameters from the layout produced by [`to_flat`](Self::to_flat).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in self.layers.iter_mut().flatten() {
            let w = p.weight.as_mut_slice();
            w.copy_from_slice(&flat[offset..offset + w.len()]);
            offset += w.len();
            let n = p.bias.len();
            p.bias.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Gradient with the same layout as [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerParams>>,
}

impl Gradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.layers.iter().flatten() {
            out.extend_from_slice(p.weight.as_slice());
            out.extend_from_slice(&p.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(LayerParams::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations saved by [`Network::forward`] for one mini-batch.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    step: u64,
    /// Input to every layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

/// A validated architecture with precomputed activation shapes.
#[derive(Clone, Debug)]
pub struct Network {
    arch: Architecture,
    shapes: Vec<FeatureShape>,
}

impl Network {
    pub fn new(arch: Architecture) -> Result<Self> {
        let shapes = arch.shapes()?;
        Ok(Network { arch, shapes })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_len(&self) -> usize {
        self.shapes[0].len()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().map_or(0, FeatureShape::len)
    }

    /// He initialisation: weights ~ N(0, 2 / fan-in), zero biases.
    pub fn init(&self, rng: &mut RngState) -> NetworkParams {
        let layers = self
            .arch
            .layers
            .iter()
            .map(|layer| {
                layer.weight_shape().map(|(rows, fan_in)| {
                    let std = (2.0 / fan_in as f64).sqrt();
                    LayerParams {
                        weight: Matrix::from_fn(rows, fan_in, |_, _| std * rng.standard_normal()),
                        bias: vec![0.0; rows],
                    }
                })
            })
            .collect();
        NetworkParams { layers, step: 0 }
    }

    pub fn zero_params(&self) -> NetworkParams {
        let layers = self
            .arch
            .layers
            .iter()
            .map(|layer| {
                layer.weight_shape().map(|(rows, cols)| LayerParams {
                    weight: Matrix::zeros(rows, cols),
                    bias: vec![0.0; rows],
                })
            })
            .collect();
        NetworkParams { layers, step: 0 }
    }

    fn check_params(&self, params: &NetworkParams) -> Result<()> {
        if params.layers.len() != self.arch.layers.len() {
            return Err(Error::shape(format!(
                "parameters cover {} layers, architecture has {}",
                params.layers.len(),
                self.arch.layers.len()
            )));
        }
        for (i, (layer, p)) in self.arch.layers.iter().zip(&params.layers).enumerate() {
            let ok = match (layer.weight_shape(), p) {
                (Some((r, c)), Some(p)) => {
                    p.weight.rows() == r && p.weight.cols() == c && p.bias.len() == r
                }
                (None, None) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::shape(format!("parameters of layer {i} do not match {layer:?}")));
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_len() {
            return Err(Error::shape(format!(
                "network expects inputs of length {}, batch has {}",
                self.input_len(),
                batch.cols()
            )));
        }
        Ok(())
    }

    /// Logits `h` (one row per sample, no softmax) and the cache needed by
    /// [`backward`](Self::backward).
    pub fn forward(&self, params: &NetworkParams, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let mut inputs = Vec::with_capacity(self.arch.layers.len());
        let mut current = batch.clone();
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let next = self.layer_forward(i, layer, params.layers[i].as_ref(), &current);
            inputs.push(current);
            current = next;
        }
        Ok((
            current,
            ForwardCache {
                step: params.step,
                inputs,
            },
        ))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn infer(&self, params: &NetworkParams, batch: &Matrix) -> Result<Matrix> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let mut current = batch.clone();
        for (i, layer) in self.arch.layers.iter().enumerate() {
            current = self.layer_forward(i, layer, params.layers[i].as_ref(), &current);
        }
        Ok(current)
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// loss gradient `dh` with respect to the logits of the cached batch.
    pub fn backward(
        &self,
        params: &NetworkParams,
        cache: &ForwardCache,
        dh: &Matrix,
    ) -> Result<Gradients> {
        self.check_params(params)?;
        if cache.step != params.step || cache.inputs.len() != self.arch.layers.len() {
            return Err(Error::Contract(format!(
                "forward cache from step {} used with parameters at step {}",
                cache.step, params.step
            )));
        }
        if dh.rows() != cache.batch_size() || dh.cols() != self.output_len() {
            return Err(Error::Contract(format!(
                "logit gradient is {}x{}, cached batch is {}x{}",
                dh.rows(),
                dh.cols(),
                cache.batch_size(),
                self.output_len()
            )));
        }
        let mut grads: Vec<Option<LayerParams>> = vec![None; self.arch.layers.len()];
        let mut upstream = dh.clone();
        for (i, layer) in self.arch.layers.iter().enumerate().rev() {
            let (dx, g) = self.layer_backward(
                i,
                layer,
                params.layers[i].as_ref(),
                &cache.inputs[i],
                &upstream,
                i > 0,
            );
            grads[i] = g;
            if let Some(dx) = dx {
                upstream = dx;
            }
        }
        Ok(Gradients { layers: grads })
    }

    /// Class with the largest base-model probability (lowest index on ties).
    pub fn predict(&self, params: &NetworkParams, image: &[f64]) -> Result<usize> {
        let batch = Matrix::new(1, image.len(), image.to_vec())?;
        Ok(self.predict_batch(params, &batch)?[0])
    }

    pub fn predict_batch(&self, params: &NetworkParams, batch: &Matrix) -> Result<Vec<usize>> {
        let h = self.infer(params, batch)?;
        Ok((0..h.rows()).map(|r| argmax(h.row(r))).collect())
    }

    fn layer_forward(
        &self,
        index: usize,
        layer: &LayerSpec,
        params: Option<&LayerParams>,
        x: &Matrix,
    ) -> Matrix {
        let (in_shape, out_shape) = (self.shapes[index], self.shapes[index + 1]);
        let n = x.rows();
        match *layer {
            LayerSpec::Dense { outputs, .. } => {
                let p = params.expect("dense layer has parameters");
                let mut out = Matrix::zeros(n, outputs);
                for r in 0..n {
                    out.row_mut(r).copy_from_slice(&p.bias);
                }
                gemm(1.0, x, Transpose::No, &p.weight, Transpose::Yes, 1.0, &mut out);
                out
            }
            LayerSpec::Relu => x.map(|v| v.max(0.0)),
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let p = params.expect("conv layer has parameters");
                let g = ConvGeometry::new(in_shape, kernel, stride, padding);
                let mut col = Matrix::zeros(g.patch_len(), g.out_positions());
                let mut y = Matrix::zeros(p.weight.rows(), g.out_positions());
                let mut out = Matrix::zeros(n, out_shape.len());
                for s in 0..n {
                    conv::im2col(x.row(s), &g, &mut col);
                    gemm(1.0, &p.weight, Transpose::No, &col, Transpose::No, 0.0, &mut y);
                    let row = out.row_mut(s);
                    for (o, b) in p.bias.iter().enumerate() {
                        let positions = g.out_positions();
                        for (dst, src) in row[o * positions..(o + 1) * positions]
                            .iter_mut()
                            .zip(y.row(o))
                        {
                            *dst = src + b;
                        }
                    }
                }
                out
            }
            LayerSpec::MaxPool2x2 | LayerSpec::AvgPool { .. } => {
                let mut out = Matrix::zeros(n, out_shape.len());
                for s in 0..n {
                    match *layer {
                        LayerSpec::MaxPool2x2 => {
                            conv::max_pool_forward(x.row(s), in_shape, 2, out.row_mut(s))
                        }
                        LayerSpec::AvgPool { size } => {
                            conv::avg_pool_forward(x.row(s), in_shape, size, out.row_mut(s))
                        }
                        _ => unreachable!(),
                    }
                }
                out
            }
            LayerSpec::Flatten => x.clone(),
        }
    }

    /// Returns the gradient with respect to the layer input (when
    /// `need_input_grad`) and the parameter gradient.
    fn layer_backward(
        &self,
        index: usize,
        layer: &LayerSpec,
        params: Option<&LayerParams>,
        x: &Matrix,
        dy: &Matrix,
        need_input_grad: bool,
    ) -> (Option<Matrix>, Option<LayerParams>) {
        let in_shape = self.shapes[index];
        let n = x.rows();
        match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let p = params.expect("dense layer has parameters");
                let mut dw = Matrix::zeros(outputs, inputs);
                gemm(1.0, dy, Transpose::Yes, x, Transpose::No, 0.0, &mut dw);
                let mut db = vec![0.0; outputs];
                for r in 0..n {
                    for (acc, g) in db.iter_mut().zip(dy.row(r)) {
                        *acc += g;
                    }
                }
                let dx = need_input_grad.then(|| {
                    let mut dx = Matrix::zeros(n, inputs);
                    gemm(1.0, dy, Transpose::No, &p.weight, Transpose::No, 0.0, &mut dx);
                    dx
                });
                (dx, Some(LayerParams { weight: dw, bias: db }))
            }
            LayerSpec::Relu => {
                let mut dx = dy.clone();
                for (g, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                (Some(dx), None)
            }
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let p = params.expect("conv layer has parameters");
                let g = ConvGeometry::new(in_shape, kernel, stride, padding);
                let positions = g.out_positions();
                let out_channels = p.weight.rows();
                let mut grad = p.zeros_like();
                let mut col = Matrix::zeros(g.patch_len(), positions);
                let mut dcol = Matrix::zeros(g.patch_len(), positions);
                let mut dx = need_input_grad.then(|| Matrix::zeros(n, in_shape.len()));
                for s in 0..n {
                    let dy_s = Matrix::new(out_channels, positions, dy.row(s).to_vec())
                        .expect("upstream gradient is finite");
                    conv::im2col(x.row(s), &g, &mut col);
                    gemm(1.0, &dy_s, Transpose::No, &col, Transpose::Yes, 1.0, &mut grad.weight);
                    for (o, b) in grad.bias.iter_mut().enumerate() {
                        *b += dy_s.row(o).iter().sum::<f64>();
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(1.0, &p.weight, Transpose::Yes, &dy_s, Transpose::No, 0.0, &mut dcol);
                        conv::col2im_add(&dcol, &g, dx.row_mut(s));
                    }
                }
                (dx, Some(grad))
            }
            LayerSpec::MaxPool2x2 | LayerSpec::AvgPool { .. } => {
                let mut dx = Matrix::zeros(n, in_shape.len());
                for s in 0..n {
                    match *layer {
                        LayerSpec::MaxPool2x2 => {
                            conv::max_pool_backward(x.row(s), in_shape, 2, dy.row(s), dx.row_mut(s))
                        }
                        LayerSpec::AvgPool { size } => {
                            conv::avg_pool_backward(in_shape, size, dy.row(s), dx.row_mut(s))
                        }
                        _ => unreachable!(),
                    }
                }
                (Some(dx), None)
            }
            LayerSpec::Flatten => (Some(dy.clone()), None),
        }
    }
}

/// Plain SGD update `θ ← θ − lr·∇θ`.
///
/// A non-finite gradient aborts with [`Error::Divergence`] before any
/// parameter is touched; the reported step is the index of the failed update.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, lr: f64) -> Result<()> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::invalid(format!("learning rate {lr} must be finite and >= 0")));
    }
    if grads.layers.len() != params.layers.len() {
        return Err(Error::shape("gradient layout does not match parameters"));
    }
    for (p, g) in params.layers.iter().zip(&grads.layers) {
        match (p, g) {
            (Some(p), Some(g))
                if p.weight.rows() == g.weight.rows()
                    && p.weight.cols() == g.weight.cols()
                    && p.bias.len() == g.bias.len() => {}
            (None, None) => {}
            _ => return Err(Error::shape("gradient layout does not match parameters")),
        }
    }
    if !grads.is_finite() {
        return Err(Error::Divergence {
            step: params.step,
            detail: "non-finite gradient".into(),
        });
    }
    for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
        if let (Some(p), Some(g)) = (p, g) {
            p.weight.axpy(-lr, &g.weight)?;
            for (b, d) in p.bias.iter_mut().zip(&g.bias) {
                *b -= lr * d;
            }
        }
    }
    params.step += 1;
    Ok(())
}
