use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-major shape of the activations flowing between layers.
/// Fully-connected activations are `channels × 1 × 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub fn flat(len: usize) -> Self {
        FeatureShape {
            channels: len,
            height: 1,
            width: 1,
        }
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        FeatureShape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_flat(&self) -> bool {
        self.height == 1 && self.width == 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[serde(rename = "maxpool2x2")]
    MaxPool2x2,
    /// Non-overlapping average pooling with a `size × size` window.
    AvgPool {
        size: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// Shape of the weight matrix (rows, cols) and the fan-in used for
    /// initialisation, for layers with parameters.
    pub(crate) fn weight_shape(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => Some((outputs, inputs)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((out_channels, in_channels * kernel * kernel)),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: FeatureShape) -> Result<FeatureShape> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if !input.is_flat() {
                    return Err(Error::shape(format!(
                        "dense layer needs a flat input, got {input:?} (insert a flatten layer)"
                    )));
                }
                if input.len() != inputs {
                    return Err(Error::shape(format!(
                        "dense layer expects {inputs} inputs, previous layer yields {}",
                        input.len()
                    )));
                }
                if outputs == 0 {
                    return Err(Error::shape("dense layer with zero outputs"));
                }
                Ok(FeatureShape::flat(outputs))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.channels != in_channels {
                    return Err(Error::shape(format!(
                        "conv2d expects {in_channels} channels, got {}",
                        input.channels
                    )));
                }
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err(Error::shape("conv2d kernel, stride and channels must be positive"));
                }
                let (h, w) = (input.height + 2 * padding, input.width + 2 * padding);
                if h < kernel || w < kernel {
                    return Err(Error::shape(format!(
                        "conv2d kernel {kernel} larger than padded input {h}x{w}"
                    )));
                }
                Ok(FeatureShape::image(
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ))
            }
            LayerSpec::MaxPool2x2 => pooled(input, 2),
            LayerSpec::AvgPool { size } => pooled(input, size),
            LayerSpec::Flatten => Ok(FeatureShape::flat(input.len())),
        }
    }
}

fn pooled(input: FeatureShape, size: usize) -> Result<FeatureShape> {
    if size == 0 || input.height < size || input.width < size {
        return Err(Error::shape(format!(
            "pool window {size} does not fit input {}x{}",
            input.height, input.width
        )));
    }
    Ok(FeatureShape::image(
        input.channels,
        input.height / size,
        input.width / size,
    ))
}

/// Input shape plus an ordered layer stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: FeatureShape,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Fully-connected ReLU network, e.g. `mlp(&[784, 500, 300, 10])`.
    /// The last layer is linear: it produces logits.
    pub fn mlp(sizes: &[usize]) -> Self {
        let mut layers = Vec::new();
        for (i, pair) in sizes.windows(2).enumerate() {
            layers.push(LayerSpec::Dense {
                inputs: pair[0],
                outputs: pair[1],
            });
            if i + 2 < sizes.len() {
                layers.push(LayerSpec::Relu);
            }
        }
        Architecture {
            input: FeatureShape::flat(sizes.first().copied().unwrap_or(0)),
            layers,
        }
    }

    /// Small generic CNN: (conv5x5-relu-maxpool) x2, dense-relu, dense.
    pub fn small_cnn(input: FeatureShape, classes: usize) -> Self {
        let (c1, c2, hidden) = (16, 32, 64);
        let spatial = (input.height / 4) * (input.width / 4);
        Architecture {
            input,
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: input.channels,
                    out_channels: c1,
                    kernel: 5,
                    stride: 1,
                    padding: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Conv2d {
                    in_channels: c1,
                    out_channels: c2,
                    kernel: 5,
                    stride: 1,
                    padding: 2,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: c2 * spatial,
                    outputs: hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: hidden,
                    outputs: classes,
                },
            ],
        }
    }

    /// Activation shapes before the first layer and after every layer.
    pub fn shapes(&self) -> Result<Vec<FeatureShape>> {
        if self.input.is_empty() {
            return Err(Error::shape("empty input shape"));
        }
        let mut shapes = vec![self.input];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes[i])
                .map_err(|e| Error::shape(format!("layer {i} ({layer:?}): {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }
}
